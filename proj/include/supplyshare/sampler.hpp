#pragma once

// Adaptive random-walk Metropolis-within-Gibbs over the full posterior.
//
// Sweep order: alpha (scalar RW), deltas (scalar RW, or M-dimensional block
// RW preconditioned by the prior covariance), region and world means
// (conjugate normal draws), scale parameters (RW on log scale), then joint
// rescaling of each scale with the deviations below it. Step sizes
// follow a Robbins-Monro recursion during warmup and are frozen afterwards.
// Every chain owns its own generator seeded from (seed, chain index), so
// results do not depend on how chains are scheduled across threads.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "supplyshare/correlation.hpp"
#include "supplyshare/data_ingest.hpp"
#include "supplyshare/errors.hpp"
#include "supplyshare/latent.hpp"
#include "supplyshare/likelihood.hpp"
#include "supplyshare/model_core.hpp"

namespace supplyshare {

struct SamplerConfig {
    std::size_t n_chains = 4;
    std::size_t n_warmup = 2000;
    std::size_t n_samples = 2000;
    std::size_t thin = 1;
    std::uint64_t seed = 1;
    double target_accept = 0.44;        // scalar updates
    double target_accept_block = 0.234;  // delta block updates
    bool block_delta_updates = true;
    bool curve_updates = true;          // joint move of alpha and all differences of one curve
    std::size_t threads = 1;
    double init_jitter = 0.25;
    double init_sd = 0.3;
    double initial_step = 0.1;

    std::size_t draws_per_chain() const { return thin == 0 ? 0 : n_samples / thin; }
};

// Validates the configuration; returns non-fatal warnings.
inline std::vector<std::string> check_sampler_config(const SamplerConfig& cfg)
{
    if (cfg.n_chains < 1) throw ConfigError("n_chains must be >= 1");
    if (cfg.thin < 1) throw ConfigError("thin must be >= 1");
    if (cfg.n_samples < cfg.thin) throw ConfigError("n_samples must be >= thin");
    if (!(cfg.target_accept > 0.0 && cfg.target_accept < 1.0) ||
        !(cfg.target_accept_block > 0.0 && cfg.target_accept_block < 1.0))
        throw ConfigError("target acceptance rates must lie in (0, 1)");
    std::vector<std::string> warnings;
    if (cfg.n_chains < 2) warnings.emplace_back("fewer than 2 chains: convergence diagnostics unavailable");
    if (cfg.draws_per_chain() < 500)
        warnings.emplace_back("fewer than 500 retained draws per chain; summaries may be unstable");
    return warnings;
}

// Extra controls used by tests and by restricted runs.
struct RunOptions {
    std::optional<std::vector<double>> initial;  // start every chain here
    bool jitter_initial = true;
    std::vector<std::size_t> fixed;  // flat parameter indices held at their initial values
};

struct ChainDraws {
    std::size_t n_draws = 0;
    std::size_t n_params = 0;
    std::vector<double> values;      // row-major n_draws x n_params
    std::vector<double> acceptance;  // post-warmup acceptance per parameter; NaN if not a Metropolis site

    std::span<const double> draw(std::size_t i) const { return {values.data() + i * n_params, n_params}; }
    double at(std::size_t i, std::size_t p) const { return values[i * n_params + p]; }
};

struct PosteriorDraws {
    std::shared_ptr<const ModelStructure> structure;
    CorrelationMatrices rho;
    SamplerConfig config;
    std::vector<ChainDraws> chains;
    std::vector<std::string> warnings;
    std::string provenance;  // opaque tag carried into saved draws

    std::size_t parameter_count() const { return structure->layout->size(); }
    std::size_t total_draws() const
    {
        std::size_t n = 0;
        for (const auto& c : chains) n += c.n_draws;
        return n;
    }
    ParameterState state(std::size_t chain, std::size_t i) const
    {
        const auto d = chains[chain].draw(i);
        return ParameterState(structure->layout, {d.begin(), d.end()});
    }
    // Every draw of one scalar, chains concatenated.
    std::vector<double> pooled(std::size_t param) const
    {
        std::vector<double> out;
        out.reserve(total_draws());
        for (const auto& c : chains)
            for (std::size_t i = 0; i < c.n_draws; ++i) out.push_back(c.at(i, param));
        return out;
    }
};

// Share trajectory over the year grid for one stored draw.
inline std::vector<ShareTriple> phi_trajectory(const PosteriorDraws& d, std::size_t chain, std::size_t i,
                                               std::size_t c, std::size_t m)
{
    return d.structure->shares_on_grid(d.chains[chain].draw(i), c, m);
}

// Initial state: alpha from empirical logits of each country-method's most
// recent survey (region average, then 0, as fallbacks); zero differences;
// hierarchical means at their children's averages; scales at init_sd.
inline std::vector<double> initial_state(const Dataset& ds, const ModelStructure& ms, double init_sd)
{
    const auto& L = *ms.layout;
    const std::size_t C = L.countries(), M = L.methods();
    std::vector<double> x(L.size(), 0.0);
    std::vector<std::vector<std::optional<double>>> alpha(C * M, std::vector<std::optional<double>>(2));

    auto clamp_p = [](double p) { return std::clamp(p, 0.01, 0.99); };
    std::vector<double> last_year(C * M, -std::numeric_limits<double>::infinity());
    for (const auto& o : ds.observations)
        if (o.in_likelihood()) last_year[o.country * M + o.method] = std::max(last_year[o.country * M + o.method], o.year);
    for (std::size_t cell = 0; cell < C * M; ++cell) {
        std::optional<double> pub, med;
        for (const auto& o : ds.observations) {
            if (o.country * M + o.method != cell || o.year != last_year[cell]) continue;
            if (o.sector == Sector::public_sector) pub = o.proportion;
            if (o.sector == Sector::private_medical) med = o.proportion;
        }
        if (pub) alpha[cell][0] = logit(clamp_p(*pub));
        if (pub && med && *pub < 1.0) alpha[cell][1] = logit(clamp_p(*med / (1.0 - *pub)));
    }
    for (std::size_t s = 0; s < kModeledSectors; ++s)
        for (std::size_t m = 0; m < M; ++m) {
            std::vector<double> region_sum(L.regions(), 0.0);
            std::vector<std::size_t> region_n(L.regions(), 0);
            for (std::size_t c = 0; c < C; ++c)
                if (alpha[c * M + m][s]) {
                    region_sum[L.region_of(c)] += *alpha[c * M + m][s];
                    ++region_n[L.region_of(c)];
                }
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t r = L.region_of(c);
                const auto& a = alpha[c * M + m][s];
                x[L.alpha(c, m, s)] = a ? *a : (region_n[r] ? region_sum[r] / static_cast<double>(region_n[r]) : 0.0);
            }
            double world = 0.0;
            for (std::size_t r = 0; r < L.regions(); ++r) {
                double sum = 0.0;
                std::size_t n = 0;
                for (std::size_t c = 0; c < C; ++c)
                    if (L.region_of(c) == r) {
                        sum += x[L.alpha(c, m, s)];
                        ++n;
                    }
                x[L.theta_region(r, m, s)] = n ? sum / static_cast<double>(n) : 0.0;
                world += x[L.theta_region(r, m, s)];
            }
            x[L.theta_world(m, s)] = L.regions() ? world / static_cast<double>(L.regions()) : 0.0;
        }
    for (std::size_t i = L.sd_alpha(0); i < L.size(); ++i) x[i] = init_sd;
    return x;
}

namespace detail {

inline std::string dump_parameters(const ParameterLayout& L, std::span<const double> x)
{
    std::ostringstream os;
    std::size_t shown = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool bad = !std::isfinite(x[i]) || (L.is_scale(i) && !(x[i] > 0.0));
        if (bad || x.size() <= 40) {
            os << ' ' << L.name(i) << '=' << x[i];
            if (++shown >= 200) break;
        }
    }
    return os.str();
}

class ChainRunner {
public:
    ChainRunner(const ModelStructure& ms, const LikelihoodIndex& lik, const DeltaPrior& dprior,
                const CorrelationMatrices& rho, const PriorConfig& prior, const SamplerConfig& cfg,
                std::vector<double> x0, const std::vector<bool>& fixed, std::size_t chain)
        : ms_(ms), L_(*ms.layout), lik_(lik), dprior_(dprior), prior_(prior), cfg_(cfg), x_(std::move(x0)),
          fixed_(fixed)
    {
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(chain), 0x5eedu};
        rng_.seed(seq);

        const std::size_t M = L_.methods();
        for (std::size_t s = 0; s < kModeledSectors; ++s) {
            Eigen::LLT<Eigen::MatrixXd> llt(rho.rho[s]);
            rho_chol_[s] = llt.matrixL();
        }
        countries_in_region_.resize(L_.regions());
        for (std::size_t c = 0; c < L_.countries(); ++c) countries_in_region_[L_.region_of(c)].push_back(c);

        log_step_.assign(L_.size(), std::log(cfg.initial_step));
        visits_.assign(L_.size(), 0);
        accepted_.assign(L_.size(), 0);
        attempts_.assign(L_.size(), 0);
        metropolis_.assign(L_.size(), false);
        if (cfg.block_delta_updates) {
            for (std::size_t c = 0; c < L_.countries(); ++c)
                block_log_step_.emplace_back(kModeledSectors * L_.differences(c), std::log(cfg.initial_step));
            block_visits_.resize(block_log_step_.size());
            for (std::size_t c = 0; c < L_.countries(); ++c)
                block_visits_[c].assign(block_log_step_[c].size(), 0);
        }
        (void)M;
        if (cfg.curve_updates) {
            for (std::size_t c = 0; c < L_.countries(); ++c)
                for (std::size_t m = 0; m < L_.methods(); ++m)
                    for (std::size_t s = 0; s < kModeledSectors; ++s) {
                        Curve cv;
                        cv.c = c;
                        cv.m = m;
                        cv.s = s;
                        const std::size_t H = L_.differences(c);
                        if (!fixed_[L_.alpha(c, m, s)]) {
                            cv.idx.push_back(L_.alpha(c, m, s));
                            cv.slot.push_back(H);
                        }
                        for (std::size_t h = 0; h < H; ++h)
                            if (!fixed_[L_.delta(c, s, h, m)]) {
                                cv.idx.push_back(L_.delta(c, s, h, m));
                                cv.slot.push_back(h);
                            }
                        if (cv.idx.size() < 2) continue;
                        const auto d = static_cast<Eigen::Index>(cv.idx.size());
                        cv.mean = Eigen::VectorXd::Zero(d);
                        cv.m2 = Eigen::MatrixXd::Zero(d, d);
                        cv.log_scale = std::log(2.38 / std::sqrt(static_cast<double>(d)));
                        curves_.push_back(std::move(cv));
                    }
        }
        psi_.resize(lik_.items.size());
        ll_.resize(lik_.items.size());
        refresh();
    }

    void check_initial()
    {
        const double lp = log_prior(ParameterState(ms_.layout, x_), dprior_, prior_);
        double ll = 0.0;
        for (double v : ll_) ll += v;
        if (!std::isfinite(lp) || !std::isfinite(ll)) {
            std::ostringstream os;
            os << "non-finite log-posterior at initialization (log prior " << lp << ", log likelihood " << ll
               << "):" << dump_parameters(L_, x_);
            throw NumericalError(os.str());
        }
    }

    void sweep(bool adapt)
    {
        const std::size_t C = L_.countries(), M = L_.methods();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t m = 0; m < M; ++m)
                for (std::size_t s = 0; s < kModeledSectors; ++s) update_alpha(c, m, s, adapt);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t s = 0; s < kModeledSectors; ++s)
                for (std::size_t h = 0; h < L_.differences(c); ++h) {
                    bool block = cfg_.block_delta_updates;
                    if (block)
                        for (std::size_t m = 0; m < M; ++m)
                            if (fixed_[L_.delta(c, s, h, m)]) block = false;
                    if (block)
                        update_delta_block(c, s, h, adapt);
                    else
                        for (std::size_t m = 0; m < M; ++m) update_delta(c, s, h, m, adapt);
                }
        for (auto& cv : curves_) {
            if (cv.ready) update_curve(cv, adapt);
            if (adapt) learn_curve(cv);
        }
        for (std::size_t s = 0; s < kModeledSectors; ++s) {
            for (std::size_t r = 0; r < L_.regions(); ++r)
                for (std::size_t m = 0; m < M; ++m) gibbs_theta_region(r, m, s);
            for (std::size_t m = 0; m < M; ++m) gibbs_theta_world(m, s);
            update_scale(L_.sd_alpha(s), adapt, [&](double sd) { return alpha_level_logdensity(s, sd); });
            update_scale(L_.sd_theta(s), adapt, [&](double sd) { return region_level_logdensity(s, sd); });
            for (std::size_t m = 0; m < M; ++m)
                update_scale(L_.sd_delta(m, s), adapt, [&](double sd) { return delta_level_logdensity(m, s, sd); });
        }
        for (std::size_t s = 0; s < kModeledSectors; ++s) {
            rescale(L_.sd_alpha(s), s, adapt);
            rescale(L_.sd_theta(s), s, adapt);
            for (std::size_t m = 0; m < M; ++m) rescale(L_.sd_delta(m, s), s, adapt);
        }
        refresh();
    }

    void start_counting()
    {
        std::fill(accepted_.begin(), accepted_.end(), 0);
        std::fill(attempts_.begin(), attempts_.end(), 0);
    }

    std::vector<double> acceptance() const
    {
        std::vector<double> a(L_.size(), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t i = 0; i < a.size(); ++i)
            if (metropolis_[i] && attempts_[i] > 0)
                a[i] = static_cast<double>(accepted_[i]) / static_cast<double>(attempts_[i]);
        return a;
    }

    const std::vector<double>& state() const { return x_; }

private:
    double normal01() { return normal_(rng_); }
    double uniform01() { return uniform_(rng_); }

    bool accept(double log_ratio)
    {
        if (std::isnan(log_ratio)) throw NumericalError("non-finite log-posterior during sampling (divergence)");
        if (log_ratio >= 0.0) return true;
        return std::log(uniform01()) < log_ratio;
    }

    // Robbins-Monro on the log step size, stepping toward the target acceptance.
    static void adapt_step(double& log_step, std::size_t& visits, double log_ratio, double target)
    {
        const double p = std::isnan(log_ratio) ? 0.0 : std::min(1.0, std::exp(std::min(log_ratio, 0.0)));
        ++visits;
        const double gain = 1.0 / std::pow(static_cast<double>(visits) + 1.0, 0.6);
        log_step += 2.0 * gain * (p - target);
        log_step = std::clamp(log_step, -12.0, 4.0);
    }

    void record(std::size_t i, bool ok)
    {
        ++attempts_[i];
        if (ok) ++accepted_[i];
    }

    double log_posterior(const std::vector<double>& x, std::vector<std::array<double, 2>>& psi,
                         std::vector<double>& ll) const
    {
        double total = log_prior(ParameterState(ms_.layout, x), dprior_, prior_);
        for (std::size_t j = 0; j < lik_.items.size(); ++j) {
            const auto& o = lik_.items[j];
            psi[j][0] = design_latent(o.design, x, L_, o.country, o.method, 0);
            psi[j][1] = design_latent(o.design, x, L_, o.country, o.method, 1);
            ll[j] = obs_ll(j, psi[j][0], psi[j][1]);
            total += ll[j];
        }
        return total;
    }

    // Joint move of a scale parameter and the deviations it governs:
    // sd -> lambda sd and child -> centre + lambda (child - centre). This
    // moves along the funnel that single-site updates cross slowly.
    void rescale(std::size_t sd_index, std::size_t s, bool adapt)
    {
        if (fixed_[sd_index]) return;
        members_.clear();
        const std::size_t none = std::numeric_limits<std::size_t>::max();
        const auto kind = L_.kind(sd_index);
        if (kind == ParameterKind::sd_alpha) {
            for (std::size_t c = 0; c < L_.countries(); ++c)
                for (std::size_t m = 0; m < L_.methods(); ++m)
                    members_.push_back({L_.alpha(c, m, s), L_.theta_region(L_.region_of(c), m, s)});
        } else if (kind == ParameterKind::sd_theta) {
            for (std::size_t r = 0; r < L_.regions(); ++r)
                for (std::size_t m = 0; m < L_.methods(); ++m)
                    members_.push_back({L_.theta_region(r, m, s), L_.theta_world(m, s)});
        } else {
            const std::size_t m = sd_index - L_.sd_delta(0, s);
            for (std::size_t c = 0; c < L_.countries(); ++c)
                for (std::size_t h = 0; h < L_.differences(c); ++h) members_.push_back({L_.delta(c, s, h, m), none});
        }
        for (const auto& [i, centre] : members_)
            if (fixed_[i]) return;

        const std::size_t slot = sd_index - L_.sd_alpha(0);
        if (rescale_log_step_.empty()) {
            rescale_log_step_.assign(L_.size() - L_.sd_alpha(0), std::log(cfg_.initial_step));
            rescale_visits_.assign(rescale_log_step_.size(), 0);
        }
        const double log_lambda = std::exp(rescale_log_step_[slot]) * normal01();
        const double lambda = std::exp(log_lambda);

        double before = 0.0;
        for (double v : ll_) before += v;
        before += log_prior(ParameterState(ms_.layout, x_), dprior_, prior_);

        proposal_ = x_;
        proposal_[sd_index] *= lambda;
        for (const auto& [i, centre] : members_) {
            const double c = centre == none ? 0.0 : x_[centre];
            proposal_[i] = c + lambda * (x_[i] - c);
        }
        psi_prop_.resize(psi_.size());
        ll_prop_.resize(ll_.size());
        const double after = log_posterior(proposal_, psi_prop_, ll_prop_);
        // Jacobian: one factor lambda per moved child plus one for the log-scale step
        double lr = after - before + static_cast<double>(members_.size() + 1) * log_lambda;
        if (std::isinf(after) && after < 0.0) lr = -std::numeric_limits<double>::infinity();
        if (adapt) adapt_step(rescale_log_step_[slot], rescale_visits_[slot], lr, cfg_.target_accept);
        if (accept(lr)) {
            x_.swap(proposal_);
            psi_.swap(psi_prop_);
            ll_.swap(ll_prop_);
        }
    }

    void refresh()
    {
        for (std::size_t j = 0; j < lik_.items.size(); ++j) {
            const auto& o = lik_.items[j];
            psi_[j][0] = design_latent(o.design, x_, L_, o.country, o.method, 0);
            psi_[j][1] = design_latent(o.design, x_, L_, o.country, o.method, 1);
            ll_[j] = observation_loglik(o, psi_[j][0], psi_[j][1]);
        }
    }

    double obs_ll(std::size_t j, double p1, double p2) const
    {
        const auto& o = lik_.items[j];
        const auto phi = compose_shares(p1, p2);
        const double mu = o.sector == 0 ? phi.phi1 : phi.phi2;
        const double a = -mu / o.se, b = (1.0 - mu) / o.se;
        return normal_logpdf_std((o.y - mu) / o.se) - std::log(o.se) - log_normal_mass(a, b);
    }

    // Affected likelihood items move psi_s by weight * step; returns the change
    // in log-likelihood and stages the new values.
    template <class WeightFn>
    double stage_cell(std::size_t c, std::size_t m, std::size_t s, double step, WeightFn weight)
    {
        double diff = 0.0;
        for (std::size_t j : lik_.by_cell[c * L_.methods() + m]) {
            const auto& o = lik_.items[j];
            if (s == 1 && o.sector == 0) continue;  // public share does not depend on psi2
            const double w = weight(o);
            if (w == 0.0) continue;
            double p[2] = {psi_[j][0], psi_[j][1]};
            p[s] += w * step;
            const double ll = obs_ll(j, p[0], p[1]);
            staged_.push_back({j, p[0], p[1], ll});
            diff += ll - ll_[j];
        }
        return diff;
    }

    void commit_staged()
    {
        for (const auto& st : staged_) {
            psi_[st.item][0] = st.p1;
            psi_[st.item][1] = st.p2;
            ll_[st.item] = st.ll;
        }
        staged_.clear();
    }

    void update_alpha(std::size_t c, std::size_t m, std::size_t s, bool adapt)
    {
        const std::size_t i = L_.alpha(c, m, s);
        if (fixed_[i]) return;
        metropolis_[i] = true;
        const double cur = x_[i];
        const double step = std::exp(log_step_[i]) * normal01();
        const double prop = cur + step;
        const double mean = x_[L_.theta_region(L_.region_of(c), m, s)], sd = x_[L_.sd_alpha(s)];
        staged_.clear();
        double lr = stage_cell(c, m, s, step, [](const IndexedObservation& o) { return o.design.alpha_weight; });
        lr += normal_logpdf(prop, mean, sd) - normal_logpdf(cur, mean, sd);
        if (adapt) adapt_step(log_step_[i], visits_[i], lr, cfg_.target_accept);
        const bool ok = accept(lr);
        record(i, ok);
        if (ok) {
            x_[i] = prop;
            commit_staged();
        }
        staged_.clear();
    }

    void update_delta(std::size_t c, std::size_t s, std::size_t h, std::size_t m, bool adapt)
    {
        const std::size_t i = L_.delta(c, s, h, m);
        if (fixed_[i]) return;
        metropolis_[i] = true;
        const double step = std::exp(log_step_[i]) * normal01();
        const auto sds = std::span<const double>(x_.data() + L_.sd_delta(0, s), L_.methods());
        const std::span<const double> dvec(x_.data() + L_.delta(c, s, h, 0), L_.methods());
        const double before = dprior_.log_density(dvec, sds, s);
        staged_.clear();
        double lr = stage_cell(c, m, s, step, [h](const IndexedObservation& o) { return o.design.delta_weights[h]; });
        const double cur = x_[i];
        x_[i] = cur + step;
        lr += dprior_.log_density(dvec, sds, s) - before;
        if (adapt) adapt_step(log_step_[i], visits_[i], lr, cfg_.target_accept);
        const bool ok = accept(lr);
        record(i, ok);
        if (ok)
            commit_staged();
        else
            x_[i] = cur;
        staged_.clear();
    }

    void update_delta_block(std::size_t c, std::size_t s, std::size_t h, bool adapt)
    {
        const std::size_t M = L_.methods();
        double& log_step = block_log_step_[c][s * L_.differences(c) + h];
        std::size_t& visits = block_visits_[c][s * L_.differences(c) + h];
        const double scale = std::exp(log_step);
        std::vector<double> z(M), step(M, 0.0);
        for (auto& v : z) v = normal01();
        const auto& Lc = rho_chol_[s];
        for (std::size_t a = 0; a < M; ++a) {
            double acc = 0.0;
            for (std::size_t b = 0; b <= a; ++b) acc += Lc(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * z[b];
            step[a] = scale * x_[L_.sd_delta(a, s)] * acc;
        }
        const auto sds = std::span<const double>(x_.data() + L_.sd_delta(0, s), M);
        const std::span<const double> dvec(x_.data() + L_.delta(c, s, h, 0), M);
        const double before = dprior_.log_density(dvec, sds, s);
        staged_.clear();
        double lr = 0.0;
        for (std::size_t m = 0; m < M; ++m)
            lr += stage_cell(c, m, s, step[m], [h](const IndexedObservation& o) { return o.design.delta_weights[h]; });
        std::vector<double> saved(dvec.begin(), dvec.end());
        for (std::size_t m = 0; m < M; ++m) x_[L_.delta(c, s, h, m)] += step[m];
        lr += dprior_.log_density(dvec, sds, s) - before;
        if (adapt) adapt_step(log_step, visits, lr, cfg_.target_accept_block);
        const bool ok = accept(lr);
        for (std::size_t m = 0; m < M; ++m) {
            metropolis_[L_.delta(c, s, h, m)] = true;
            record(L_.delta(c, s, h, m), ok);
        }
        if (ok)
            commit_staged();
        else
            for (std::size_t m = 0; m < M; ++m) x_[L_.delta(c, s, h, m)] = saved[m];
        staged_.clear();
    }

    // Adaptive Metropolis on (alpha, delta_0..delta_{H-1}) of one curve. The
    // proposal covariance is the running covariance of warmup states and is
    // frozen once warmup ends.
    struct Curve {
        std::size_t c = 0, m = 0, s = 0;
        std::vector<std::size_t> idx, slot;  // slot: difference h, or H for alpha
        Eigen::VectorXd mean;
        Eigen::MatrixXd m2, chol;
        std::size_t n = 0, visits = 0;
        double log_scale = 0.0;
        bool ready = false;
    };

    void learn_curve(Curve& cv)
    {
        const auto d = static_cast<Eigen::Index>(cv.idx.size());
        Eigen::VectorXd v(d);
        for (Eigen::Index k = 0; k < d; ++k) v[k] = x_[cv.idx[static_cast<std::size_t>(k)]];
        ++cv.n;
        const Eigen::VectorXd dx = v - cv.mean;
        cv.mean += dx / static_cast<double>(cv.n);
        cv.m2 += dx * (v - cv.mean).transpose();
        const std::size_t min_n = std::max<std::size_t>(100, 10 * cv.idx.size());
        if (cv.n < min_n || cv.n % 50 != 0) return;
        Eigen::MatrixXd cov = cv.m2 / static_cast<double>(cv.n - 1);
        const double floor = 1e-6 * std::max(1e-12, cov.diagonal().mean());
        cov.diagonal().array() += floor;
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) return;
        cv.chol = llt.matrixL();
        cv.ready = true;
    }

    void update_curve(Curve& cv, bool adapt)
    {
        const std::size_t c = cv.c, m = cv.m, s = cv.s, M = L_.methods(), H = L_.differences(c);
        const auto d = static_cast<Eigen::Index>(cv.idx.size());
        Eigen::VectorXd z(d);
        for (Eigen::Index k = 0; k < d; ++k) z[k] = normal01();
        const Eigen::VectorXd step = std::exp(cv.log_scale) * (cv.chol * z);

        const std::size_t ia = L_.alpha(c, m, s);
        double da = 0.0;
        curve_dd_.assign(H, 0.0);
        for (Eigen::Index k = 0; k < d; ++k) {
            const std::size_t h = cv.slot[static_cast<std::size_t>(k)];
            (h == H ? da : curve_dd_[h]) = step[k];
        }
        curve_saved_.resize(cv.idx.size());
        for (std::size_t k = 0; k < cv.idx.size(); ++k) curve_saved_[k] = x_[cv.idx[k]];

        staged_.clear();
        double lr = stage_cell(c, m, s, 1.0, [&](const IndexedObservation& o) {
            double w = o.design.alpha_weight * da;
            for (std::size_t h = 0; h < H; ++h) w += o.design.delta_weights[h] * curve_dd_[h];
            return w;
        });
        if (da != 0.0) {
            const double mean = x_[L_.theta_region(L_.region_of(c), m, s)], sd = x_[L_.sd_alpha(s)];
            lr += normal_logpdf(x_[ia] + da, mean, sd) - normal_logpdf(x_[ia], mean, sd);
        }
        const auto sds = std::span<const double>(x_.data() + L_.sd_delta(0, s), M);
        for (std::size_t h = 0; h < H; ++h) {
            if (curve_dd_[h] == 0.0) continue;
            const std::span<const double> dvec(x_.data() + L_.delta(c, s, h, 0), M);
            const double before = dprior_.log_density(dvec, sds, s);
            x_[L_.delta(c, s, h, m)] += curve_dd_[h];
            lr += dprior_.log_density(dvec, sds, s) - before;
        }
        if (adapt) adapt_step(cv.log_scale, cv.visits, lr, cfg_.target_accept_block);
        if (accept(lr)) {
            x_[ia] += da;
            commit_staged();
        } else {
            for (std::size_t k = 0; k < cv.idx.size(); ++k) x_[cv.idx[k]] = curve_saved_[k];
        }
        staged_.clear();
    }

    void gibbs_theta_region(std::size_t r, std::size_t m, std::size_t s)
    {
        const std::size_t i = L_.theta_region(r, m, s);
        if (fixed_[i]) return;
        const double sa = x_[L_.sd_alpha(s)], st = x_[L_.sd_theta(s)];
        double prec = 1.0 / (st * st);
        double num = x_[L_.theta_world(m, s)] / (st * st);
        for (std::size_t c : countries_in_region_[r]) {
            prec += 1.0 / (sa * sa);
            num += x_[L_.alpha(c, m, s)] / (sa * sa);
        }
        x_[i] = num / prec + normal01() / std::sqrt(prec);
    }

    void gibbs_theta_world(std::size_t m, std::size_t s)
    {
        const std::size_t i = L_.theta_world(m, s);
        if (fixed_[i]) return;
        const double st = x_[L_.sd_theta(s)];
        double prec = 1.0 / prior_.theta_world_variance;
        double num = 0.0;
        for (std::size_t r = 0; r < L_.regions(); ++r) {
            prec += 1.0 / (st * st);
            num += x_[L_.theta_region(r, m, s)] / (st * st);
        }
        x_[i] = num / prec + normal01() / std::sqrt(prec);
    }

    double alpha_level_logdensity(std::size_t s, double sd) const
    {
        double lp = 0.0;
        for (std::size_t c = 0; c < L_.countries(); ++c)
            for (std::size_t m = 0; m < L_.methods(); ++m)
                lp += normal_logpdf(x_[L_.alpha(c, m, s)], x_[L_.theta_region(L_.region_of(c), m, s)], sd);
        return lp;
    }

    double region_level_logdensity(std::size_t s, double sd) const
    {
        double lp = 0.0;
        for (std::size_t r = 0; r < L_.regions(); ++r)
            for (std::size_t m = 0; m < L_.methods(); ++m)
                lp += normal_logpdf(x_[L_.theta_region(r, m, s)], x_[L_.theta_world(m, s)], sd);
        return lp;
    }

    double delta_level_logdensity(std::size_t m, std::size_t s, double sd)
    {
        const std::size_t M = L_.methods();
        std::vector<double> sds(x_.begin() + static_cast<std::ptrdiff_t>(L_.sd_delta(0, s)),
                                x_.begin() + static_cast<std::ptrdiff_t>(L_.sd_delta(0, s) + M));
        sds[m] = sd;
        double lp = 0.0;
        for (std::size_t c = 0; c < L_.countries(); ++c)
            for (std::size_t h = 0; h < L_.differences(c); ++h)
                lp += dprior_.log_density(std::span<const double>(x_.data() + L_.delta(c, s, h, 0), M), sds, s);
        return lp;
    }

    template <class Level>
    void update_scale(std::size_t i, bool adapt, Level level)
    {
        if (fixed_[i]) return;
        metropolis_[i] = true;
        const double cur = x_[i];
        const double prop = cur * std::exp(std::exp(log_step_[i]) * normal01());
        // log-scale random walk: target in log sd carries the Jacobian sd
        double lr = level(prop) - level(cur);
        lr += scale_logprior(prop, prior_) - scale_logprior(cur, prior_);
        lr += std::log(prop) - std::log(cur);
        if (!(prop > 0.0) || !std::isfinite(prop)) lr = -std::numeric_limits<double>::infinity();
        if (adapt) adapt_step(log_step_[i], visits_[i], lr, cfg_.target_accept);
        const bool ok = accept(lr);
        record(i, ok);
        if (ok) x_[i] = prop;
    }

    struct Staged {
        std::size_t item;
        double p1, p2, ll;
    };

    const ModelStructure& ms_;
    const ParameterLayout& L_;
    const LikelihoodIndex& lik_;
    const DeltaPrior& dprior_;
    const PriorConfig& prior_;
    const SamplerConfig& cfg_;
    std::vector<double> x_;
    const std::vector<bool>& fixed_;

    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};

    std::array<Eigen::MatrixXd, kModeledSectors> rho_chol_;
    std::vector<std::vector<std::size_t>> countries_in_region_;
    std::vector<double> log_step_;
    std::vector<std::size_t> visits_;
    std::vector<std::size_t> accepted_, attempts_;
    std::vector<bool> metropolis_;
    std::vector<std::vector<double>> block_log_step_;
    std::vector<std::vector<std::size_t>> block_visits_;

    std::vector<std::array<double, 2>> psi_;
    std::vector<double> ll_;
    std::vector<Staged> staged_;

    std::vector<std::pair<std::size_t, std::size_t>> members_;
    std::vector<double> rescale_log_step_;
    std::vector<std::size_t> rescale_visits_;
    std::vector<double> proposal_;
    std::vector<std::array<double, 2>> psi_prop_;
    std::vector<double> ll_prop_;

    std::vector<Curve> curves_;
    std::vector<double> curve_dd_, curve_saved_;
};

inline std::vector<double> jitter_state(const ParameterLayout& L, std::vector<double> x, double sd,
                                        std::uint64_t seed, std::size_t chain, const std::vector<bool>& fixed)
{
    if (sd <= 0.0) return x;
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(chain), 0x1a17u};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = n01(rng);
        if (fixed[i]) continue;
        const auto kind = L.kind(i);
        if (kind == ParameterKind::alpha || kind == ParameterKind::theta_region || kind == ParameterKind::theta_world)
            x[i] += sd * e;
        else if (L.is_scale(i))
            x[i] *= std::exp(sd * e);
    }
    return x;
}

}  // namespace detail

inline PosteriorDraws run_mcmc(const Dataset& ds, std::shared_ptr<const ModelStructure> ms,
                               const CorrelationMatrices& rho, const PriorConfig& prior, const SamplerConfig& cfg,
                               const RunOptions& opts = {})
{
    PosteriorDraws out;
    out.warnings = check_sampler_config(cfg);
    out.structure = ms;
    out.rho = rho;
    out.config = cfg;

    const auto& L = *ms->layout;
    if (rho.methods() != L.methods()) throw ValidationError("correlation matrices do not match the method count");
    const DeltaPrior dprior(rho);
    const LikelihoodIndex lik = index_likelihood(ds, *ms);

    std::vector<bool> fixed(L.size(), false);
    for (std::size_t i : opts.fixed) {
        if (i >= L.size()) throw ValidationError("fixed parameter index out of range");
        fixed[i] = true;
    }
    std::vector<double> base = opts.initial ? *opts.initial : initial_state(ds, *ms, cfg.init_sd);
    if (base.size() != L.size()) throw ValidationError("initial state has the wrong size");

    out.chains.resize(cfg.n_chains);
    std::vector<std::exception_ptr> errors(cfg.n_chains);
    auto run_chain = [&](std::size_t chain) {
        try {
            auto x0 = base;
            if (!opts.initial || opts.jitter_initial)
                x0 = detail::jitter_state(L, std::move(x0), cfg.init_jitter, cfg.seed, chain, fixed);
            detail::ChainRunner runner(*ms, lik, dprior, rho, prior, cfg, std::move(x0), fixed, chain);
            runner.check_initial();
            for (std::size_t it = 0; it < cfg.n_warmup; ++it) runner.sweep(true);
            runner.start_counting();
            ChainDraws& cd = out.chains[chain];
            cd.n_params = L.size();
            cd.n_draws = cfg.draws_per_chain();
            cd.values.reserve(cd.n_draws * cd.n_params);
            for (std::size_t it = 1; it <= cd.n_draws * cfg.thin; ++it) {
                runner.sweep(false);
                if (it % cfg.thin == 0) {
                    const auto& x = runner.state();
                    cd.values.insert(cd.values.end(), x.begin(), x.end());
                }
            }
            cd.acceptance = runner.acceptance();
        } catch (...) {
            errors[chain] = std::current_exception();
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.threads, cfg.n_chains));
    if (workers == 1) {
        for (std::size_t c = 0; c < cfg.n_chains; ++c) run_chain(c);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t c = next++; c < cfg.n_chains; c = next++) run_chain(c);
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace supplyshare
