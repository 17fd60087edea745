#pragma once

// Latent process model: parameter layout and state, coefficient
// reconstruction from first-order differences, latent curves, the
// compositional transform and the joint log-prior with its gradient.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "supplyshare/correlation.hpp"
#include "supplyshare/data_ingest.hpp"
#include "supplyshare/errors.hpp"

namespace supplyshare {

struct ModelDimensions {
    std::size_t methods = 0;
    std::size_t regions = 0;
    std::vector<std::size_t> region_of;    // per country
    std::vector<std::size_t> differences;  // per country: K_c - 1 (1 for the linear model)

    std::size_t countries() const { return region_of.size(); }
};

enum class ParameterKind { alpha, delta, theta_region, theta_world, sd_alpha, sd_theta, sd_delta };

// Flat index map for every latent scalar. Differences are stored with the
// method index innermost so delta(c, s, h, 0..M-1) is contiguous.
class ParameterLayout {
public:
    explicit ParameterLayout(ModelDimensions dims) : dims_(std::move(dims))
    {
        if (dims_.differences.size() != dims_.countries())
            throw ValidationError("ParameterLayout: differences must be given per country");
        for (std::size_t r : dims_.region_of)
            if (r >= dims_.regions) throw ValidationError("ParameterLayout: region index out of range");
        const std::size_t M = dims_.methods, S = kModeledSectors;
        std::size_t off = 0;
        alpha_ = off;
        off += dims_.countries() * M * S;
        delta_.resize(dims_.countries());
        for (std::size_t c = 0; c < dims_.countries(); ++c) {
            delta_[c] = off;
            off += S * dims_.differences[c] * M;
        }
        theta_r_ = off;
        off += dims_.regions * M * S;
        theta_w_ = off;
        off += M * S;
        sd_alpha_ = off;
        off += S;
        sd_theta_ = off;
        off += S;
        sd_delta_ = off;
        off += S * M;
        size_ = off;
    }

    const ModelDimensions& dims() const { return dims_; }
    std::size_t size() const { return size_; }
    std::size_t countries() const { return dims_.countries(); }
    std::size_t regions() const { return dims_.regions; }
    std::size_t methods() const { return dims_.methods; }
    std::size_t differences(std::size_t c) const { return dims_.differences[c]; }
    std::size_t region_of(std::size_t c) const { return dims_.region_of[c]; }

    std::size_t alpha(std::size_t c, std::size_t m, std::size_t s) const
    {
        return alpha_ + (c * dims_.methods + m) * kModeledSectors + s;
    }
    std::size_t delta(std::size_t c, std::size_t s, std::size_t h, std::size_t m) const
    {
        return delta_[c] + (s * dims_.differences[c] + h) * dims_.methods + m;
    }
    std::size_t theta_region(std::size_t r, std::size_t m, std::size_t s) const
    {
        return theta_r_ + (r * dims_.methods + m) * kModeledSectors + s;
    }
    std::size_t theta_world(std::size_t m, std::size_t s) const { return theta_w_ + m * kModeledSectors + s; }
    std::size_t sd_alpha(std::size_t s) const { return sd_alpha_ + s; }
    std::size_t sd_theta(std::size_t s) const { return sd_theta_ + s; }
    std::size_t sd_delta(std::size_t m, std::size_t s) const { return sd_delta_ + s * dims_.methods + m; }

    ParameterKind kind(std::size_t i) const
    {
        if (i < delta_begin()) return ParameterKind::alpha;
        if (i < theta_r_) return ParameterKind::delta;
        if (i < theta_w_) return ParameterKind::theta_region;
        if (i < sd_alpha_) return ParameterKind::theta_world;
        if (i < sd_theta_) return ParameterKind::sd_alpha;
        if (i < sd_delta_) return ParameterKind::sd_theta;
        return ParameterKind::sd_delta;
    }

    bool is_scale(std::size_t i) const { return i >= sd_alpha_; }

    // e.g. "delta[2,0,5,1]" with indices in declaration order (c,s,h,m).
    std::string name(std::size_t i) const
    {
        const std::size_t M = dims_.methods, S = kModeledSectors;
        auto fmt = [](const char* base, std::initializer_list<std::size_t> idx) {
            std::string out = base;
            out += '[';
            bool first = true;
            for (auto v : idx) {
                if (!first) out += ',';
                out += std::to_string(v);
                first = false;
            }
            return out + ']';
        };
        switch (kind(i)) {
        case ParameterKind::alpha: {
            const std::size_t k = i - alpha_;
            return fmt("alpha", {k / (M * S), (k / S) % M, k % S});
        }
        case ParameterKind::delta: {
            std::size_t c = 0;
            while (c + 1 < delta_.size() && delta_[c + 1] <= i) ++c;
            const std::size_t k = i - delta_[c], H = dims_.differences[c];
            return fmt("delta", {c, k / (H * M), (k / M) % H, k % M});
        }
        case ParameterKind::theta_region: {
            const std::size_t k = i - theta_r_;
            return fmt("theta_region", {k / (M * S), (k / S) % M, k % S});
        }
        case ParameterKind::theta_world: {
            const std::size_t k = i - theta_w_;
            return fmt("theta_world", {k / S, k % S});
        }
        case ParameterKind::sd_alpha: return fmt("sd_alpha", {i - sd_alpha_});
        case ParameterKind::sd_theta: return fmt("sd_theta", {i - sd_theta_});
        case ParameterKind::sd_delta: {
            const std::size_t k = i - sd_delta_;
            return fmt("sd_delta", {k % M, k / M});
        }
        }
        return {};
    }

private:
    std::size_t delta_begin() const { return delta_.empty() ? theta_r_ : delta_[0]; }

    ModelDimensions dims_;
    std::size_t alpha_ = 0, theta_r_ = 0, theta_w_ = 0, sd_alpha_ = 0, sd_theta_ = 0, sd_delta_ = 0, size_ = 0;
    std::vector<std::size_t> delta_;
};

// One full assignment of the latent parameters. Copies share the layout.
class ParameterState {
public:
    explicit ParameterState(std::shared_ptr<const ParameterLayout> layout)
        : layout_(std::move(layout)), values_(layout_->size(), 0.0)
    {
    }
    ParameterState(std::shared_ptr<const ParameterLayout> layout, std::vector<double> values)
        : layout_(std::move(layout)), values_(std::move(values))
    {
        if (values_.size() != layout_->size()) throw ValidationError("ParameterState: value count mismatch");
    }

    const ParameterLayout& layout() const { return *layout_; }
    const std::shared_ptr<const ParameterLayout>& layout_ptr() const { return layout_; }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& alpha(std::size_t c, std::size_t m, std::size_t s) { return values_[layout_->alpha(c, m, s)]; }
    double alpha(std::size_t c, std::size_t m, std::size_t s) const { return values_[layout_->alpha(c, m, s)]; }
    double& delta(std::size_t c, std::size_t s, std::size_t h, std::size_t m)
    {
        return values_[layout_->delta(c, s, h, m)];
    }
    double delta(std::size_t c, std::size_t s, std::size_t h, std::size_t m) const
    {
        return values_[layout_->delta(c, s, h, m)];
    }
    // delta(c, s, h, ·) across methods.
    std::span<const double> delta_vector(std::size_t c, std::size_t s, std::size_t h) const
    {
        return {values_.data() + layout_->delta(c, s, h, 0), layout_->methods()};
    }
    double& theta_region(std::size_t r, std::size_t m, std::size_t s)
    {
        return values_[layout_->theta_region(r, m, s)];
    }
    double theta_region(std::size_t r, std::size_t m, std::size_t s) const
    {
        return values_[layout_->theta_region(r, m, s)];
    }
    double& theta_world(std::size_t m, std::size_t s) { return values_[layout_->theta_world(m, s)]; }
    double theta_world(std::size_t m, std::size_t s) const { return values_[layout_->theta_world(m, s)]; }
    double& sd_alpha(std::size_t s) { return values_[layout_->sd_alpha(s)]; }
    double sd_alpha(std::size_t s) const { return values_[layout_->sd_alpha(s)]; }
    double& sd_theta(std::size_t s) { return values_[layout_->sd_theta(s)]; }
    double sd_theta(std::size_t s) const { return values_[layout_->sd_theta(s)]; }
    double& sd_delta(std::size_t m, std::size_t s) { return values_[layout_->sd_delta(m, s)]; }
    double sd_delta(std::size_t m, std::size_t s) const { return values_[layout_->sd_delta(m, s)]; }
    std::span<const double> sd_delta_vector(std::size_t s) const
    {
        return {values_.data() + layout_->sd_delta(0, s), layout_->methods()};
    }

private:
    std::shared_ptr<const ParameterLayout> layout_;
    std::vector<double> values_;
};

// --- coefficients and latent curves -------------------------------------------

// Spline coefficients from the reference coefficient and first-order
// differences; k_star is 0-based. beta[k_star] == alpha and
// beta[k+1] - beta[k] == deltas[k].
inline void reconstruct_betas(double alpha, std::span<const double> deltas, std::size_t k_star, std::span<double> beta)
{
    if (beta.size() != deltas.size() + 1)
        throw ValidationError("reconstruct_betas: need K coefficients for K-1 differences");
    if (k_star >= beta.size()) throw ValidationError("reconstruct_betas: reference index out of range");
    beta[k_star] = alpha;
    for (std::size_t k = k_star; k-- > 0;) beta[k] = beta[k + 1] - deltas[k];
    for (std::size_t k = k_star + 1; k < beta.size(); ++k) beta[k] = beta[k - 1] + deltas[k - 1];
}

inline std::vector<double> reconstruct_betas(double alpha, std::span<const double> deltas, std::size_t k_star)
{
    std::vector<double> beta(deltas.size() + 1);
    reconstruct_betas(alpha, deltas, k_star, beta);
    return beta;
}

inline std::vector<double> latent_curve(std::span<const double> beta, const Eigen::MatrixXd& basis)
{
    if (static_cast<std::size_t>(basis.cols()) != beta.size())
        throw ValidationError("latent_curve: basis has " + std::to_string(basis.cols()) + " columns, beta has " +
                              std::to_string(beta.size()));
    const Eigen::Map<const Eigen::VectorXd> b(beta.data(), static_cast<Eigen::Index>(beta.size()));
    const Eigen::VectorXd psi = basis * b;
    return {psi.data(), psi.data() + psi.size()};
}

// --- compositional transform ------------------------------------------------------

inline double inv_logit(double x)
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

struct ShareTriple {
    double phi1 = 0.0;  // public
    double phi2 = 0.0;  // private commercial medical
    double phi3 = 0.0;  // other private

    double operator[](std::size_t s) const { return s == 0 ? phi1 : (s == 1 ? phi2 : phi3); }
};

// psi1 = logit(phi1), psi2 = logit(phi2 / (1 - phi1)). The third share is
// formed as (1 - phi1)(1 - inv_logit(psi2)), which equals 1 - phi1 - phi2
// without cancellation.
inline ShareTriple compose_shares(double psi1, double psi2)
{
    const double p1 = inv_logit(psi1);
    const double rest = inv_logit(-psi1);
    return {p1, rest * inv_logit(psi2), rest * inv_logit(-psi2)};
}

// --- priors ---------------------------------------------------------------------

enum class ScalePriorPlacement {
    standard_deviation,  // half-Cauchy on sd
    variance,            // half-Cauchy on sd^2, with the change-of-variables term
};

struct PriorConfig {
    double theta_world_variance = 100.0;
    double half_cauchy_scale = 1.0;
    ScalePriorPlacement placement = ScalePriorPlacement::standard_deviation;
};

namespace detail {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double normal_logpdf(double x, double mean, double sd)
{
    const double z = (x - mean) / sd;
    return -kLogSqrt2Pi - std::log(sd) - 0.5 * z * z;
}

inline double half_cauchy_logpdf(double x, double scale)
{
    const double u = x / scale;
    return std::log(2.0 / std::numbers::pi) - std::log(scale) - std::log1p(u * u);
}

inline double scale_logprior(double sd, const PriorConfig& cfg)
{
    if (cfg.placement == ScalePriorPlacement::standard_deviation) return half_cauchy_logpdf(sd, cfg.half_cauchy_scale);
    return half_cauchy_logpdf(sd * sd, cfg.half_cauchy_scale) + std::log(2.0 * sd);
}

inline double scale_logprior_deriv(double sd, const PriorConfig& cfg)
{
    const double a2 = cfg.half_cauchy_scale * cfg.half_cauchy_scale;
    if (cfg.placement == ScalePriorPlacement::standard_deviation) return -2.0 * sd / (a2 + sd * sd);
    const double v = sd * sd;
    return -4.0 * v * sd / (a2 + v * v) + 1.0 / sd;
}

}  // namespace detail

// Zero-mean multivariate normal on delta(c, s, h, ·) with covariance
// D rho_s D, D = diag(sd_delta(·, s)). The precision of rho_s and its
// log-determinant are factored once.
class DeltaPrior {
public:
    explicit DeltaPrior(const CorrelationMatrices& rho)
    {
        for (std::size_t s = 0; s < kModeledSectors; ++s) {
            validate_correlation(rho.rho[s]);
            Eigen::LLT<Eigen::MatrixXd> llt(rho.rho[s]);
            if (llt.info() != Eigen::Success)
                throw NumericalError("correlation matrix for sector " + std::string(kSectorLabels[s]) +
                                     " is not positive definite");
            const Eigen::MatrixXd L = llt.matrixL();
            for (Eigen::Index i = 0; i < L.rows(); ++i)
                if (!(L(i, i) > 0.0) || !std::isfinite(L(i, i)))
                    throw NumericalError("correlation matrix is numerically singular");
            log_det_[s] = 2.0 * L.diagonal().array().log().sum();
            precision_[s] = llt.solve(Eigen::MatrixXd::Identity(rho.rho[s].rows(), rho.rho[s].cols()));
            precision_[s] = 0.5 * (precision_[s] + precision_[s].transpose()).eval();
        }
        methods_ = rho.methods();
    }

    std::size_t methods() const { return methods_; }
    const Eigen::MatrixXd& precision(std::size_t s) const { return precision_[s]; }

    double log_density(std::span<const double> delta, std::span<const double> sds, std::size_t s) const
    {
        const std::size_t M = methods_;
        double z[64];
        std::vector<double> zbuf;
        double* zp = z;
        if (M > 64) {
            zbuf.resize(M);
            zp = zbuf.data();
        }
        double log_sd = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            zp[i] = delta[i] / sds[i];
            log_sd += std::log(sds[i]);
        }
        const auto& P = precision_[s];
        double quad = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < M; ++j)
                row += P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * zp[j];
            quad += zp[i] * row;
        }
        return -static_cast<double>(M) * detail::kLogSqrt2Pi - log_sd - 0.5 * log_det_[s] - 0.5 * quad;
    }

    // Accumulates d/d delta and d/d sd of log_density into the given spans.
    void add_gradient(std::span<const double> delta, std::span<const double> sds, std::size_t s,
                      std::span<double> g_delta, std::span<double> g_sd) const
    {
        const std::size_t M = methods_;
        std::vector<double> z(M);
        for (std::size_t i = 0; i < M; ++i) z[i] = delta[i] / sds[i];
        const auto& P = precision_[s];
        for (std::size_t i = 0; i < M; ++i) {
            double pz = 0.0;
            for (std::size_t j = 0; j < M; ++j)
                pz += P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * z[j];
            g_delta[i] += -pz / sds[i];
            g_sd[i] += (-1.0 + pz * z[i]) / sds[i];
        }
    }

private:
    std::size_t methods_ = 0;
    std::array<Eigen::MatrixXd, kModeledSectors> precision_;
    std::array<double, kModeledSectors> log_det_{};
};

namespace detail {

inline bool scales_positive(const ParameterState& st)
{
    const auto& L = st.layout();
    for (std::size_t i = L.sd_alpha(0); i < L.size(); ++i)
        if (!(st[i] > 0.0)) return false;
    return true;
}

// Everything except the difference prior.
inline double log_prior_hierarchy(const ParameterState& st, const PriorConfig& hyper)
{
    const auto& L = st.layout();
    const std::size_t M = L.methods();
    double lp = 0.0;
    for (std::size_t s = 0; s < kModeledSectors; ++s) {
        for (std::size_t c = 0; c < L.countries(); ++c)
            for (std::size_t m = 0; m < M; ++m)
                lp += normal_logpdf(st.alpha(c, m, s), st.theta_region(L.region_of(c), m, s), st.sd_alpha(s));
        for (std::size_t r = 0; r < L.regions(); ++r)
            for (std::size_t m = 0; m < M; ++m)
                lp += normal_logpdf(st.theta_region(r, m, s), st.theta_world(m, s), st.sd_theta(s));
        const double sd_w = std::sqrt(hyper.theta_world_variance);
        for (std::size_t m = 0; m < M; ++m) lp += normal_logpdf(st.theta_world(m, s), 0.0, sd_w);
        lp += scale_logprior(st.sd_alpha(s), hyper);
        lp += scale_logprior(st.sd_theta(s), hyper);
        for (std::size_t m = 0; m < M; ++m) lp += scale_logprior(st.sd_delta(m, s), hyper);
    }
    return lp;
}

}  // namespace detail

inline double log_prior(const ParameterState& st, const DeltaPrior& delta_prior, const PriorConfig& hyper)
{
    if (!detail::scales_positive(st)) return -std::numeric_limits<double>::infinity();
    const auto& L = st.layout();
    double lp = detail::log_prior_hierarchy(st, hyper);
    for (std::size_t s = 0; s < kModeledSectors; ++s) {
        const auto sds = st.sd_delta_vector(s);
        for (std::size_t c = 0; c < L.countries(); ++c)
            for (std::size_t h = 0; h < L.differences(c); ++h)
                lp += delta_prior.log_density(st.delta_vector(c, s, h), sds, s);
    }
    return lp;
}

inline double log_prior(const ParameterState& st, const CorrelationMatrices& rho, const PriorConfig& hyper)
{
    return log_prior(st, DeltaPrior(rho), hyper);
}

// Difference prior with zero cross-method covariance, written as independent
// univariate normals.
inline double log_prior_zero_covariance(const ParameterState& st, const PriorConfig& hyper)
{
    if (!detail::scales_positive(st)) return -std::numeric_limits<double>::infinity();
    const auto& L = st.layout();
    double lp = detail::log_prior_hierarchy(st, hyper);
    for (std::size_t s = 0; s < kModeledSectors; ++s)
        for (std::size_t c = 0; c < L.countries(); ++c)
            for (std::size_t h = 0; h < L.differences(c); ++h)
                for (std::size_t m = 0; m < L.methods(); ++m)
                    lp += detail::normal_logpdf(st.delta(c, s, h, m), 0.0, st.sd_delta(m, s));
    return lp;
}

inline std::vector<double> log_prior_gradient(const ParameterState& st, const DeltaPrior& delta_prior,
                                              const PriorConfig& hyper)
{
    const auto& L = st.layout();
    const std::size_t M = L.methods();
    std::vector<double> g(L.size(), 0.0);
    for (std::size_t s = 0; s < kModeledSectors; ++s) {
        const double sa = st.sd_alpha(s), sr = st.sd_theta(s);
        for (std::size_t c = 0; c < L.countries(); ++c)
            for (std::size_t m = 0; m < M; ++m) {
                const std::size_t r = L.region_of(c);
                const double e = st.alpha(c, m, s) - st.theta_region(r, m, s);
                g[L.alpha(c, m, s)] -= e / (sa * sa);
                g[L.theta_region(r, m, s)] += e / (sa * sa);
                g[L.sd_alpha(s)] += -1.0 / sa + e * e / (sa * sa * sa);
            }
        for (std::size_t r = 0; r < L.regions(); ++r)
            for (std::size_t m = 0; m < M; ++m) {
                const double e = st.theta_region(r, m, s) - st.theta_world(m, s);
                g[L.theta_region(r, m, s)] -= e / (sr * sr);
                g[L.theta_world(m, s)] += e / (sr * sr);
                g[L.sd_theta(s)] += -1.0 / sr + e * e / (sr * sr * sr);
            }
        for (std::size_t m = 0; m < M; ++m)
            g[L.theta_world(m, s)] -= st.theta_world(m, s) / hyper.theta_world_variance;
        g[L.sd_alpha(s)] += detail::scale_logprior_deriv(sa, hyper);
        g[L.sd_theta(s)] += detail::scale_logprior_deriv(sr, hyper);
        for (std::size_t m = 0; m < M; ++m)
            g[L.sd_delta(m, s)] += detail::scale_logprior_deriv(st.sd_delta(m, s), hyper);

        const auto sds = st.sd_delta_vector(s);
        std::span<double> g_sd(g.data() + L.sd_delta(0, s), M);
        for (std::size_t c = 0; c < L.countries(); ++c)
            for (std::size_t h = 0; h < L.differences(c); ++h)
                delta_prior.add_gradient(st.delta_vector(c, s, h), sds, s,
                                         std::span<double>(g.data() + L.delta(c, s, h, 0), M), g_sd);
    }
    return g;
}

}  // namespace supplyshare
