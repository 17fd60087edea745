#pragma once

// Truncated-normal data model on (0, 1). Only public and private-medical
// observations enter; the other-private share is implied by closure.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "supplyshare/data_ingest.hpp"
#include "supplyshare/detail/text.hpp"
#include "supplyshare/errors.hpp"
#include "supplyshare/latent.hpp"
#include "supplyshare/model_core.hpp"

namespace supplyshare {

inline double normal_logpdf_std(double x) { return -detail::kLogSqrt2Pi - 0.5 * x * x; }

// log Phi(x), accurate in both tails.
inline double log_normal_cdf(double x)
{
    if (x > 5.0) return std::log1p(-0.5 * std::erfc(x / std::numbers::sqrt2));
    if (x >= -30.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
    // Mills-ratio asymptotic series
    const double x2 = 1.0 / (x * x);
    const double series = 1.0 - x2 * (1.0 - 3.0 * x2 * (1.0 - 5.0 * x2 * (1.0 - 7.0 * x2)));
    return normal_logpdf_std(x) - std::log(-x) + std::log(series);
}

// log(Phi(b) - Phi(a)) for a < b.
inline double log_normal_mass(double a, double b)
{
    if (!(a < b)) return -std::numeric_limits<double>::infinity();
    if (a >= 0.0) return log_normal_mass(-b, -a);
    if (b <= 0.0) {
        const double lb = log_normal_cdf(b);
        const double d = log_normal_cdf(a) - lb;
        return lb + (d > -std::numbers::ln2 ? std::log(-std::expm1(d)) : std::log1p(-std::exp(d)));
    }
    const double outside = 0.5 * std::erfc(-a / std::numbers::sqrt2) + 0.5 * std::erfc(b / std::numbers::sqrt2);
    return std::log1p(-outside);
}

inline double truncnorm_logpdf(double y, double mu, double sd, double lower = 0.0, double upper = 1.0)
{
    if (!(sd > 0.0)) throw DomainError("truncnorm_logpdf: sd must be positive");
    if (!(y > lower && y < upper))
        throw DomainError("truncnorm_logpdf: y = " + detail::format_double(y) + " outside the open interval");
    return normal_logpdf_std((y - mu) / sd) - std::log(sd) - log_normal_mass((lower - mu) / sd, (upper - mu) / sd);
}

// d/dmu of truncnorm_logpdf.
inline double truncnorm_dlogpdf_dmu(double y, double mu, double sd, double lower = 0.0, double upper = 1.0)
{
    const double a = (lower - mu) / sd, b = (upper - mu) / sd;
    const double log_z = log_normal_mass(a, b);
    const double ratio = std::exp(normal_logpdf_std(b) - log_z) - std::exp(normal_logpdf_std(a) - log_z);
    return (y - mu) / (sd * sd) + ratio / sd;
}

// Likelihood-eligible observations with their design rows precomputed.
struct IndexedObservation {
    std::size_t observation = 0;  // index into Dataset::observations
    std::size_t country = 0;
    std::size_t method = 0;
    std::size_t sector = 0;  // 0 public, 1 private medical
    double y = 0.0;
    double se = 0.0;
    DesignRow design;
};

struct LikelihoodIndex {
    std::vector<IndexedObservation> items;
    std::vector<std::vector<std::size_t>> by_cell;  // [country * M + method] -> item indices
};

inline LikelihoodIndex index_likelihood(const Dataset& ds, const ModelStructure& ms)
{
    LikelihoodIndex idx;
    const std::size_t M = ms.method_count();
    idx.by_cell.resize(ms.country_count() * M);
    for (std::size_t i = 0; i < ds.observations.size(); ++i) {
        const auto& o = ds.observations[i];
        if (!o.in_likelihood()) continue;
        if (o.country >= ms.country_count() || o.method >= M)
            throw ValidationError("observation refers to a country or method outside the model");
        if (!(o.proportion > 0.0 && o.proportion < 1.0))
            throw DomainError("likelihood observation at line " + std::to_string(o.line) +
                              " must lie strictly inside (0, 1)");
        IndexedObservation io;
        io.observation = i;
        io.country = o.country;
        io.method = o.method;
        io.sector = static_cast<std::size_t>(o.sector);
        io.y = o.proportion;
        io.se = o.se;
        io.design = ms.design_row(o.country, o.year);
        idx.by_cell[o.country * M + o.method].push_back(idx.items.size());
        idx.items.push_back(std::move(io));
    }
    return idx;
}

namespace detail {

inline double design_latent(const DesignRow& d, std::span<const double> values, const ParameterLayout& L,
                            std::size_t c, std::size_t m, std::size_t s)
{
    double psi = d.alpha_weight * values[L.alpha(c, m, s)];
    const std::size_t base = L.delta(c, s, 0, m), stride = L.methods();
    for (std::size_t h = 0; h < d.delta_weights.size(); ++h) psi += d.delta_weights[h] * values[base + h * stride];
    return psi;
}

inline double observation_loglik(const IndexedObservation& o, double psi1, double psi2)
{
    const auto phi = compose_shares(psi1, psi2);
    return truncnorm_logpdf(o.y, o.sector == 0 ? phi.phi1 : phi.phi2, o.se);
}

}  // namespace detail

inline double log_likelihood(const LikelihoodIndex& idx, std::span<const double> values, const ParameterLayout& L)
{
    double ll = 0.0;
    for (const auto& o : idx.items) {
        const double p1 = detail::design_latent(o.design, values, L, o.country, o.method, 0);
        const double p2 = detail::design_latent(o.design, values, L, o.country, o.method, 1);
        ll += detail::observation_loglik(o, p1, p2);
    }
    return ll;
}

inline double log_likelihood(const Dataset& ds, const ParameterState& st, const ModelStructure& ms)
{
    return log_likelihood(index_likelihood(ds, ms), st.values(), st.layout());
}

inline std::vector<double> log_likelihood_gradient(const LikelihoodIndex& idx, std::span<const double> values,
                                                   const ParameterLayout& L)
{
    std::vector<double> g(L.size(), 0.0);
    for (const auto& o : idx.items) {
        const double p1 = detail::design_latent(o.design, values, L, o.country, o.method, 0);
        const double p2 = detail::design_latent(o.design, values, L, o.country, o.method, 1);
        const auto phi = compose_shares(p1, p2);
        double d_psi[2] = {0.0, 0.0};
        if (o.sector == 0) {
            const double dmu = truncnorm_dlogpdf_dmu(o.y, phi.phi1, o.se);
            d_psi[0] = dmu * phi.phi1 * (1.0 - phi.phi1);
        } else {
            const double dmu = truncnorm_dlogpdf_dmu(o.y, phi.phi2, o.se);
            d_psi[0] = -dmu * phi.phi1 * phi.phi2;
            d_psi[1] = dmu * phi.phi2 * inv_logit(-p2);
        }
        for (std::size_t s = 0; s < kModeledSectors; ++s) {
            if (d_psi[s] == 0.0) continue;
            g[L.alpha(o.country, o.method, s)] += d_psi[s] * o.design.alpha_weight;
            for (std::size_t h = 0; h < o.design.delta_weights.size(); ++h)
                g[L.delta(o.country, s, h, o.method)] += d_psi[s] * o.design.delta_weights[h];
        }
    }
    return g;
}

inline std::vector<double> log_likelihood_gradient(const Dataset& ds, const ParameterState& st,
                                                   const ModelStructure& ms)
{
    return log_likelihood_gradient(index_likelihood(ds, ms), st.values(), st.layout());
}

}  // namespace supplyshare
