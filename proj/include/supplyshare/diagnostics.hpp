#pragma once

// Convergence diagnostics: split R-hat and effective sample size from the
// initial positive sequence of autocorrelation pair sums.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "supplyshare/detail/text.hpp"
#include "supplyshare/errors.hpp"
#include "supplyshare/sampler.hpp"

namespace supplyshare {

struct DiagnosticThresholds {
    double max_rhat = 1.05;
    double min_ess = 100.0;
};

struct ParameterDiagnostic {
    std::string parameter;
    double rhat = 0.0;
    double ess = 0.0;
    double acceptance = 0.0;  // NaN when not a Metropolis site
    bool degenerate = false;  // zero variance across all draws
    bool flagged = false;
};

namespace detail {

inline double mean_of(std::span<const double> x)
{
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

inline double sample_variance(std::span<const double> x)
{
    const double m = mean_of(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

// Autocovariance at lag t, biased (1/n) normalisation.
inline double autocovariance(std::span<const double> x, double mean, std::size_t t)
{
    const std::size_t n = x.size();
    double s = 0.0;
    for (std::size_t i = 0; i + t < n; ++i) s += (x[i] - mean) * (x[i + t] - mean);
    return s / static_cast<double>(n);
}

}  // namespace detail

// Chains are split in half; returns NaN when every draw is identical.
inline double split_rhat(const std::vector<std::vector<double>>& chains)
{
    if (chains.size() < 2) throw ValidationError("split R-hat needs at least 2 chains");
    std::size_t n = chains[0].size();
    for (const auto& c : chains) n = std::min(n, c.size());
    const std::size_t half = n / 2;
    if (half < 2) throw ValidationError("split R-hat needs at least 4 draws per chain");
    std::vector<std::span<const double>> parts;
    for (const auto& c : chains) {
        parts.emplace_back(c.data(), half);
        parts.emplace_back(c.data() + (n - half), half);
    }
    const double m = static_cast<double>(parts.size());
    const double len = static_cast<double>(half);
    std::vector<double> means;
    double w = 0.0;
    for (const auto& p : parts) {
        means.push_back(detail::mean_of(p));
        w += detail::sample_variance(p);
    }
    w /= m;
    const double b = len * detail::sample_variance(means);
    if (w == 0.0) return b == 0.0 ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
    const double var_plus = (len - 1.0) / len * w + b / len;
    return std::sqrt(var_plus / w);
}

// Multi-chain ESS with Geyer's initial positive (monotone) sequence.
inline double effective_sample_size(const std::vector<std::vector<double>>& chains)
{
    if (chains.empty()) throw ValidationError("ESS needs at least one chain");
    std::size_t n = chains[0].size();
    for (const auto& c : chains) n = std::min(n, c.size());
    if (n < 4) throw ValidationError("ESS needs at least 4 draws per chain");
    const double m = static_cast<double>(chains.size());
    const double nn = static_cast<double>(n);

    std::vector<double> means, vars;
    std::vector<std::vector<double>> acov(chains.size());
    for (std::size_t j = 0; j < chains.size(); ++j) {
        std::span<const double> x(chains[j].data(), n);
        means.push_back(detail::mean_of(x));
        vars.push_back(detail::sample_variance(x));
    }
    double w = detail::mean_of(vars);
    const double b_over_n = chains.size() > 1 ? detail::sample_variance(means) : 0.0;
    const double var_plus = (nn - 1.0) / nn * w + b_over_n;
    if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

    auto rho = [&](std::size_t t) {
        double s = 0.0;
        for (std::size_t j = 0; j < chains.size(); ++j)
            s += detail::autocovariance(std::span<const double>(chains[j].data(), n), means[j], t);
        s /= m;
        return 1.0 - (w - s) / var_plus;
    };

    // Pair sums Gamma_k = rho(2k) + rho(2k+1), truncated at the first
    // non-positive value and forced monotone.
    double sum = 0.0;
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
        double g = rho(2 * k) + rho(2 * k + 1);
        if (!(g > 0.0)) break;
        g = std::min(g, prev);
        prev = g;
        sum += g;
    }
    const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / std::log10(m * nn + 1.0));
    return m * nn / tau;
}

inline std::vector<ParameterDiagnostic> diagnose(const PosteriorDraws& d, const DiagnosticThresholds& th = {})
{
    if (d.chains.size() < 2) throw ValidationError("convergence diagnostics need at least 2 chains");
    const auto& L = *d.structure->layout;
    std::vector<ParameterDiagnostic> out;
    out.reserve(L.size());
    for (std::size_t p = 0; p < L.size(); ++p) {
        std::vector<std::vector<double>> chains;
        for (const auto& c : d.chains) {
            std::vector<double> v(c.n_draws);
            for (std::size_t i = 0; i < c.n_draws; ++i) v[i] = c.at(i, p);
            chains.push_back(std::move(v));
        }
        ParameterDiagnostic pd;
        pd.parameter = L.name(p);
        pd.rhat = split_rhat(chains);
        pd.ess = effective_sample_size(chains);
        double acc = 0.0;
        std::size_t n_acc = 0;
        for (const auto& c : d.chains)
            if (p < c.acceptance.size() && !std::isnan(c.acceptance[p])) {
                acc += c.acceptance[p];
                ++n_acc;
            }
        pd.acceptance = n_acc ? acc / static_cast<double>(n_acc) : std::numeric_limits<double>::quiet_NaN();
        pd.degenerate = std::isnan(pd.rhat);
        pd.flagged = !pd.degenerate && (!(pd.rhat <= th.max_rhat) || !(pd.ess >= th.min_ess));
        out.push_back(std::move(pd));
    }
    return out;
}

inline std::size_t flagged_count(const std::vector<ParameterDiagnostic>& diag)
{
    return static_cast<std::size_t>(std::count_if(diag.begin(), diag.end(), [](const auto& d) { return d.flagged; }));
}

inline void write_diagnostics_csv(std::ostream& out, const std::vector<ParameterDiagnostic>& diag)
{
    out << "parameter,rhat,ess,acceptance,status\n";
    for (const auto& d : diag)
        out << detail::csv_field(d.parameter) << ',' << detail::format_double(d.rhat) << ','
            << detail::format_double(d.ess) << ',' << detail::format_double(d.acceptance) << ','
            << (d.degenerate ? "degenerate" : d.flagged ? "flagged" : "ok") << '\n';
}

}  // namespace supplyshare
