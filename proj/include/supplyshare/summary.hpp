#pragma once

// Posterior summaries of supply shares: median and 80% / 95% intervals for
// every (country, method, sector, year) on the grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "supplyshare/data_ingest.hpp"
#include "supplyshare/detail/text.hpp"
#include "supplyshare/errors.hpp"
#include "supplyshare/sampler.hpp"

namespace supplyshare {

inline constexpr std::size_t kMinSummaryDraws = 100;

// Sample quantile with linear interpolation between order statistics
// (h = (n - 1) p). Sorts its argument.
inline double quantile_sorted(std::span<const double> sorted, double p)
{
    if (sorted.empty()) throw ValidationError("quantile of an empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantile probability outside [0, 1]");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> x, double p)
{
    std::sort(x.begin(), x.end());
    return quantile_sorted(x, p);
}

struct Interval {
    double median = 0.0;
    double lo80 = 0.0, hi80 = 0.0;
    double lo95 = 0.0, hi95 = 0.0;
};

inline Interval summarize_sample(std::vector<double> x)
{
    std::sort(x.begin(), x.end());
    return {quantile_sorted(x, 0.5), quantile_sorted(x, 0.1), quantile_sorted(x, 0.9), quantile_sorted(x, 0.025),
            quantile_sorted(x, 0.975)};
}

struct ShareSummary {
    std::size_t country = 0;
    std::size_t method = 0;
    std::size_t sector = 0;
    double year = 0.0;
    Interval interval;
};

// Share draws for one country-method at arbitrary (possibly fractional)
// years: result[draw][year_index], chains concatenated.
inline std::vector<std::vector<ShareTriple>> share_draws_at(const PosteriorDraws& d, std::size_t c, std::size_t m,
                                                           std::span<const double> years)
{
    const auto& ms = *d.structure;
    std::vector<DesignRow> rows;
    for (double y : years) rows.push_back(ms.design_row(c, y));
    const auto& L = *ms.layout;
    std::vector<std::vector<ShareTriple>> out;
    out.reserve(d.total_draws());
    for (const auto& chain : d.chains)
        for (std::size_t i = 0; i < chain.n_draws; ++i) {
            const auto x = chain.draw(i);
            std::vector<ShareTriple> row(years.size());
            for (std::size_t t = 0; t < years.size(); ++t) {
                double psi[2];
                for (std::size_t s = 0; s < kModeledSectors; ++s) {
                    psi[s] = rows[t].alpha_weight * x[L.alpha(c, m, s)];
                    for (std::size_t h = 0; h < rows[t].delta_weights.size(); ++h)
                        psi[s] += rows[t].delta_weights[h] * x[L.delta(c, s, h, m)];
                }
                row[t] = compose_shares(psi[0], psi[1]);
            }
            out.push_back(std::move(row));
        }
    return out;
}

// Rows ordered country, method, sector, year.
inline std::vector<ShareSummary> summarize(const PosteriorDraws& d)
{
    if (d.total_draws() < kMinSummaryDraws)
        throw ValidationError("at least " + std::to_string(kMinSummaryDraws) + " posterior draws are needed to summarize");
    const auto& ms = *d.structure;
    const std::size_t C = ms.country_count(), M = ms.method_count(), T = ms.year_grid.size();
    std::vector<ShareSummary> out;
    out.reserve(C * M * kSectorCount * T);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t m = 0; m < M; ++m) {
            // shares over the grid, per draw
            std::vector<std::vector<ShareTriple>> traj;
            traj.reserve(d.total_draws());
            for (std::size_t ch = 0; ch < d.chains.size(); ++ch)
                for (std::size_t i = 0; i < d.chains[ch].n_draws; ++i) traj.push_back(phi_trajectory(d, ch, i, c, m));
            std::vector<double> buf(traj.size());
            for (std::size_t s = 0; s < kSectorCount; ++s)
                for (std::size_t t = 0; t < T; ++t) {
                    for (std::size_t k = 0; k < traj.size(); ++k) buf[k] = traj[k][t][s];
                    out.push_back({c, m, s, ms.year_grid[t], summarize_sample(buf)});
                }
        }
    return out;
}

inline constexpr const char* kSummaryHeader = "country,method,sector,year,median,lo80,hi80,lo95,hi95";

inline void write_summary_row(std::ostream& out, const ModelStructure& ms, const ShareSummary& r)
{
    using detail::format_double;
    out << detail::csv_field(ms.countries[r.country]) << ',' << ms.methods[r.method] << ',' << kSectorLabels[r.sector]
        << ',' << format_double(r.year) << ',' << format_double(r.interval.median) << ','
        << format_double(r.interval.lo80) << ',' << format_double(r.interval.hi80) << ','
        << format_double(r.interval.lo95) << ',' << format_double(r.interval.hi95) << '\n';
}

inline void write_summaries_csv(std::ostream& out, const ModelStructure& ms, const std::vector<ShareSummary>& rows)
{
    out << kSummaryHeader << '\n';
    for (const auto& r : rows) write_summary_row(out, ms, r);
}

}  // namespace supplyshare
