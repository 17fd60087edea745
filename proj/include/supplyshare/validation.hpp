#pragma once

// Out-of-sample check: hold out each country's most recent survey (when it
// has at least two), refit on the rest, and score the held-out shares.

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "supplyshare/data_ingest.hpp"
#include "supplyshare/detail/text.hpp"
#include "supplyshare/errors.hpp"
#include "supplyshare/likelihood.hpp"
#include "supplyshare/sampler.hpp"
#include "supplyshare/summary.hpp"

namespace supplyshare {

struct HoldoutSplit {
    Dataset train;
    std::vector<Observation> test;
};

inline HoldoutSplit make_holdout_split(const Dataset& ds)
{
    std::vector<std::set<double>> years(ds.countries.size());
    for (const auto& o : ds.observations) years[o.country].insert(o.year);
    HoldoutSplit split;
    std::vector<Observation> train;
    for (const auto& o : ds.observations) {
        const auto& y = years[o.country];
        if (y.size() >= 2 && o.year == *y.rbegin())
            split.test.push_back(o);
        else
            train.push_back(o);
    }
    split.train = with_observations(ds, std::move(train));
    return split;
}

// Signed errors y - yhat; positive means under-prediction.
inline std::vector<double> compute_errors(std::span<const double> y, std::span<const double> yhat)
{
    if (y.size() != yhat.size()) throw ValidationError("compute_errors: size mismatch");
    std::vector<double> e(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) e[i] = y[i] - yhat[i];
    return e;
}

struct ErrorMetrics {
    double rmse = 0.0;
    double mean_error = 0.0;
    double median_abs_error = 0.0;
};

inline ErrorMetrics error_metrics(std::span<const double> e)
{
    if (e.empty()) throw ValidationError("error metrics need at least one error");
    ErrorMetrics m;
    double sq = 0.0, sum = 0.0;
    std::vector<double> abs_e;
    for (double v : e) {
        sq += v * v;
        sum += v;
        abs_e.push_back(std::abs(v));
    }
    const double n = static_cast<double>(e.size());
    m.rmse = std::sqrt(sq / n);
    m.mean_error = sum / n;
    m.median_abs_error = quantile(std::move(abs_e), 0.5);
    return m;
}

enum class IntervalMode { predictive, credible };

struct ValidationConfig {
    double level = 0.95;
    IntervalMode mode = IntervalMode::predictive;
    std::uint64_t seed = 1;  // for the observation-noise draws
};

enum class Placement { inside, above, below };

struct TestPoint {
    Observation obs;
    double median = 0.0;  // posterior median of the share
    double lower = 0.0, upper = 0.0;
    Placement placement = Placement::inside;
    double error() const { return obs.proportion - median; }
};

struct SectorReport {
    std::size_t n_test = 0;
    double mean_error = 0.0;
    double median_abs_error = 0.0;
    double rmse = 0.0;
    double coverage = 0.0;  // percent
    double median_width = 0.0;
    double pct_above = 0.0;
    double pct_below = 0.0;
};

struct ValidationReport {
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::array<SectorReport, kSectorCount> sectors;
    std::vector<TestPoint> points;
};

namespace detail {

// Draw from N(mu, sd^2) truncated to (0, 1) by inversion; works on the
// upper tail when the interval sits far above the mean.
inline double truncnorm_draw(double mu, double sd, double u)
{
    const boost::math::normal_distribution<double> n01;
    const double a = (0.0 - mu) / sd, b = (1.0 - mu) / sd;
    double z;
    if (a > 0.0) {
        const double qa = boost::math::cdf(boost::math::complement(n01, a));
        const double qb = boost::math::cdf(boost::math::complement(n01, b));
        const double q = qa - u * (qa - qb);
        if (!(q > 0.0)) return 0.0;
        z = boost::math::quantile(boost::math::complement(n01, q));
    } else {
        const double fa = boost::math::cdf(n01, a), fb = boost::math::cdf(n01, b);
        const double p = fa + u * (fb - fa);
        if (!(p > 0.0 && p < 1.0)) return std::clamp(mu, 0.0, 1.0);
        z = boost::math::quantile(n01, p);
    }
    return std::clamp(mu + sd * z, 0.0, 1.0);
}

}  // namespace detail

// Scores held-out observations against a fit on the training split. The
// posterior draws must come from a model built on the same country table.
inline ValidationReport validate_holdout(const PosteriorDraws& d, const std::vector<Observation>& test,
                                         std::size_t n_train, const ValidationConfig& cfg = {})
{
    if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw ConfigError("interval level must lie in (0, 1)");
    if (d.total_draws() == 0) throw ValidationError("no posterior draws");
    const auto& ms = *d.structure;
    ValidationReport rep;
    rep.n_train = n_train;
    rep.n_test = test.size();

    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu), static_cast<std::uint32_t>(cfg.seed >> 32),
                      0x7e57u};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double tail = 0.5 * (1.0 - cfg.level);

    // group test points by country-method so share draws are computed once per cell
    std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& o = test[i];
        if (o.country >= ms.country_count() || o.method >= ms.method_count())
            throw ValidationError("test observation has no matching posterior cell");
        cells[{o.country, o.method}].push_back(i);
    }
    rep.points.resize(test.size());
    for (const auto& [cell, idx] : cells) {
        std::vector<double> years;
        for (std::size_t i : idx) years.push_back(test[i].year);
        const auto draws = share_draws_at(d, cell.first, cell.second, years);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto& o = test[idx[k]];
            const auto s = static_cast<std::size_t>(o.sector);
            std::vector<double> phi(draws.size()), pred(draws.size());
            for (std::size_t j = 0; j < draws.size(); ++j) phi[j] = draws[j][k][s];
            for (std::size_t j = 0; j < draws.size(); ++j)
                pred[j] = cfg.mode == IntervalMode::predictive ? detail::truncnorm_draw(phi[j], o.se, unif(rng)) : phi[j];
            TestPoint tp;
            tp.obs = o;
            tp.median = quantile(phi, 0.5);
            std::sort(pred.begin(), pred.end());
            tp.lower = quantile_sorted(pred, tail);
            tp.upper = quantile_sorted(pred, 1.0 - tail);
            tp.placement = o.proportion > tp.upper   ? Placement::above
                           : o.proportion < tp.lower ? Placement::below
                                                     : Placement::inside;
            rep.points[idx[k]] = tp;
        }
    }

    for (std::size_t s = 0; s < kSectorCount; ++s) {
        std::vector<double> e, widths;
        std::size_t inside = 0, above = 0, below = 0;
        for (const auto& p : rep.points) {
            if (static_cast<std::size_t>(p.obs.sector) != s) continue;
            e.push_back(p.error());
            widths.push_back(p.upper - p.lower);
            inside += p.placement == Placement::inside;
            above += p.placement == Placement::above;
            below += p.placement == Placement::below;
        }
        auto& r = rep.sectors[s];
        r.n_test = e.size();
        if (e.empty()) continue;
        const auto m = error_metrics(e);
        r.rmse = m.rmse;
        r.mean_error = m.mean_error;
        r.median_abs_error = m.median_abs_error;
        const double n = static_cast<double>(e.size());
        r.coverage = 100.0 * static_cast<double>(inside) / n;
        r.pct_above = 100.0 * static_cast<double>(above) / n;
        r.pct_below = 100.0 * static_cast<double>(below) / n;
        r.median_width = quantile(std::move(widths), 0.5);
    }
    return rep;
}

// Overall coverage across sectors, percent.
inline double overall_coverage(const ValidationReport& r)
{
    if (r.points.empty()) return 0.0;
    std::size_t inside = 0;
    for (const auto& p : r.points) inside += p.placement == Placement::inside;
    return 100.0 * static_cast<double>(inside) / static_cast<double>(r.points.size());
}

// One row per sector; error metrics and widths in percentage points.
inline void write_validation_csv(std::ostream& out, const ValidationReport& r, std::string_view model)
{
    using detail::format_double;
    out << "model,sector,n_train,n_test,mean_error,median_abs_error,rmse,coverage,median_pi_width,pct_above,pct_below\n";
    for (std::size_t s = 0; s < kSectorCount; ++s) {
        const auto& x = r.sectors[s];
        out << model << ',' << kSectorLabels[s] << ',' << r.n_train << ',' << x.n_test << ','
            << format_double(100.0 * x.mean_error) << ',' << format_double(100.0 * x.median_abs_error) << ','
            << format_double(100.0 * x.rmse) << ',' << format_double(x.coverage) << ','
            << format_double(100.0 * x.median_width) << ',' << format_double(x.pct_above) << ','
            << format_double(x.pct_below) << '\n';
    }
}

}  // namespace supplyshare
