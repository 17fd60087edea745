#pragma once

// Country-specific cubic B-spline bases. Knots sit on a lattice with fixed
// spacing anchored at the country's most recent survey year, so one basis
// function peaks exactly at that year (the reference basis k*).

#include <Eigen/Dense>

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

namespace supplyshare {

inline constexpr int kSplineDegree = 3;

enum class KnotBoundary {
    extended,  // lattice continued past the window (uniform P-spline basis)
    clamped,   // boundary knots replicated at the window edges
};

struct BasisSettings {
    YearWindow window;
    double spacing = 3.5;
    KnotBoundary boundary = KnotBoundary::extended;
};

struct KnotVector {
    std::vector<double> interior;  // lattice knots inside the closed window
    std::vector<double> knots;     // full knot sequence, size K + 4

    std::size_t basis_count() const { return knots.size() - (kSplineDegree + 1); }
    // Knot at which basis k peaks on a uniform stretch of the lattice.
    double center(std::size_t k) const { return knots[k + 2]; }
};

inline KnotVector build_knots(double recent_year, const YearWindow& window, double spacing,
                              KnotBoundary boundary = KnotBoundary::extended)
{
    if (!(spacing > 0.0)) throw DomainError("knot spacing must be positive");
    if (!(window.start < window.end)) throw DomainError("empty estimation window");
    if (!(recent_year > window.start && recent_year <= window.end))
        throw DomainError("reference year " + detail::format_double(recent_year) + " outside window (" +
                          detail::format_double(window.start) + ", " + detail::format_double(window.end) + "]");

    auto lattice = [&](long j) { return recent_year + static_cast<double>(j) * spacing; };
    KnotVector kv;
    long jlo = 0;
    while (lattice(jlo - 1) >= window.start) --jlo;
    long jhi = 0;
    while (lattice(jhi + 1) <= window.end) ++jhi;
    for (long j = jlo; j <= jhi; ++j) kv.interior.push_back(lattice(j));

    if (boundary == KnotBoundary::extended) {
        // Keep every basis whose support (L_j, L_{j+4}) meets the window.
        long first = jlo;
        while (lattice(first - 1 + 4) > window.start) --first;
        long last = jhi;
        while (lattice(last) >= window.end) --last;
        for (long j = first; j <= last + 4; ++j) kv.knots.push_back(lattice(j));
    } else {
        kv.knots.assign(kSplineDegree + 1, window.start);
        for (double k : kv.interior)
            if (k > window.start && k < window.end) kv.knots.push_back(k);
        kv.knots.insert(kv.knots.end(), kSplineDegree + 1, window.end);
    }
    return kv;
}

namespace detail {

inline void check_knots(std::span<const double> knots)
{
    if (knots.size() < kSplineDegree + 2) throw DomainError("cubic B-spline needs at least 5 knots");
    if (!std::is_sorted(knots.begin(), knots.end())) throw DomainError("knots must be non-decreasing");
}

}  // namespace detail

// Values of all K basis functions at x (de Boor's triangular scheme).
inline std::vector<double> basis_row(std::span<const double> knots, double x)
{
    detail::check_knots(knots);
    const std::size_t K = knots.size() - (kSplineDegree + 1);
    const double lo = knots[kSplineDegree], hi = knots[K];
    if (!(x >= lo && x <= hi))
        throw DomainError("year " + detail::format_double(x) + " outside knot span [" + detail::format_double(lo) +
                          ", " + detail::format_double(hi) + "]");

    // span index mu with knots[mu] <= x < knots[mu+1]; right end closes the last non-empty span
    std::size_t mu;
    if (x >= hi) {
        mu = K - 1;
        while (knots[mu] == knots[mu + 1]) --mu;
    } else {
        mu = static_cast<std::size_t>(std::upper_bound(knots.begin(), knots.end(), x) - knots.begin()) - 1;
    }

    double N[kSplineDegree + 1] = {1.0, 0.0, 0.0, 0.0};
    double left[kSplineDegree + 1], right[kSplineDegree + 1];
    for (int j = 1; j <= kSplineDegree; ++j) {
        left[j] = x - knots[mu + 1 - j];
        right[j] = knots[mu + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[r + 1] + left[j - r];
            const double temp = denom > 0.0 ? N[r] / denom : 0.0;
            N[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        N[j] = saved;
    }

    std::vector<double> row(K, 0.0);
    for (int r = 0; r <= kSplineDegree; ++r) row[mu - kSplineDegree + r] = N[r];
    return row;
}

// One cubic B-spline on its own five knots, over its whole support; the
// knot list is padded so that basis_row covers [t0, t4].
inline double bspline_on_knots(std::span<const double, kSplineDegree + 2> local, double x)
{
    if (x < local.front() || x > local.back()) return 0.0;
    const double step = std::max(local.back() - local.front(), 1.0);
    std::vector<double> knots;
    for (int i = kSplineDegree; i > 0; --i) knots.push_back(local.front() - step * i);
    knots.insert(knots.end(), local.begin(), local.end());
    for (int i = 1; i <= kSplineDegree; ++i) knots.push_back(local.back() + step * i);
    if (x == local.back()) return 0.0;
    return basis_row(knots, x)[kSplineDegree];
}

inline Eigen::MatrixXd evaluate_basis(std::span<const double> knots, std::span<const double> years)
{
    detail::check_knots(knots);
    const auto K = static_cast<Eigen::Index>(knots.size() - (kSplineDegree + 1));
    Eigen::MatrixXd B(static_cast<Eigen::Index>(years.size()), K);
    for (std::size_t t = 0; t < years.size(); ++t) {
        const auto row = basis_row(knots, years[t]);
        for (Eigen::Index k = 0; k < K; ++k) B(static_cast<Eigen::Index>(t), k) = row[static_cast<std::size_t>(k)];
    }
    return B;
}

// 0-based index of the basis function peaking at the knot placed at recent_year.
inline std::size_t reference_knot_index(const KnotVector& kv, double recent_year)
{
    const std::size_t K = kv.basis_count();
    for (std::size_t k = K; k-- > 0;)
        if (kv.center(k) == recent_year) return k;
    throw DomainError("no knot at reference year " + detail::format_double(recent_year));
}

struct BasisSet {
    std::string country;
    double reference_year = 0.0;
    KnotVector knots;
    std::vector<double> years;
    Eigen::MatrixXd basis;  // |years| x K
    std::size_t k_star = 0;

    std::size_t K() const { return static_cast<std::size_t>(basis.cols()); }
    std::vector<double> row_at(double year) const { return basis_row(knots.knots, year); }
};

inline BasisSet make_basis_set(std::string country, double recent_year, const BasisSettings& settings,
                               std::vector<double> years)
{
    BasisSet b;
    b.country = std::move(country);
    b.reference_year = recent_year;
    b.knots = build_knots(recent_year, settings.window, settings.spacing, settings.boundary);
    b.years = std::move(years);
    b.basis = evaluate_basis(b.knots.knots, b.years);
    b.k_star = reference_knot_index(b.knots, recent_year);
    return b;
}

// Debug export, one row per (year, basis index).
inline void write_basis_csv(std::ostream& out, const BasisSet& b)
{
    out << "year,k,value\n";
    for (Eigen::Index t = 0; t < b.basis.rows(); ++t)
        for (Eigen::Index k = 0; k < b.basis.cols(); ++k)
            out << detail::format_double(b.years[static_cast<std::size_t>(t)]) << ',' << k << ','
                << detail::format_double(b.basis(t, k)) << '\n';
}

}  // namespace supplyshare
