#pragma once

// Model structure shared by every variant. The latent curve of a
// (country, method, sector) is linear in (alpha, deltas):
//     psi(t) = a(t) * alpha + sum_h w_h(t) * delta_h
// and design_row() is the one place where the variants differ.

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "supplyshare/data_ingest.hpp"
#include "supplyshare/errors.hpp"
#include "supplyshare/model_core.hpp"
#include "supplyshare/spline_basis.hpp"

namespace supplyshare {

enum class ModelKind { full, zero_cov, linear };

inline std::string_view model_kind_label(ModelKind k)
{
    switch (k) {
    case ModelKind::full: return "full";
    case ModelKind::zero_cov: return "zero_cov";
    case ModelKind::linear: return "linear";
    }
    return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s)
{
    if (s == "full") return ModelKind::full;
    if (s == "zero_cov") return ModelKind::zero_cov;
    if (s == "linear") return ModelKind::linear;
    return std::nullopt;
}

// Linear comparison model; t is the year minus the country's reference year.
inline double linear_latent(double alpha, double slope, double t) { return alpha + slope * t; }

struct DesignRow {
    double alpha_weight = 0.0;
    std::vector<double> delta_weights;

    double apply(double alpha, std::span<const double> deltas) const
    {
        double psi = alpha_weight * alpha;
        for (std::size_t h = 0; h < delta_weights.size(); ++h) psi += delta_weights[h] * deltas[h];
        return psi;
    }
};

// Weights from a basis row: a = sum_k B_k; for h >= k*, w_h = sum_{k>h} B_k;
// for h < k*, w_h = -sum_{k<=h} B_k.
inline DesignRow spline_design_row(std::span<const double> basis_row, std::size_t k_star)
{
    const std::size_t K = basis_row.size();
    DesignRow d;
    d.delta_weights.assign(K - 1, 0.0);
    for (double b : basis_row) d.alpha_weight += b;
    double tail = 0.0;
    for (std::size_t h = K - 1; h-- > k_star;) {
        tail += basis_row[h + 1];
        d.delta_weights[h] = tail;
    }
    double head = 0.0;
    for (std::size_t h = 0; h < k_star; ++h) {
        head += basis_row[h];
        d.delta_weights[h] = -head;
    }
    return d;
}

struct ModelStructure {
    ModelKind kind = ModelKind::full;
    BasisSettings basis_settings;
    std::vector<std::string> countries;
    std::vector<std::string> regions;
    std::vector<std::size_t> region_of;
    std::vector<std::string> methods;
    std::vector<double> reference_years;
    std::vector<double> year_grid;
    std::vector<BasisSet> bases;  // empty for the linear model
    std::shared_ptr<const ParameterLayout> layout;

    std::size_t country_count() const { return countries.size(); }
    std::size_t method_count() const { return methods.size(); }
    bool is_spline() const { return kind != ModelKind::linear; }

    DesignRow design_row(std::size_t c, double year) const
    {
        if (is_spline()) {
            const auto row = bases[c].row_at(year);
            return spline_design_row(row, bases[c].k_star);
        }
        return {1.0, {year - reference_years[c]}};
    }

    // Latent curve on the year grid, via coefficient reconstruction for
    // splines and the closed form for the linear model.
    std::vector<double> latent_on_grid(std::span<const double> values, std::size_t c, std::size_t m,
                                       std::size_t s) const
    {
        const auto& L = *layout;
        const double alpha = values[L.alpha(c, m, s)];
        const std::size_t H = L.differences(c);
        std::vector<double> deltas(H);
        for (std::size_t h = 0; h < H; ++h) deltas[h] = values[L.delta(c, s, h, m)];
        if (is_spline()) {
            const auto beta = reconstruct_betas(alpha, deltas, bases[c].k_star);
            return latent_curve(beta, bases[c].basis);
        }
        std::vector<double> psi(year_grid.size());
        for (std::size_t t = 0; t < year_grid.size(); ++t)
            psi[t] = linear_latent(alpha, deltas[0], year_grid[t] - reference_years[c]);
        return psi;
    }

    std::vector<ShareTriple> shares_on_grid(std::span<const double> values, std::size_t c, std::size_t m) const
    {
        const auto p1 = latent_on_grid(values, c, m, 0);
        const auto p2 = latent_on_grid(values, c, m, 1);
        std::vector<ShareTriple> out(p1.size());
        for (std::size_t t = 0; t < p1.size(); ++t) out[t] = compose_shares(p1[t], p2[t]);
        return out;
    }

    double latent_at(std::span<const double> values, std::size_t c, std::size_t m, std::size_t s, double year) const
    {
        const auto d = design_row(c, year);
        return d.alpha_weight * values[layout->alpha(c, m, s)] + delta_term(values, d, c, m, s);
    }

    ShareTriple shares_at(std::span<const double> values, std::size_t c, std::size_t m, double year) const
    {
        return compose_shares(latent_at(values, c, m, 0, year), latent_at(values, c, m, 1, year));
    }

private:
    double delta_term(std::span<const double> values, const DesignRow& d, std::size_t c, std::size_t m,
                      std::size_t s) const
    {
        double acc = 0.0;
        for (std::size_t h = 0; h < d.delta_weights.size(); ++h)
            acc += d.delta_weights[h] * values[layout->delta(c, s, h, m)];
        return acc;
    }
};

// Structure from its defining tables; also used when reloading saved draws.
inline ModelStructure assemble_structure(ModelKind kind, const BasisSettings& settings,
                                         std::vector<std::string> countries, std::vector<std::string> regions,
                                         std::vector<std::size_t> region_of, std::vector<std::string> methods,
                                         std::vector<double> reference_years, std::vector<double> year_grid)
{
    if (countries.size() != region_of.size() || countries.size() != reference_years.size())
        throw ValidationError("structure tables have inconsistent lengths");
    ModelStructure ms;
    ms.kind = kind;
    ms.basis_settings = settings;
    ms.countries = std::move(countries);
    ms.regions = std::move(regions);
    ms.region_of = std::move(region_of);
    ms.methods = std::move(methods);
    ms.reference_years = std::move(reference_years);
    ms.year_grid = std::move(year_grid);
    ModelDimensions dims;
    dims.methods = ms.methods.size();
    dims.regions = ms.regions.size();
    dims.region_of = ms.region_of;
    for (std::size_t c = 0; c < ms.countries.size(); ++c) {
        if (ms.region_of[c] >= ms.regions.size()) throw ValidationError("region index out of range");
        if (ms.is_spline()) {
            ms.bases.push_back(make_basis_set(ms.countries[c], ms.reference_years[c], settings, ms.year_grid));
            dims.differences.push_back(ms.bases.back().K() - 1);
        } else {
            dims.differences.push_back(1);
        }
    }
    ms.layout = std::make_shared<const ParameterLayout>(std::move(dims));
    return ms;
}

inline ModelStructure build_structure(const Dataset& ds, ModelKind kind, const BasisSettings& settings)
{
    std::vector<std::string> names;
    std::vector<std::size_t> region_of;
    std::vector<double> recent;
    for (const auto& c : ds.countries) {
        if (!c.most_recent_survey_year)
            throw ValidationError("country '" + c.name + "' has no observations to anchor its knots");
        names.push_back(c.name);
        region_of.push_back(c.region);
        recent.push_back(*c.most_recent_survey_year);
    }
    return assemble_structure(kind, settings, std::move(names), ds.regions, std::move(region_of), ds.methods,
                              std::move(recent), ds.year_grid);
}

}  // namespace supplyshare
