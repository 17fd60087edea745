#pragma once

// Empirical-Bayes correlation step: fit with zero cross-method covariance,
// take posterior medians of the differences over data-supported periods,
// estimate the correlation matrices, then refit with them.

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "supplyshare/correlation.hpp"
#include "supplyshare/data_ingest.hpp"
#include "supplyshare/latent.hpp"
#include "supplyshare/sampler.hpp"
#include "supplyshare/summary.hpp"

namespace supplyshare {

// Which survey span decides whether a difference is data-supported.
enum class MaskScope { country, country_method };

struct SurveySpan {
    double first = std::numeric_limits<double>::infinity();
    double last = -std::numeric_limits<double>::infinity();
    bool empty() const { return first > last; }
};

// Difference h joins coefficients h and h+1; it is kept when the stretch
// between their knot centres overlaps the observed span with positive length.
inline bool difference_supported(const KnotVector& kv, std::size_t h, const SurveySpan& span)
{
    if (span.empty()) return false;
    const double lo = std::max(kv.center(h), span.first);
    const double hi = std::min(kv.center(h + 1), span.last);
    return lo < hi;
}

inline std::vector<std::vector<SurveySpan>> survey_spans(const Dataset& ds, MaskScope scope)
{
    const std::size_t C = ds.countries.size(), M = ds.method_count();
    std::vector<std::vector<SurveySpan>> spans(C, std::vector<SurveySpan>(M));
    for (const auto& o : ds.observations) {
        for (std::size_t m = 0; m < M; ++m) {
            if (scope == MaskScope::country_method && m != o.method) continue;
            auto& sp = spans[o.country][m];
            sp.first = std::min(sp.first, o.year);
            sp.last = std::max(sp.last, o.year);
        }
    }
    return spans;
}

// Posterior medians of every difference, masked to data-supported periods.
inline std::array<MaskedDifferences, kModeledSectors> masked_difference_medians(const PosteriorDraws& d,
                                                                                 const Dataset& ds,
                                                                                 MaskScope scope)
{
    const auto& ms = *d.structure;
    if (!ms.is_spline()) throw ValidationError("difference medians need a spline fit");
    const auto& L = *ms.layout;
    const auto spans = survey_spans(ds, scope);
    std::array<MaskedDifferences, kModeledSectors> out;
    for (std::size_t s = 0; s < kModeledSectors; ++s) {
        out[s].resize(L.countries());
        for (std::size_t c = 0; c < L.countries(); ++c) {
            out[s][c].assign(L.methods(), std::vector<std::optional<double>>(L.differences(c)));
            for (std::size_t m = 0; m < L.methods(); ++m)
                for (std::size_t h = 0; h < L.differences(c); ++h)
                    if (difference_supported(ms.bases[c].knots, h, spans[c][m]))
                        out[s][c][m][h] = quantile(d.pooled(L.delta(c, s, h, m)), 0.5);
        }
    }
    return out;
}

struct FitConfig {
    SamplerConfig sampler;
    PriorConfig prior;
    BasisSettings basis;
    MaskScope mask = MaskScope::country;
};

struct TwoStageResult {
    PosteriorDraws stage1;
    std::array<MaskedDifferences, kModeledSectors> medians;
    CorrelationEstimate rho;
    PosteriorDraws full;
};

// Stage-one fit with identity correlation.
inline PosteriorDraws fit_zero_covariance(const Dataset& ds, const FitConfig& cfg)
{
    auto ms = std::make_shared<const ModelStructure>(build_structure(ds, ModelKind::zero_cov, cfg.basis));
    return run_mcmc(ds, ms, CorrelationMatrices::identity(ds.method_count()), cfg.prior, cfg.sampler);
}

inline CorrelationEstimate correlation_from_stage1(const PosteriorDraws& stage1, const Dataset& ds, MaskScope mask,
                                                   std::array<MaskedDifferences, kModeledSectors>* medians = nullptr)
{
    auto med = masked_difference_medians(stage1, ds, mask);
    auto est = estimate_correlations(med, ds.method_count());
    if (medians) *medians = std::move(med);
    return est;
}

// The refit uses a seed derived from the configured one so the two stages
// do not share random streams.
inline SamplerConfig second_stage_sampler(SamplerConfig s)
{
    s.seed = s.seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull;
    return s;
}

inline TwoStageResult two_stage_fit(const Dataset& ds, const FitConfig& cfg)
{
    TwoStageResult r;
    r.stage1 = fit_zero_covariance(ds, cfg);
    r.rho = correlation_from_stage1(r.stage1, ds, cfg.mask, &r.medians);
    auto ms = std::make_shared<const ModelStructure>(build_structure(ds, ModelKind::full, cfg.basis));
    r.full = run_mcmc(ds, ms, r.rho.matrices, cfg.prior, second_stage_sampler(cfg.sampler));
    r.full.warnings.insert(r.full.warnings.end(), r.rho.warnings.begin(), r.rho.warnings.end());
    return r;
}

}  // namespace supplyshare
