#pragma once

// The three model variants behind one entry point. The linear model borrows
// the correlation matrices estimated from the spline zero-covariance stage.

#include <memory>
#include <optional>

#include "supplyshare/correlation.hpp"
#include "supplyshare/data_ingest.hpp"
#include "supplyshare/latent.hpp"
#include "supplyshare/sampler.hpp"
#include "supplyshare/two_stage.hpp"

namespace supplyshare {

struct VariantFit {
    ModelKind kind = ModelKind::full;
    PosteriorDraws draws;
    std::optional<PosteriorDraws> stage1;  // present when this call ran a zero-covariance stage for rho
    std::optional<CorrelationEstimate> rho;
};

// `rho` skips the correlation stage for the full and linear variants.
inline VariantFit fit_variant(const Dataset& ds, ModelKind kind, const FitConfig& cfg,
                              const std::optional<CorrelationMatrices>& rho = std::nullopt)
{
    VariantFit out;
    out.kind = kind;
    if (kind == ModelKind::zero_cov) {
        out.draws = fit_zero_covariance(ds, cfg);
        return out;
    }
    CorrelationMatrices matrices;
    if (rho) {
        matrices = *rho;
    } else {
        out.stage1 = fit_zero_covariance(ds, cfg);
        out.rho = correlation_from_stage1(*out.stage1, ds, cfg.mask);
        matrices = out.rho->matrices;
    }
    auto ms = std::make_shared<const ModelStructure>(build_structure(ds, kind, cfg.basis));
    out.draws = run_mcmc(ds, ms, matrices, cfg.prior, second_stage_sampler(cfg.sampler));
    if (out.rho) out.draws.warnings.insert(out.draws.warnings.end(), out.rho->warnings.begin(), out.rho->warnings.end());
    return out;
}

}  // namespace supplyshare
