#pragma once

// Cross-method correlation of first-order spline-coefficient differences.
// The estimator is the uncentred cosine (Gram) construction over masked
// point estimates, so the result is always positive semidefinite.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "supplyshare/data_ingest.hpp"
#include "supplyshare/detail/text.hpp"
#include "supplyshare/errors.hpp"

namespace supplyshare {

struct CorrelationMatrices {
    std::array<Eigen::MatrixXd, kModeledSectors> rho;

    static CorrelationMatrices identity(std::size_t methods)
    {
        CorrelationMatrices c;
        for (auto& r : c.rho) r = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(methods),
                                                            static_cast<Eigen::Index>(methods));
        return c;
    }

    std::size_t methods() const { return static_cast<std::size_t>(rho[0].rows()); }
};

// Symmetric, unit diagonal, entries in [-1, 1].
inline void validate_correlation(const Eigen::MatrixXd& rho, double tol = 1e-12)
{
    if (rho.rows() != rho.cols()) throw ValidationError("correlation matrix must be square");
    for (Eigen::Index i = 0; i < rho.rows(); ++i) {
        if (std::abs(rho(i, i) - 1.0) > tol) throw ValidationError("correlation matrix diagonal must be 1");
        for (Eigen::Index j = 0; j < rho.cols(); ++j) {
            if (std::abs(rho(i, j) - rho(j, i)) > tol) throw ValidationError("correlation matrix must be symmetric");
            if (!(std::abs(rho(i, j)) <= 1.0 + tol)) throw ValidationError("correlation entry outside [-1, 1]");
        }
    }
}

inline Eigen::MatrixXd assemble_covariance(const Eigen::MatrixXd& rho, std::span<const double> sds)
{
    validate_correlation(rho);
    if (static_cast<std::size_t>(rho.rows()) != sds.size())
        throw ValidationError("assemble_covariance: size mismatch between correlation matrix and sds");
    for (double s : sds)
        if (!(s > 0.0)) throw ValidationError("assemble_covariance: standard deviations must be positive");
    Eigen::MatrixXd sigma = rho;
    for (Eigen::Index i = 0; i < rho.rows(); ++i)
        for (Eigen::Index j = 0; j < rho.cols(); ++j)
            sigma(i, j) = rho(i, j) * sds[static_cast<std::size_t>(i)] * sds[static_cast<std::size_t>(j)];
    return sigma;
}

// Point estimates of the differences for one sector, indexed [country][method][h];
// std::nullopt marks a masked (excluded) entry.
using MaskedDifferences = std::vector<std::vector<std::vector<std::optional<double>>>>;

struct CorrelationEstimate {
    CorrelationMatrices matrices;
    std::vector<std::string> warnings;
};

inline Eigen::MatrixXd estimate_correlation(const MaskedDifferences& d, std::size_t methods,
                                            std::vector<std::string>* warnings = nullptr)
{
    const auto M = static_cast<Eigen::Index>(methods);
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(M, M);
    for (const auto& country : d) {
        if (country.size() != methods) throw ValidationError("estimate_correlation: method count mismatch");
        const std::size_t H = country.empty() ? 0 : country[0].size();
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i = 0; i < methods; ++i) {
                if (!country[i][h]) continue;
                for (std::size_t j = 0; j < methods; ++j)
                    if (country[j][h])
                        cross(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +=
                            *country[i][h] * *country[j][h];
            }
    }
    // Masked entries count as zero in every sum, so the result is the cosine
    // matrix of zero-filled vectors and stays positive semidefinite.
    Eigen::MatrixXd rho = Eigen::MatrixXd::Identity(M, M);
    for (Eigen::Index i = 0; i < M; ++i)
        for (Eigen::Index j = i + 1; j < M; ++j) {
            double r = 0.0;
            if (cross(i, i) > 0.0 && cross(j, j) > 0.0) {
                r = cross(i, j) / (std::sqrt(cross(i, i)) * std::sqrt(cross(j, j)));
                r = std::clamp(r, -1.0, 1.0);
            } else if (warnings) {
                warnings->push_back("zero denominator for methods " + std::to_string(i) + "/" + std::to_string(j) +
                                    "; correlation set to 0");
            }
            rho(i, j) = rho(j, i) = r;
        }
    return rho;
}

// Shrinks a singular estimate toward the identity, (rho + eps I) / (1 + eps),
// with the smallest eps in 1e-8, 1e-7, ... that admits a Cholesky factor.
// Returns the eps used (0 when rho was already positive definite).
inline double ridge_to_positive_definite(Eigen::MatrixXd& rho)
{
    if (Eigen::LLT<Eigen::MatrixXd>(rho).info() == Eigen::Success) return 0.0;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(rho.rows(), rho.cols());
    for (double eps = 1e-8; eps <= 1.0; eps *= 10.0) {
        Eigen::MatrixXd r = (rho + eps * I) / (1.0 + eps);
        if (Eigen::LLT<Eigen::MatrixXd>(r).info() == Eigen::Success) {
            rho = std::move(r);
            return eps;
        }
    }
    rho = I;
    return 1.0;
}

// One matrix per modelled sector, each made usable as a prior correlation.
inline CorrelationEstimate estimate_correlations(const std::array<MaskedDifferences, kModeledSectors>& d,
                                                 std::size_t methods)
{
    CorrelationEstimate est;
    for (std::size_t s = 0; s < kModeledSectors; ++s) {
        est.matrices.rho[s] = estimate_correlation(d[s], methods, &est.warnings);
        if (const double eps = ridge_to_positive_definite(est.matrices.rho[s]); eps > 0.0) {
            std::ostringstream msg;
            msg << "correlation estimate for sector " << kSectorLabels[s] << " is singular; shrunk toward identity by "
                << eps;
            est.warnings.push_back(msg.str());
        }
    }
    return est;
}

// Heat-map data, one row per (sector, method_i, method_j).
inline void write_rho_csv(std::ostream& out, const CorrelationMatrices& c, std::span<const std::string> methods)
{
    out << "sector,method_i,method_j,rho\n";
    for (std::size_t s = 0; s < kModeledSectors; ++s)
        for (Eigen::Index i = 0; i < c.rho[s].rows(); ++i)
            for (Eigen::Index j = 0; j < c.rho[s].cols(); ++j)
                out << kSectorLabels[s] << ',' << methods[static_cast<std::size_t>(i)] << ','
                    << methods[static_cast<std::size_t>(j)] << ',' << detail::format_double(c.rho[s](i, j)) << '\n';
}

inline CorrelationMatrices read_rho_csv(std::istream& in, std::span<const std::string> methods)
{
    CorrelationMatrices c = CorrelationMatrices::identity(methods.size());
    auto method_index = [&](const std::string& label) -> Eigen::Index {
        for (std::size_t m = 0; m < methods.size(); ++m)
            if (methods[m] == label) return static_cast<Eigen::Index>(m);
        throw ValidationError("rho file: unknown method '" + label + "'");
    };
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        const auto f = detail::split_csv_line(t);
        if (f.size() != 4) throw ParseError(lineno, "rho file: expected 4 fields");
        const auto sector = parse_sector(f[0]);
        const auto v = detail::parse_double(f[3]);
        if (!sector || *sector == Sector::private_other || !v) throw ParseError(lineno, "rho file: bad row");
        c.rho[static_cast<std::size_t>(*sector)](method_index(f[1]), method_index(f[2])) = *v;
    }
    for (const auto& r : c.rho) validate_correlation(r);
    return c;
}

}  // namespace supplyshare
