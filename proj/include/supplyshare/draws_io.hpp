#pragma once

// Posterior draws on disk. The binary file is self-contained: a JSON block
// carries the model structure, correlation matrices and sampler settings, so
// shares can be recomputed without the original data file.
//
//   "SSDRAWS1" | u32 json_length | json | u64 n_chains |
//   per chain: u64 n_draws, u64 n_params, n_draws * n_params f64
//
// Integers and doubles are little-endian.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "supplyshare/correlation.hpp"
#include "supplyshare/detail/text.hpp"
#include "supplyshare/errors.hpp"
#include "supplyshare/latent.hpp"
#include "supplyshare/sampler.hpp"

namespace supplyshare {

inline constexpr char kDrawsMagic[8] = {'S', 'S', 'D', 'R', 'A', 'W', 'S', '1'};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v)
{
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    out.write(b, 8);
}

inline void put_u32(std::ostream& out, std::uint32_t v)
{
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    out.write(b, 4);
}

inline std::uint64_t get_u64(std::istream& in)
{
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("draws file truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline std::uint32_t get_u32(std::istream& in)
{
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("draws file truncated");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m)
{
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto r = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j)
{
    const auto n = static_cast<Eigen::Index>(j.size());
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (j[static_cast<std::size_t>(i)].size() != static_cast<std::size_t>(n))
            throw ValidationError("correlation matrix in draws file is not square");
        for (Eigen::Index k = 0; k < n; ++k) m(i, k) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
    }
    return m;
}

}  // namespace detail

inline nlohmann::json structure_json(const PosteriorDraws& d)
{
    const auto& ms = *d.structure;
    nlohmann::json j;
    j["format"] = 1;
    j["model"] = std::string(model_kind_label(ms.kind));
    j["window"] = {ms.basis_settings.window.start, ms.basis_settings.window.end};
    j["spacing"] = ms.basis_settings.spacing;
    j["boundary"] = ms.basis_settings.boundary == KnotBoundary::clamped ? "clamped" : "extended";
    j["countries"] = ms.countries;
    j["regions"] = ms.regions;
    j["region_of"] = ms.region_of;
    j["methods"] = ms.methods;
    j["reference_years"] = ms.reference_years;
    j["year_grid"] = ms.year_grid;
    j["basis_count"] = nlohmann::json::array();
    for (std::size_t c = 0; c < ms.country_count(); ++c) j["basis_count"].push_back(ms.layout->differences(c) + 1);
    j["rho"] = {detail::matrix_json(d.rho.rho[0]), detail::matrix_json(d.rho.rho[1])};
    const auto& s = d.config;
    j["sampler"] = {{"n_chains", s.n_chains}, {"n_warmup", s.n_warmup},   {"n_samples", s.n_samples},
                    {"thin", s.thin},         {"seed", s.seed},           {"block_delta_updates", s.block_delta_updates},
                    {"curve_updates", s.curve_updates}};
    j["warnings"] = d.warnings;
    j["provenance"] = d.provenance;
    auto acc = nlohmann::json::array();
    for (const auto& c : d.chains) {
        auto a = nlohmann::json::array();
        for (double v : c.acceptance) a.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
        acc.push_back(std::move(a));
    }
    j["acceptance"] = std::move(acc);
    return j;
}

inline void write_draws_binary(std::ostream& out, const PosteriorDraws& d)
{
    const std::string js = structure_json(d).dump();
    out.write(kDrawsMagic, 8);
    detail::put_u32(out, static_cast<std::uint32_t>(js.size()));
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    detail::put_u64(out, d.chains.size());
    for (const auto& c : d.chains) {
        detail::put_u64(out, c.n_draws);
        detail::put_u64(out, c.n_params);
        for (double v : c.values) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw IoError("failed writing draws");
}

inline PosteriorDraws read_draws_binary(std::istream& in)
{
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kDrawsMagic)) throw IoError("not a draws file (bad magic)");
    const std::uint32_t len = detail::get_u32(in);
    std::string js(len, '\0');
    if (!in.read(js.data(), len)) throw IoError("draws file truncated");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("draws file metadata is not valid JSON: ") + e.what());
    }

    PosteriorDraws d;
    try {
        const auto kind = parse_model_kind(j.at("model").get<std::string>());
        if (!kind) throw ValidationError("unknown model kind in draws file");
        BasisSettings bs;
        bs.window = {j.at("window")[0].get<double>(), j.at("window")[1].get<double>()};
        bs.spacing = j.at("spacing").get<double>();
        bs.boundary = j.at("boundary").get<std::string>() == "clamped" ? KnotBoundary::clamped : KnotBoundary::extended;
        d.structure = std::make_shared<const ModelStructure>(assemble_structure(
            *kind, bs, j.at("countries").get<std::vector<std::string>>(), j.at("regions").get<std::vector<std::string>>(),
            j.at("region_of").get<std::vector<std::size_t>>(), j.at("methods").get<std::vector<std::string>>(),
            j.at("reference_years").get<std::vector<double>>(), j.at("year_grid").get<std::vector<double>>()));
        for (std::size_t s = 0; s < kModeledSectors; ++s) d.rho.rho[s] = detail::matrix_from_json(j.at("rho")[s]);
        const auto& sj = j.at("sampler");
        d.config.n_chains = sj.at("n_chains").get<std::size_t>();
        d.config.n_warmup = sj.at("n_warmup").get<std::size_t>();
        d.config.n_samples = sj.at("n_samples").get<std::size_t>();
        d.config.thin = sj.at("thin").get<std::size_t>();
        d.config.seed = sj.at("seed").get<std::uint64_t>();
        d.config.block_delta_updates = sj.at("block_delta_updates").get<bool>();
        d.config.curve_updates = sj.value("curve_updates", true);
        d.warnings = j.value("warnings", std::vector<std::string>{});
        d.provenance = j.value("provenance", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("draws file metadata incomplete: ") + e.what());
    }

    const std::size_t P = d.structure->layout->size();
    const std::uint64_t n_chains = detail::get_u64(in);
    if (n_chains > 4096) throw IoError("draws file: implausible chain count");
    const auto acc = j.value("acceptance", nlohmann::json::array());
    for (std::uint64_t c = 0; c < n_chains; ++c) {
        ChainDraws cd;
        cd.n_draws = detail::get_u64(in);
        cd.n_params = detail::get_u64(in);
        if (cd.n_params != P) throw IoError("draws file: parameter count does not match the stored structure");
        cd.values.resize(cd.n_draws * cd.n_params);
        for (auto& v : cd.values) v = std::bit_cast<double>(detail::get_u64(in));
        cd.acceptance.assign(P, std::numeric_limits<double>::quiet_NaN());
        if (c < acc.size() && acc[c].size() == P)
            for (std::size_t i = 0; i < P; ++i)
                if (!acc[c][i].is_null()) cd.acceptance[i] = acc[c][i].get<double>();
        d.chains.push_back(std::move(cd));
    }
    return d;
}

inline void save_draws(const std::filesystem::path& path, const PosteriorDraws& d)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    write_draws_binary(out, d);
}

inline PosteriorDraws load_draws(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open draws file '" + path.string() + "'");
    return read_draws_binary(in);
}

// Long format, one row per (chain, iteration, parameter).
inline void write_draws_csv(std::ostream& out, const PosteriorDraws& d)
{
    const auto& L = *d.structure->layout;
    std::vector<std::string> names(L.size());
    for (std::size_t p = 0; p < L.size(); ++p) names[p] = detail::csv_field(L.name(p));
    out << "chain,iter,parameter,value\n";
    for (std::size_t c = 0; c < d.chains.size(); ++c)
        for (std::size_t i = 0; i < d.chains[c].n_draws; ++i)
            for (std::size_t p = 0; p < L.size(); ++p)
                out << c << ',' << i << ',' << names[p] << ',' << detail::format_double(d.chains[c].at(i, p)) << '\n';
}

}  // namespace supplyshare
