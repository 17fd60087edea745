#pragma once

// Scaling service statistics by the estimated supply share, and estimated
// modern use (users over women of reproductive age).

#include <cmath>
#include <cstddef>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "supplyshare/data_ingest.hpp"
#include "supplyshare/detail/text.hpp"
#include "supplyshare/errors.hpp"
#include "supplyshare/summary.hpp"

namespace supplyshare {

inline constexpr double kMinAdjustShare = 1e-6;

struct ServiceStatRecord {
    std::string country;
    std::size_t method = 0;
    Sector sector = Sector::public_sector;
    double year = 0.0;
    double y_raw = 0.0;         // user-equivalents reported through this sector
    std::optional<double> wra;  // women of reproductive age
};

struct AdjustedDraws {
    std::vector<double> values;
    Interval summary;
};

inline AdjustedDraws adjust_service_stat(double y_raw, std::span<const double> p_draws)
{
    if (!(y_raw >= 0.0)) throw ValidationError("service statistic must be non-negative");
    if (p_draws.empty()) throw ValidationError("no supply-share draws to adjust with");
    AdjustedDraws out;
    out.values.reserve(p_draws.size());
    for (double p : p_draws) {
        if (!(p > kMinAdjustShare)) throw DomainError("supply share too small to adjust");
        out.values.push_back(y_raw / p);
    }
    out.summary = summarize_sample(out.values);
    return out;
}

// Legacy behaviour: one share value (for example the latest survey point).
inline double adjust_service_stat_point(double y_raw, double p)
{
    if (!(y_raw >= 0.0)) throw ValidationError("service statistic must be non-negative");
    if (!(p > kMinAdjustShare)) throw DomainError("supply share too small to adjust");
    return y_raw / p;
}

struct EmuDraws {
    std::vector<double> values;
    Interval summary;
    bool exceeds_one = false;  // some draw has more users than women
};

inline EmuDraws compute_emu(std::span<const double> user_draws, double wra)
{
    if (!(wra > 0.0)) throw ValidationError("women of reproductive age must be positive");
    if (user_draws.empty()) throw ValidationError("no user draws");
    EmuDraws out;
    out.values.reserve(user_draws.size());
    for (double u : user_draws) {
        const double e = u / wra;
        out.exceeds_one = out.exceeds_one || e > 1.0;
        out.values.push_back(e);
    }
    out.summary = summarize_sample(out.values);
    return out;
}

inline constexpr std::string_view kServiceStatHeader = "country,method,sector,year,y_raw,wra";

// wra may be left empty.
inline std::vector<ServiceStatRecord> parse_service_stats(std::istream& in)
{
    std::vector<ServiceStatRecord> out;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        if (!header) {
            if (t != kServiceStatHeader)
                throw ParseError(lineno, "expected header '" + std::string(kServiceStatHeader) + "'");
            header = true;
            continue;
        }
        const auto f = detail::split_csv_line(t);
        if (f.size() != 6) throw ParseError(lineno, "expected 6 fields");
        ServiceStatRecord r;
        r.country = f[0];
        const auto m = parse_method(f[1]);
        const auto s = parse_sector(f[2]);
        if (!m) throw ValidationError("line " + std::to_string(lineno) + ": unknown method '" + f[1] + "'");
        if (!s) throw ValidationError("line " + std::to_string(lineno) + ": unknown sector '" + f[2] + "'");
        r.method = *m;
        r.sector = *s;
        const auto year = detail::parse_double(f[3]);
        const auto y = detail::parse_double(f[4]);
        if (!year || !y) throw ParseError(lineno, "non-numeric year or y_raw");
        r.year = *year;
        r.y_raw = *y;
        if (r.y_raw < 0.0) throw ValidationError("line " + std::to_string(lineno) + ": y_raw must be non-negative");
        if (!f[5].empty()) {
            const auto w = detail::parse_double(f[5]);
            if (!w) throw ParseError(lineno, "non-numeric wra");
            if (!(*w > 0.0)) throw ValidationError("line " + std::to_string(lineno) + ": wra must be positive");
            r.wra = *w;
        }
        out.push_back(std::move(r));
    }
    if (!header) throw ParseError(lineno, "missing header");
    return out;
}

}  // namespace supplyshare
