#pragma once

// Survey-observation database: CSV ingestion, validation and indexing.
//
// Proportions and standard errors are held as fractions throughout. Sector
// "private_other" rows are kept (plots, validation of the derived share) but
// never enter the likelihood.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "supplyshare/detail/text.hpp"
#include "supplyshare/errors.hpp"

namespace supplyshare {

enum class Sector : int { public_sector = 0, private_medical = 1, private_other = 2 };

inline constexpr std::size_t kSectorCount = 3;
inline constexpr std::size_t kModeledSectors = 2;

inline constexpr std::array<std::string_view, kSectorCount> kSectorLabels = {
    "public", "private_medical", "private_other"};

inline constexpr std::array<std::string_view, 5> kMethodLabels = {
    "female_sterilization", "oc_pills", "implants", "iud", "injectables"};

inline constexpr std::string_view kObservationHeader =
    "country,region,method,sector,year,proportion,se";

inline std::string_view sector_label(Sector s) { return kSectorLabels[static_cast<std::size_t>(s)]; }

inline std::optional<Sector> parse_sector(std::string_view label)
{
    for (std::size_t i = 0; i < kSectorLabels.size(); ++i)
        if (kSectorLabels[i] == label) return static_cast<Sector>(i);
    return std::nullopt;
}

inline std::optional<std::size_t> parse_method(std::string_view label)
{
    for (std::size_t i = 0; i < kMethodLabels.size(); ++i)
        if (kMethodLabels[i] == label) return i;
    return std::nullopt;
}

struct YearWindow {
    double start = 1990.0;
    double end = 2025.0;

    bool contains(double year) const { return year >= start && year <= end; }
    friend bool operator==(const YearWindow&, const YearWindow&) = default;
};

struct Observation {
    std::size_t country = 0;
    std::size_t region = 0;
    std::size_t method = 0;
    Sector sector = Sector::public_sector;
    double year = 0.0;
    double proportion = 0.0;
    double se = 0.0;
    std::size_t line = 0;  // source line, 0 for programmatic rows

    bool in_likelihood() const { return sector != Sector::private_other; }
};

struct CountryInfo {
    std::string name;
    std::size_t region = 0;
    std::optional<double> most_recent_survey_year;
};

struct IngestNote {
    std::size_t line = 0;
    std::string code;
    std::string message;
};

enum class ProportionUnits { fraction, percent, automatic };

struct IngestConfig {
    YearWindow window;
    ProportionUnits units = ProportionUnits::fraction;
    // Sector shares of one (country, method, year) survey must close to 1
    // within this tolerance when all three sectors are reported.
    double closure_tolerance = 0.01;
    // Shares of exactly 0 or 1 are moved inside the open unit interval.
    double boundary_nudge = 1e-4;
};

struct Dataset {
    std::vector<Observation> observations;
    std::vector<CountryInfo> countries;
    std::vector<std::string> regions;
    std::vector<std::string> methods{kMethodLabels.begin(), kMethodLabels.end()};
    std::vector<double> year_grid;
    std::vector<IngestNote> notes;

    std::size_t method_count() const { return methods.size(); }

    std::optional<std::size_t> find_country(std::string_view name) const
    {
        for (std::size_t i = 0; i < countries.size(); ++i)
            if (countries[i].name == name) return i;
        return std::nullopt;
    }
};

inline std::vector<double> integer_year_grid(const YearWindow& w)
{
    std::vector<double> grid;
    for (double y = std::ceil(w.start); y <= w.end; y += 1.0) grid.push_back(y);
    return grid;
}

// --- bundled country metadata -------------------------------------------

struct BundledCountry {
    std::string_view name;
    std::string_view region;  // UNSD intermediate region
    int surveys;
    int most_recent_survey;
};

inline constexpr std::array<BundledCountry, 30> kBundledCountries = {{
    {"Afghanistan", "Southern Asia", 1, 2015},
    {"Benin", "Western Africa", 5, 2017},
    {"Burkina Faso", "Western Africa", 4, 2010},
    {"Cameroon", "Middle Africa", 5, 2018},
    {"Congo", "Middle Africa", 1, 2005},
    {"Congo Democratic Republic", "Middle Africa", 2, 2013},
    {"Cote d'Ivoire", "Western Africa", 3, 2011},
    {"Ethiopia", "Eastern Africa", 5, 2019},
    {"Ghana", "Western Africa", 5, 2014},
    {"Guinea", "Western Africa", 4, 2018},
    {"India", "Southern Asia", 4, 2005},
    {"Kenya", "Eastern Africa", 5, 2014},
    {"Liberia", "Western Africa", 4, 2019},
    {"Madagascar", "Eastern Africa", 4, 2008},
    {"Malawi", "Eastern Africa", 5, 2015},
    {"Mali", "Western Africa", 5, 2018},
    {"Mozambique", "Eastern Africa", 3, 2011},
    {"Myanmar", "South-eastern Asia", 1, 2015},
    {"Nepal", "Southern Asia", 5, 2016},
    {"Niger", "Western Africa", 4, 2012},
    {"Nigeria", "Western Africa", 5, 2018},
    {"Pakistan", "Southern Asia", 4, 2017},
    {"Philippines", "South-eastern Asia", 6, 2017},
    {"Rwanda", "Eastern Africa", 6, 2019},
    {"Senegal", "Western Africa", 10, 2019},
    {"Sierra Leone", "Western Africa", 3, 2019},
    {"Tanzania", "Eastern Africa", 6, 2015},
    {"Togo", "Western Africa", 2, 2013},
    {"Uganda", "Eastern Africa", 5, 2016},
    {"Zimbabwe", "Eastern Africa", 5, 2015},
}};

inline std::optional<std::string_view> bundled_region(std::string_view country)
{
    for (const auto& c : kBundledCountries)
        if (c.name == country) return c.region;
    return std::nullopt;
}

// --- dataset assembly ------------------------------------------------------

// Observation as it appears in a file, before categorical indexing.
struct ObservationRecord {
    std::string country;
    std::string region;  // empty -> bundled lookup
    std::size_t method = 0;
    Sector sector = Sector::public_sector;
    double year = 0.0;
    double proportion = 0.0;
    double se = 0.0;
    std::size_t line = 0;
};

namespace detail {

inline void refresh_recent_years(Dataset& ds)
{
    for (auto& c : ds.countries) c.most_recent_survey_year.reset();
    for (const auto& o : ds.observations) {
        auto& recent = ds.countries[o.country].most_recent_survey_year;
        if (!recent || o.year > *recent) recent = o.year;
    }
}

inline std::string where(std::size_t line)
{
    return line ? "line " + std::to_string(line) + ": " : std::string{};
}

}  // namespace detail

// Validates and indexes records. Countries and regions are ordered by name so
// indices are stable regardless of row order.
inline Dataset build_dataset(std::vector<ObservationRecord> records, const IngestConfig& cfg = {})
{
    Dataset ds;
    ds.year_grid = integer_year_grid(cfg.window);

    std::map<std::string, std::string> region_of;
    for (const auto& r : records) {
        std::string region = r.region;
        if (region.empty()) {
            auto b = bundled_region(r.country);
            if (!b)
                throw ValidationError(detail::where(r.line) + "no region given for country '" + r.country +
                                      "' and it is not in the bundled lookup");
            region = std::string(*b);
        }
        auto [it, inserted] = region_of.emplace(r.country, region);
        if (!inserted && it->second != region)
            throw ValidationError(detail::where(r.line) + "country '" + r.country +
                                  "' assigned to two regions ('" + it->second + "', '" + region + "')");
    }

    std::map<std::string, std::size_t> region_index;
    for (const auto& [country, region] : region_of) region_index.emplace(region, 0);
    for (auto& [name, idx] : region_index) {
        idx = ds.regions.size();
        ds.regions.push_back(name);
    }
    std::map<std::string, std::size_t> country_index;
    for (const auto& [country, region] : region_of) {
        country_index[country] = ds.countries.size();
        ds.countries.push_back({country, region_index.at(region), std::nullopt});
    }

    // Closure check on raw values, before any boundary nudging.
    std::map<std::tuple<std::string, std::size_t, double>, std::array<std::optional<double>, kSectorCount>> surveys;
    for (const auto& r : records) {
        if (!(r.proportion >= 0.0 && r.proportion <= 1.0))
            throw ValidationError(detail::where(r.line) + "proportion " + detail::format_double(r.proportion) +
                                  " outside [0, 1]");
        if (!(r.se > 0.0))
            throw ValidationError(detail::where(r.line) + "standard error must be > 0, got " +
                                  detail::format_double(r.se));
        if (!cfg.window.contains(r.year))
            throw ValidationError(detail::where(r.line) + "year " + detail::format_double(r.year) +
                                  " outside estimation window [" + detail::format_double(cfg.window.start) + ", " +
                                  detail::format_double(cfg.window.end) + "]");
        if (r.method >= kMethodLabels.size())
            throw ValidationError(detail::where(r.line) + "unknown method index");
        surveys[{r.country, r.method, r.year}][static_cast<std::size_t>(r.sector)] = r.proportion;
    }
    for (const auto& [key, shares] : surveys) {
        if (!(shares[0] && shares[1] && shares[2])) continue;
        const double total = *shares[0] + *shares[1] + *shares[2];
        if (std::abs(total - 1.0) > cfg.closure_tolerance)
            throw ValidationError("sector shares for " + std::get<0>(key) + "/" +
                                  std::string(kMethodLabels[std::get<1>(key)]) + "/" +
                                  detail::format_double(std::get<2>(key)) + " sum to " +
                                  detail::format_double(total));
    }

    ds.observations.reserve(records.size());
    for (const auto& r : records) {
        Observation o;
        o.country = country_index.at(r.country);
        o.region = ds.countries[o.country].region;
        o.method = r.method;
        o.sector = r.sector;
        o.year = r.year;
        o.proportion = r.proportion;
        o.se = r.se;
        o.line = r.line;
        const double lo = cfg.boundary_nudge, hi = 1.0 - cfg.boundary_nudge;
        if (o.proportion < lo || o.proportion > hi) {
            const double nudged = std::clamp(o.proportion, lo, hi);
            ds.notes.push_back({r.line, "nudged_boundary",
                                "proportion " + detail::format_double(o.proportion) + " moved to " +
                                    detail::format_double(nudged)});
            o.proportion = nudged;
        }
        ds.observations.push_back(o);
    }
    detail::refresh_recent_years(ds);
    return ds;
}

// Same tables, different observation subset; recent survey years recomputed.
inline Dataset with_observations(const Dataset& base, std::vector<Observation> obs)
{
    Dataset ds;
    ds.countries = base.countries;
    ds.regions = base.regions;
    ds.methods = base.methods;
    ds.year_grid = base.year_grid;
    ds.observations = std::move(obs);
    detail::refresh_recent_years(ds);
    return ds;
}

inline Dataset parse_observations(std::istream& in, const IngestConfig& cfg = {})
{
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    std::vector<ObservationRecord> records;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        if (!have_header) {
            if (t != kObservationHeader)
                throw ParseError(lineno, "header must be '" + std::string(kObservationHeader) + "'");
            have_header = true;
            continue;
        }
        const auto f = detail::split_csv_line(t);
        if (f.size() != 7)
            throw ParseError(lineno, "expected 7 fields, found " + std::to_string(f.size()));
        ObservationRecord r;
        r.line = lineno;
        r.country = f[0];
        r.region = f[1];
        if (r.country.empty()) throw ParseError(lineno, "empty country");
        auto method = parse_method(f[2]);
        if (!method) throw ValidationError("line " + std::to_string(lineno) + ": unknown method '" + f[2] + "'");
        r.method = *method;
        auto sector = parse_sector(f[3]);
        if (!sector) throw ValidationError("line " + std::to_string(lineno) + ": unknown sector '" + f[3] + "'");
        r.sector = *sector;
        auto year = detail::parse_double(f[4]);
        auto prop = detail::parse_double(f[5]);
        auto se = detail::parse_double(f[6]);
        if (!year || !prop || !se) throw ParseError(lineno, "non-numeric year, proportion or se");
        r.year = *year;
        r.proportion = *prop;
        r.se = *se;
        records.push_back(std::move(r));
    }
    if (!have_header) throw ParseError(lineno + 1, "missing header row");

    bool percent = cfg.units == ProportionUnits::percent;
    if (cfg.units == ProportionUnits::automatic)
        percent = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.proportion > 1.0; });
    if (percent)
        for (auto& r : records) {
            r.proportion /= 100.0;
            r.se /= 100.0;
        }
    Dataset ds = build_dataset(std::move(records), cfg);
    if (percent) ds.notes.insert(ds.notes.begin(), {0, "percent_input", "proportions and se divided by 100"});
    return ds;
}

inline Dataset parse_observations(const std::filesystem::path& path, const IngestConfig& cfg = {})
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open observation file: " + path.string());
    return parse_observations(in, cfg);
}

inline void write_observations_csv(std::ostream& out, const Dataset& ds)
{
    out << kObservationHeader << '\n';
    for (const auto& o : ds.observations) {
        out << detail::csv_field(ds.countries[o.country].name) << ',' << detail::csv_field(ds.regions[o.region])
            << ',' << kMethodLabels[o.method] << ',' << sector_label(o.sector) << ','
            << detail::format_double(o.year) << ',' << detail::format_double(o.proportion) << ','
            << detail::format_double(o.se) << '\n';
    }
}

// --- standard-error summary --------------------------------------------------

struct SeSummary {
    double min = 0.0;
    double max = 0.0;
    double median = 0.0;
    std::vector<std::optional<double>> mean_by_method;  // empty slot: no rows
};

inline SeSummary summarize_se(const Dataset& ds)
{
    if (ds.observations.empty()) throw ValidationError("summarize_se: dataset has no observations");
    std::vector<double> se;
    se.reserve(ds.observations.size());
    std::vector<double> sum(ds.method_count(), 0.0);
    std::vector<std::size_t> count(ds.method_count(), 0);
    for (const auto& o : ds.observations) {
        se.push_back(o.se);
        sum[o.method] += o.se;
        ++count[o.method];
    }
    std::sort(se.begin(), se.end());
    SeSummary s;
    s.min = se.front();
    s.max = se.back();
    const std::size_t n = se.size();
    s.median = n % 2 ? se[n / 2] : 0.5 * (se[n / 2 - 1] + se[n / 2]);
    for (std::size_t m = 0; m < sum.size(); ++m)
        s.mean_by_method.push_back(count[m] ? std::optional<double>(sum[m] / count[m]) : std::nullopt);
    return s;
}

}  // namespace supplyshare
