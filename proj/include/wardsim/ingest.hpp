#pragma once

// Registry CSV ingestion: case-level data (one row per reporting bucket) and
// ICU occupancy reports, region filtering and preprocessing into arrivals and
// daily field series.

#include <algorithm>
#include <charconv>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "wardsim/common.hpp"
#include "wardsim/csv.hpp"
#include "wardsim/model.hpp"

namespace wardsim {

struct RawCaseRow {
  long long fid = 0;
  int id_bundesland = 0;
  std::string bundesland;
  std::string landkreis;
  std::string altersgruppe;
  std::string geschlecht;
  int anzahl_fall = 0;
  int anzahl_todesfall = 0;
  Date refdatum{};
  int id_landkreis = 0;
  std::string datenstand;
  int neuer_fall = 0;
  int neuer_todesfall = 0;
  Date meldedatum{};
  int neu_genesen = 0;
  int anzahl_genesen = 0;
  int ist_erkrankungsbeginn = 0;
  std::string altersgruppe2;
};

struct RawIcuRow {
  int bundesland = 0;
  int gemeindeschluessel = 0;
  int anzahl_meldebereiche = 0;
  int faelle_covid_aktuell = 0;
  int faelle_covid_aktuell_beatmet = 0;
  int anzahl_standorte = 0;
  int betten_frei = 0;
  int betten_belegt = 0;
  Date daten_stand{};
};

struct ArrivalRecord {
  std::string altersgruppe;
  Gender geschlecht = Gender::female;
  Date day{};
  int id_bundesland = 0;
  int id_landkreis = 0;
  int time = 0;
  int age = 0;

  friend bool operator==(const ArrivalRecord&, const ArrivalRecord&) = default;
};

/// Observed ICU occupancy on one day.
struct FieldRecord {
  double intensive_bed = 0;
  double intensive_bed_ventilation = 0;
  Date day{};

  friend bool operator==(const FieldRecord&, const FieldRecord&) = default;
};

/// 0 = whole country, 1..16 = federal state, >= 100 = county.
struct RegionId {
  int code = 0;
  bool is_country() const noexcept { return code == 0; }
  bool is_state() const noexcept { return code >= 1 && code <= 16; }
  bool is_county() const noexcept { return code >= 100; }
};

template <class Row>
struct ParseResult {
  std::vector<Row> rows;
  std::vector<std::string> warnings;
};

inline constexpr std::array<std::string_view, 18> kCaseColumns{
    "FID",        "IdBundesland", "Bundesland",     "Landkreis",  "Altersgruppe", "Geschlecht",
    "AnzahlFall", "AnzahlTodesfall", "Refdatum",    "IdLandkreis", "Datenstand",  "NeuerFall",
    "NeuerTodesfall", "Meldedatum", "NeuGenesen",  "AnzahlGenesen", "IstErkrankungsbeginn", "Altersgruppe2"};

inline constexpr std::array<std::string_view, 9> kIcuColumns{
    "bundesland",         "gemeindeschluessel", "anzahl_meldebereiche", "faelle_covid_aktuell",
    "faelle_covid_aktuell_beatmet", "anzahl_standorte", "betten_frei", "betten_belegt", "daten_stand"};

namespace detail {

template <std::size_t N>
class HeaderMap {
public:
  HeaderMap(const csv::Record& header, const std::array<std::string_view, N>& required,
            std::vector<std::string>& warnings) {
    std::unordered_map<std::string, std::size_t> found;
    for (std::size_t i = 0; i < header.fields.size(); ++i) {
      std::string name = header.fields[i];
      if (i == 0 && name.starts_with("\xEF\xBB\xBF")) name.erase(0, 3);
      found.emplace(name, i);
    }
    for (std::size_t k = 0; k < N; ++k) {
      auto it = found.find(std::string{required[k]});
      if (it == found.end()) throw FormatError("missing column '" + std::string{required[k]} + "'");
      pos_[k] = it->second;
      found.erase(it);
    }
    for (const auto& [name, i] : found) warnings.push_back("ignoring unknown column '" + name + "'");
    width_ = header.fields.size();
  }

  const std::string& get(const csv::Record& rec, std::size_t k) const { return rec.fields[pos_[k]]; }
  std::size_t width() const noexcept { return width_; }

private:
  std::array<std::size_t, N> pos_{};
  std::size_t width_ = 0;
};

template <class Int>
Int parse_int(const std::string& text, std::string_view column, std::size_t line) {
  std::string_view s{text};
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  Int value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw RowError(line, "column " + std::string{column} + ": expected integer, got '" + text + "'");
  return value;
}

inline Date parse_date_field(const std::string& text, std::string_view column, std::size_t line) {
  try {
    return parse_date(text);
  } catch (const FormatError& e) {
    throw RowError(line, "column " + std::string{column} + ": " + e.what());
  }
}

}  // namespace detail

/// Header must contain the 18 case-data columns (any order); unknown extra
/// columns are ignored with a warning.
inline ParseResult<RawCaseRow> parse_case_csv(std::istream& in) {
  ParseResult<RawCaseRow> result;
  csv::Reader reader{in};
  auto header = reader.next();
  if (!header) throw FormatError("case CSV is empty (no header row)");
  const detail::HeaderMap<18> cols{*header, kCaseColumns, result.warnings};

  while (auto rec = reader.next()) {
    const std::size_t line = rec->line;
    if (rec->fields.size() != cols.width())
      throw RowError(line, "expected " + std::to_string(cols.width()) + " fields, got " +
                               std::to_string(rec->fields.size()));
    auto str = [&](std::size_t k) -> const std::string& { return cols.get(*rec, k); };
    auto num = [&](std::size_t k) { return detail::parse_int<int>(str(k), kCaseColumns[k], line); };
    RawCaseRow row;
    row.fid = detail::parse_int<long long>(str(0), kCaseColumns[0], line);
    row.id_bundesland = num(1);
    row.bundesland = str(2);
    row.landkreis = str(3);
    row.altersgruppe = str(4);
    row.geschlecht = str(5);
    row.anzahl_fall = num(6);
    row.anzahl_todesfall = num(7);
    row.refdatum = detail::parse_date_field(str(8), kCaseColumns[8], line);
    row.id_landkreis = num(9);
    row.datenstand = str(10);
    row.neuer_fall = num(11);
    row.neuer_todesfall = num(12);
    row.meldedatum = detail::parse_date_field(str(13), kCaseColumns[13], line);
    row.neu_genesen = num(14);
    row.anzahl_genesen = num(15);
    row.ist_erkrankungsbeginn = num(16);
    row.altersgruppe2 = str(17);
    result.rows.push_back(std::move(row));
  }
  return result;
}

/// Rows with more ventilated than total COVID cases are kept, clamped, and reported.
inline ParseResult<RawIcuRow> parse_icu_csv(std::istream& in) {
  ParseResult<RawIcuRow> result;
  csv::Reader reader{in};
  auto header = reader.next();
  if (!header) throw FormatError("ICU CSV is empty (no header row)");
  const detail::HeaderMap<9> cols{*header, kIcuColumns, result.warnings};

  while (auto rec = reader.next()) {
    const std::size_t line = rec->line;
    if (rec->fields.size() != cols.width())
      throw RowError(line, "expected " + std::to_string(cols.width()) + " fields, got " +
                               std::to_string(rec->fields.size()));
    auto num = [&](std::size_t k) { return detail::parse_int<int>(cols.get(*rec, k), kIcuColumns[k], line); };
    RawIcuRow row;
    row.bundesland = num(0);
    row.gemeindeschluessel = num(1);
    row.anzahl_meldebereiche = num(2);
    row.faelle_covid_aktuell = num(3);
    row.faelle_covid_aktuell_beatmet = num(4);
    row.anzahl_standorte = num(5);
    row.betten_frei = num(6);
    row.betten_belegt = num(7);
    row.daten_stand = detail::parse_date_field(cols.get(*rec, 8), kIcuColumns[8], line);
    if (row.faelle_covid_aktuell_beatmet > row.faelle_covid_aktuell) {
      result.warnings.push_back("line " + std::to_string(line) + ": faelle_covid_aktuell_beatmet " +
                                std::to_string(row.faelle_covid_aktuell_beatmet) + " exceeds faelle_covid_aktuell " +
                                std::to_string(row.faelle_covid_aktuell) + ", clamped");
      row.faelle_covid_aktuell_beatmet = row.faelle_covid_aktuell;
    }
    result.rows.push_back(row);
  }
  return result;
}

inline ParseResult<RawCaseRow> parse_case_csv(const std::string& text) {
  std::istringstream in{text};
  return parse_case_csv(in);
}

inline ParseResult<RawIcuRow> parse_icu_csv(const std::string& text) {
  std::istringstream in{text};
  return parse_icu_csv(in);
}

namespace detail {
template <class Row, class StateOf, class CountyOf>
std::vector<Row> filter_region(const std::vector<Row>& rows, RegionId region, StateOf state_of, CountyOf county_of) {
  if (region.is_country()) return rows;
  std::vector<Row> out;
  for (const auto& r : rows) {
    const bool keep = region.is_state() ? state_of(r) == region.code
                                        : (region.is_county() && county_of(r) == region.code);
    if (keep) out.push_back(r);
  }
  return out;
}
}  // namespace detail

inline std::vector<RawCaseRow> filter_region_cases(const std::vector<RawCaseRow>& rows, RegionId region) {
  return detail::filter_region(
      rows, region, [](const RawCaseRow& r) { return r.id_bundesland; },
      [](const RawCaseRow& r) { return r.id_landkreis; });
}

inline std::vector<RawIcuRow> filter_region_icu(const std::vector<RawIcuRow>& rows, RegionId region) {
  return detail::filter_region(
      rows, region, [](const RawIcuRow& r) { return r.bundesland; },
      [](const RawIcuRow& r) { return r.gemeindeschluessel; });
}

/// Representative age (years) for a registry age group. A80+ maps to 90 and
/// unknown groups to 47.
inline int map_age_group(std::string_view group) {
  if (group == "A00-A04") return 2;
  if (group == "A05-A14") return 10;
  if (group == "A15-A34") return 25;
  if (group == "A35-A59") return 47;
  if (group == "A60-A79") return 70;
  if (group == "A80+") return 90;
  return 47;
}

enum class DaySource { refdatum, meldedatum };

struct PreprocessOptions {
  std::optional<Date> start;
  std::optional<Date> end;
  DaySource day_source = DaySource::refdatum;
};

struct PreprocessResult {
  std::vector<ArrivalRecord> arrivals;
  std::vector<std::string> warnings;
  std::size_t dropped_nonpositive = 0;
  std::size_t dropped_gender = 0;
};

/// Expands case rows into one arrival per infected individual, sorted by day;
/// time counts whole days from the earliest retained day.
inline PreprocessResult preprocess_cases(const std::vector<RawCaseRow>& rows, const PreprocessOptions& opt = {}) {
  if (opt.start && opt.end && *opt.start > *opt.end) throw ValidationError("start date after end date");
  PreprocessResult result;
  struct Kept {
    const RawCaseRow* row;
    Gender gender;
    Date day;
  };
  std::vector<Kept> kept;
  for (const auto& r : rows) {
    if (r.anzahl_fall <= 0) {
      ++result.dropped_nonpositive;
      continue;
    }
    auto gender = parse_gender(r.geschlecht);
    if (!gender) {
      ++result.dropped_gender;
      continue;
    }
    const Date day = opt.day_source == DaySource::refdatum ? r.refdatum : r.meldedatum;
    if ((opt.start && day < *opt.start) || (opt.end && day > *opt.end)) continue;
    kept.push_back({&r, *gender, day});
  }
  if (result.dropped_nonpositive > 0)
    result.warnings.push_back("dropped " + std::to_string(result.dropped_nonpositive) +
                              " rows with non-positive AnzahlFall");
  if (result.dropped_gender > 0)
    result.warnings.push_back("dropped " + std::to_string(result.dropped_gender) +
                              " rows with Geschlecht outside {M,W}");
  if (kept.empty()) throw EmptyDatasetError("no case rows left after preprocessing");

  std::stable_sort(kept.begin(), kept.end(), [](const Kept& a, const Kept& b) { return a.day < b.day; });
  const Date origin = kept.front().day;
  for (const auto& k : kept) {
    ArrivalRecord rec{k.row->altersgruppe,     k.gender,
                      k.day,                   k.row->id_bundesland,
                      k.row->id_landkreis,     days_between(origin, k.day),
                      map_age_group(k.row->altersgruppe)};
    for (int i = 0; i < k.row->anzahl_fall; ++i) result.arrivals.push_back(rec);
  }
  return result;
}

/// Daily ICU totals: ventilated = sum beatmet, non-ventilated = sum (aktuell - beatmet).
inline std::vector<FieldRecord> aggregate_icu_beds(const std::vector<RawIcuRow>& rows) {
  std::map<Date, FieldRecord> by_day;
  for (const auto& r : rows) {
    auto& f = by_day[r.daten_stand];
    f.day = r.daten_stand;
    f.intensive_bed_ventilation += r.faelle_covid_aktuell_beatmet;
    f.intensive_bed += r.faelle_covid_aktuell - r.faelle_covid_aktuell_beatmet;
  }
  std::vector<FieldRecord> out;
  out.reserve(by_day.size());
  for (auto& [day, f] : by_day) out.push_back(f);
  return out;
}

inline void to_json(nlohmann::json& j, const ArrivalRecord& a) {
  j = {{"Altersgruppe", a.altersgruppe}, {"Geschlecht", std::string{to_string(a.geschlecht)}},
       {"Day", format_date(a.day)},       {"IdBundesland", a.id_bundesland},
       {"IdLandkreis", a.id_landkreis},   {"time", a.time},
       {"Age", a.age}};
}

inline void from_json(const nlohmann::json& j, ArrivalRecord& a) {
  a.altersgruppe = j.at("Altersgruppe").get<std::string>();
  auto g = parse_gender(j.at("Geschlecht").get<std::string>());
  if (!g) throw FormatError("Geschlecht must be M or W");
  a.geschlecht = *g;
  a.day = parse_date(j.at("Day").get<std::string>());
  a.id_bundesland = j.at("IdBundesland").get<int>();
  a.id_landkreis = j.at("IdLandkreis").get<int>();
  a.time = j.at("time").get<int>();
  a.age = j.at("Age").get<int>();
}

inline void to_json(nlohmann::json& j, const FieldRecord& f) {
  j = {{"intensiveBed", f.intensive_bed},
       {"intensiveBedVentilation", f.intensive_bed_ventilation},
       {"Day", format_date(f.day)}};
}

inline void from_json(const nlohmann::json& j, FieldRecord& f) {
  f.intensive_bed = j.at("intensiveBed").get<double>();
  f.intensive_bed_ventilation = j.at("intensiveBedVentilation").get<double>();
  f.day = parse_date(j.at("Day").get<std::string>());
}

inline void write_arrivals_csv(std::ostream& out, const std::vector<ArrivalRecord>& arrivals) {
  out << "Altersgruppe,Geschlecht,Day,IdBundesland,IdLandkreis,time,Age\n";
  for (const auto& a : arrivals)
    out << csv::quote(a.altersgruppe) << ',' << to_string(a.geschlecht) << ',' << format_date(a.day) << ','
        << a.id_bundesland << ',' << a.id_landkreis << ',' << a.time << ',' << a.age << '\n';
}

}  // namespace wardsim
