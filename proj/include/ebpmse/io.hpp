#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/tokenizer.hpp>
#include <json.hpp>

#include "ebpmse/dataset.hpp"
#include "ebpmse/ebp.hpp"
#include "ebpmse/error.hpp"
#include "ebpmse/intervals.hpp"
#include "ebpmse/mse.hpp"
#include "ebpmse/ner_model.hpp"

namespace ebpmse {

// ---------------------------------------------------------------------------
// Number formatting. Doubles use the shortest representation that parses
// back to the same value; infinities are written as Inf / -Inf.

inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s == "Inf" || s == "+Inf") return std::numeric_limits<double>::infinity();
  if (s == "-Inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  if (b != e && *b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e || b == e) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_integer(const std::string& s) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------------------
// Dataset CSV. Columns: area_id, unit_id, y, x_1..x_p, then the optional
// w_unit, w_area, v_scale, is_sampled. Without is_sampled a unit is sampled
// exactly when y is present.

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  using Tok = boost::tokenizer<boost::escaped_list_separator<char>>;
  std::vector<std::string> out;
  try {
    for (const auto& f : Tok(line)) out.push_back(f);
  } catch (const boost::escaped_list_error& e) {
    throw ValidationError(std::string("malformed CSV field: ") + e.what());
  }
  return out;
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

}  // namespace detail

inline std::vector<UnitRecord> read_records(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("input CSV is empty (header required)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv(detail::trim(line));
  std::map<std::string, std::size_t> col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = detail::trim(header[c]);
    if (!col.emplace(name, c).second) throw ValidationError("header: duplicate column '" + name + "'");
  }
  for (const char* req : {"area_id", "unit_id", "y", "x_1"})
    if (!col.count(req)) throw ValidationError(std::string("header: missing required column '") + req + "'");
  std::size_t p = 0;
  while (col.count("x_" + std::to_string(p + 1))) ++p;
  const std::set<std::string> optional{"w_unit", "w_area", "v_scale", "is_sampled"};
  for (const auto& [name, c] : col) {
    const bool is_x = name.rfind("x_", 0) == 0;
    if (is_x) {
      const auto k = parse_integer(name.substr(2));
      if (!k || *k < 1 || static_cast<std::size_t>(*k) > p)
        throw ValidationError("header: covariate columns must be x_1..x_p without gaps ('" + name + "')");
    } else if (name != "area_id" && name != "unit_id" && name != "y" && !optional.count(name)) {
      throw ValidationError("header: unknown column '" + name + "'");
    }
  }
  auto at = [&](const std::vector<std::string>& f, const std::string& name) -> std::optional<std::string> {
    const auto it = col.find(name);
    if (it == col.end()) return std::nullopt;
    auto v = detail::trim(f[it->second]);
    if (v.empty()) return std::nullopt;
    return v;
  };

  std::vector<UnitRecord> out;
  std::set<std::pair<AreaId, UnitId>> seen;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "row " + std::to_string(row) + ": ";
    const auto f = detail::split_csv(line);
    if (f.size() != header.size())
      throw ValidationError(where + "expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(f.size()));
    auto real = [&](const std::string& name) -> std::optional<double> {
      const auto s = at(f, name);
      if (!s) return std::nullopt;
      const auto v = parse_double(*s);
      if (!v || !std::isfinite(*v)) throw ValidationError(where + name + " is not a finite number: '" + *s + "'");
      return v;
    };
    auto integer = [&](const std::string& name) {
      const auto s = at(f, name);
      if (!s) throw ValidationError(where + name + " is missing");
      const auto v = parse_integer(*s);
      if (!v) throw ValidationError(where + name + " is not an integer: '" + *s + "'");
      return *v;
    };
    UnitRecord r;
    r.area_id = integer("area_id");
    r.unit_id = integer("unit_id");
    if (!seen.emplace(r.area_id, r.unit_id).second)
      throw ValidationError(where + "duplicate (area_id, unit_id) = (" + std::to_string(r.area_id) + ", " +
                            std::to_string(r.unit_id) + ")");
    r.y = real("y");
    for (std::size_t k = 1; k <= p; ++k) {
      const auto v = real("x_" + std::to_string(k));
      if (!v) throw ValidationError(where + "x_" + std::to_string(k) + " is missing");
      r.x.push_back(*v);
    }
    r.unit_weight = real("w_unit");
    r.area_weight = real("w_area");
    if (r.unit_weight && !(*r.unit_weight > 0.0)) throw ValidationError(where + "w_unit must be positive");
    if (r.area_weight && !(*r.area_weight > 0.0)) throw ValidationError(where + "w_area must be positive");
    if (const auto v = real("v_scale")) {
      if (!(*v > 0.0)) throw ValidationError(where + "v_scale must be positive");
      r.variance_scale = *v;
    }
    if (const auto s = at(f, "is_sampled")) {
      if (*s == "1" || *s == "true") r.sampled = true;
      else if (*s == "0" || *s == "false") r.sampled = false;
      else throw ValidationError(where + "is_sampled must be 0 or 1");
    } else {
      r.sampled = r.y.has_value();
    }
    if (r.sampled && !r.y) throw ValidationError(where + "sampled unit without y");
    if (!r.sampled && r.y) throw ValidationError(where + "y given for a nonsampled unit");
    if (!r.sampled && r.unit_weight) throw ValidationError(where + "w_unit given for a nonsampled unit");
    out.push_back(std::move(r));
  }
  return out;
}

inline SampleDataset ingest(std::istream& in) { return SampleDataset::from_records(read_records(in)); }

inline SampleDataset ingest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open input '" + path + "'");
  return ingest(in);
}

inline void write_dataset(std::ostream& out, const SampleDataset& data) {
  const auto p = data.p();
  out << "area_id,unit_id,y";
  for (Eigen::Index k = 1; k <= p; ++k) out << ",x_" << k;
  out << ",w_unit,w_area,v_scale,is_sampled\n";
  for (const auto& r : data.to_records()) {
    out << r.area_id << ',' << r.unit_id << ',' << (r.y ? format_double(*r.y) : "");
    for (double v : r.x) out << ',' << format_double(v);
    out << ',' << (r.unit_weight ? format_double(*r.unit_weight) : "") << ','
        << (r.area_weight ? format_double(*r.area_weight) : "") << ',' << format_double(r.variance_scale) << ','
        << (r.sampled ? 1 : 0) << '\n';
  }
}

// Fails with a named error if any requested area is absent.
inline void require_areas(const SampleDataset& data, const std::vector<AreaId>& ids) {
  for (auto id : ids) data.index_of(id);
}

inline SampleDataset select_areas(const SampleDataset& data, const std::vector<AreaId>& ids) {
  if (ids.empty()) return data;
  require_areas(data, ids);
  std::vector<Area> kept;
  for (const auto& a : data.areas())
    if (std::find(ids.begin(), ids.end(), a.id) != ids.end()) kept.push_back(a);
  return SampleDataset(std::move(kept));
}

// ---------------------------------------------------------------------------
// Report tables: fixed column order, CSV or JSON lines.

using Cell = std::variant<std::monostate, std::string, double, long long, bool>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size()) throw std::logic_error("table row has wrong width");
    rows.push_back(std::move(row));
  }
};

enum class ReportFormat { kCsv, kJsonLines };

inline ReportFormat parse_format(const std::string& s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "jsonl" || s == "json-lines") return ReportFormat::kJsonLines;
  throw ValidationError("unknown report format '" + s + "' (expected csv or jsonl)");
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

inline std::string cell_text(const Cell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return "";
        else if constexpr (std::is_same_v<T, std::string>) return csv_field(v);
        else if constexpr (std::is_same_v<T, double>) return format_double(v);
        else if constexpr (std::is_same_v<T, bool>) return v ? "1" : "0";
        else return std::to_string(v);
      },
      c);
}

inline nlohmann::ordered_json cell_json(const Cell& c) {
  return std::visit(
      [](const auto& v) -> nlohmann::ordered_json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return nullptr;
        else if constexpr (std::is_same_v<T, double>) {
          if (std::isnan(v)) return nullptr;
          if (std::isinf(v)) return format_double(v);
          return v;
        } else return v;
      },
      c);
}

}  // namespace detail

inline void emit(std::ostream& out, const Table& t, ReportFormat fmt) {
  if (fmt == ReportFormat::kCsv) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c];
    out << '\n';
    for (const auto& r : t.rows) {
      for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << detail::cell_text(r[c]);
      out << '\n';
    }
    return;
  }
  for (const auto& r : t.rows) {
    nlohmann::ordered_json j;
    for (std::size_t c = 0; c < r.size(); ++c) j[t.columns[c]] = detail::cell_json(r[c]);
    out << j.dump() << '\n';
  }
}

inline void emit(const std::string& path, const Table& t, ReportFormat fmt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write output '" + path + "'");
  emit(out, t, fmt);
  if (!out) throw ValidationError("error writing output '" + path + "'");
}

inline Cell opt_cell(double v) { return std::isnan(v) ? Cell{} : Cell{v}; }

// One row per area and functional. Missing S estimates are empty cells.
inline Table mse_table(const std::vector<MseReport>& reports) {
  Table t{{"area_id", "parameter", "theta_hat", "m1", "m2", "m1_bar_star", "bias_add", "mse_noBC", "mse_add",
           "mse_mult", "mse_comp", "mse_hm", "mse_standard", "negative_add", "infinite_mult", "replicates"},
          {}};
  for (const auto& r : reports)
    t.add({static_cast<long long>(r.area_id), r.parameter, r.theta_hat, r.m1, r.m2, r.m1_bar_star, r.bias_add,
           r.mse_noBC, r.mse_add, r.mse_mult, r.mse_comp, r.mse_hm, opt_cell(r.mse_standard), r.negative_add,
           r.infinite_mult, static_cast<long long>(r.replicates)});
  return t;
}

inline Table interval_table(const std::vector<IntervalReport>& reports) {
  Table t{{"area_id", "parameter", "kind", "variant", "nominal", "lower", "upper", "alpha_prime", "flag"}, {}};
  for (const auto& r : reports)
    t.add({static_cast<long long>(r.area_id), r.parameter, std::string(to_string(r.kind)),
           r.variant.empty() ? Cell{} : Cell{r.variant}, r.nominal, opt_cell(r.lower), opt_cell(r.upper),
           opt_cell(r.alpha_prime), r.flag});
  return t;
}

inline Table prediction_table(const std::vector<EbpPrediction>& preds) {
  Table t{{"area_id", "parameter", "theta_hat", "L", "mc_se"}, {}};
  for (const auto& p : preds)
    t.add({static_cast<long long>(p.area_id), p.parameter, p.theta_hat, static_cast<long long>(p.L), p.mc_se});
  return t;
}

// ---------------------------------------------------------------------------
// Key-value configuration with sections (INI). Every key is validated against
// the list of known keys so that typos fail loudly.

class Config {
 public:
  Config() = default;

  static Config load(const std::string& path) {
    Config c;
    try {
      boost::property_tree::ini_parser::read_ini(path, c.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ValidationError("config: " + std::string(e.what()));
    }
    return c;
  }

  static Config parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    try {
      boost::property_tree::ini_parser::read_ini(in, c.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ValidationError("config: " + std::string(e.what()));
    }
    return c;
  }

  // Throws on any section.key not listed.
  void check_known(const std::map<std::string, std::set<std::string>>& known) const {
    for (const auto& [section, body] : tree_) {
      const auto it = known.find(section);
      if (body.empty() && !body.data().empty())
        throw ValidationError("config: key '" + section + "' must be inside a section");
      if (it == known.end()) throw ValidationError("config: unknown section [" + section + "]");
      for (const auto& [key, v] : body)
        if (!it->second.count(key)) throw ValidationError("config: unknown key '" + key + "' in [" + section + "]");
    }
  }

  std::optional<std::string> get(const std::string& section, const std::string& key) const {
    const auto s = tree_.get_child_optional(boost::property_tree::ptree::path_type(section, '\0'));
    if (!s) return std::nullopt;
    const auto v = s->get_optional<std::string>(boost::property_tree::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return detail::trim(*v);
  }

  std::optional<double> get_double(const std::string& section, const std::string& key) const {
    const auto s = get(section, key);
    if (!s) return std::nullopt;
    const auto v = parse_double(*s);
    if (!v) throw ValidationError("config: [" + section + "] " + key + " is not a number");
    return v;
  }

  std::optional<long long> get_integer(const std::string& section, const std::string& key) const {
    const auto s = get(section, key);
    if (!s) return std::nullopt;
    const auto v = parse_integer(*s);
    if (!v) throw ValidationError("config: [" + section + "] " + key + " is not an integer");
    return v;
  }

  std::optional<bool> get_bool(const std::string& section, const std::string& key) const {
    const auto s = get(section, key);
    if (!s) return std::nullopt;
    if (*s == "true" || *s == "1" || *s == "yes") return true;
    if (*s == "false" || *s == "0" || *s == "no") return false;
    throw ValidationError("config: [" + section + "] " + key + " is not a boolean");
  }

  std::optional<std::vector<std::string>> get_list(const std::string& section, const std::string& key) const {
    const auto s = get(section, key);
    if (!s) return std::nullopt;
    std::vector<std::string> out;
    std::stringstream ss(*s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

 private:
  boost::property_tree::ptree tree_;
};

inline std::vector<double> parse_double_list(const std::vector<std::string>& items, const std::string& what) {
  std::vector<double> out;
  for (const auto& s : items) {
    const auto v = parse_double(s);
    if (!v) throw ValidationError(what + ": '" + s + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

}  // namespace ebpmse
