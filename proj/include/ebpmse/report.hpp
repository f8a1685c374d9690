#pragma once

#include <map>
#include <string>
#include <vector>

#include "ebpmse/io.hpp"
#include "ebpmse/pipeline.hpp"
#include "ebpmse/simharness.hpp"
#include "ebpmse/svg.hpp"

namespace ebpmse {

// Flattened pipeline output for emission.
inline std::vector<MseReport> mse_reports(const PipelineResult& r) {
  std::vector<MseReport> out;
  for (const auto& area : r.areas)
    for (const auto& o : area) out.push_back(o.mse);
  return out;
}

inline std::vector<IntervalReport> interval_reports(const PipelineResult& r) {
  std::vector<IntervalReport> out;
  for (const auto& area : r.areas)
    for (const auto& o : area) out.insert(out.end(), o.intervals.begin(), o.intervals.end());
  return out;
}

inline std::string variant_column(MseVariant v) {
  switch (v) {
    case MseVariant::kNoBC: return "mse_noBC";
    case MseVariant::kAdd: return "mse_add";
    case MseVariant::kMult: return "mse_mult";
    case MseVariant::kComp: return "mse_comp";
    case MseVariant::kHM: return "mse_hm";
    case MseVariant::kStandard: return "mse_standard";
  }
  return "";
}

// Keeps only the requested mse_* columns of an MSE table.
inline Table select_variants(const Table& t, const std::vector<MseVariant>& keep) {
  std::vector<std::string> wanted;
  for (auto v : keep) wanted.push_back(variant_column(v));
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    const auto& name = t.columns[c];
    const bool variant_col = name.rfind("mse_", 0) == 0;
    if (!variant_col || std::find(wanted.begin(), wanted.end(), name) != wanted.end()) cols.push_back(c);
  }
  Table out;
  for (auto c : cols) out.columns.push_back(t.columns[c]);
  for (const auto& r : t.rows) {
    std::vector<Cell> row;
    for (auto c : cols) row.push_back(r[c]);
    out.add(std::move(row));
  }
  return out;
}

inline Table fit_table(const PipelineFit& fit) {
  Table t{{"quantity", "value"}, {}};
  const auto& p = fit.ner.params;
  for (Eigen::Index k = 0; k < p.beta.size(); ++k) t.add({"beta_" + std::to_string(k), p.beta(k)});
  t.add({std::string("sigma2_u"), p.sigma2_u});
  t.add({std::string("sigma2_e"), p.sigma2_e});
  t.add({std::string("loglik"), fit.ner.loglik});
  t.add({std::string("iterations"), static_cast<long long>(fit.ner.iterations)});
  t.add({std::string("boundary"), fit.ner.boundary});
  t.add({std::string("degenerate"), fit.ner.degenerate});
  if (fit.informative) {
    const auto& w = fit.informative->weight;
    for (Eigen::Index k = 0; k < w.gamma1.size(); ++k) t.add({"gamma1_" + std::to_string(k), w.gamma1(k)});
    t.add({std::string("gamma2"), w.gamma2});
    for (Eigen::Index k = 0; k < w.gamma3.size(); ++k) t.add({"gamma3_" + std::to_string(k), w.gamma3(k)});
    if (const auto& aw = fit.informative->area_weight) {
      t.add({std::string("lambda0"), aw->lambda0});
      t.add({std::string("lambda1"), aw->lambda1});
      t.add({std::string("tau2"), aw->tau2});
    }
  }
  return t;
}

inline Table effects_table(const PipelineFit& fit, const SampleDataset& data) {
  Table t{{"area_id", "n", "N", "u_hat", "v2_hat", "log_kappa"}, {}};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& a = data.area(i);
    Cell lk;
    if (fit.informative && a.sampled) lk = fit.informative->weight.log_kappa(static_cast<Eigen::Index>(i));
    t.add({static_cast<long long>(a.id), static_cast<long long>(a.n()), static_cast<long long>(a.N()),
           fit.ner.u_hat(static_cast<Eigen::Index>(i)), fit.ner.v2_hat(static_cast<Eigen::Index>(i)), lk});
  }
  return t;
}

inline Table rb_table(const SimResult& r) {
  Table t{{"scenario", "domain", "parameter", "method", "rb"}, {}};
  for (const auto& row : r.rb) t.add({r.scenario, row.domain, row.parameter, row.method, row.rb});
  return t;
}

inline Table ecp_table(const SimResult& r) {
  Table t{{"scenario", "domain", "parameter", "interval", "level", "ecp", "ecp_area_mean"}, {}};
  for (const auto& row : r.ecp)
    t.add({r.scenario, row.domain, row.parameter, row.interval, row.level, row.ecp, row.ecp_area_mean});
  return t;
}

inline Table area_ecp_table(const SimResult& r) {
  Table t{{"scenario", "domain", "parameter", "interval", "level", "area_id", "ecp", "count"}, {}};
  for (const auto& row : r.area_ecp)
    t.add({r.scenario, row.domain, row.parameter, row.interval, row.level, static_cast<long long>(row.area_id),
           row.ecp, static_cast<long long>(row.count)});
  return t;
}

inline Table tstat_table(const SimResult& r) {
  Table t{{"scenario", "area_id", "parameter", "replicate", "sampled", "t"}, {}};
  for (const auto& row : r.t)
    t.add({r.scenario, static_cast<long long>(row.area_id), row.parameter, static_cast<long long>(row.replicate),
           row.sampled, row.t});
  return t;
}

inline Table summary_table(const SimResult& r) {
  Table t{{"scenario", "requested", "completed", "dropped", "fallbacks"}, {}};
  t.add({r.scenario, static_cast<long long>(r.requested), static_cast<long long>(r.completed),
         static_cast<long long>(r.dropped), static_cast<long long>(r.fallbacks)});
  return t;
}

// One SVG per domain: a panel per parameter, a box per interval, over the
// per-area ECPs at `level`.
inline std::map<std::string, std::string> ecp_boxplots(const std::vector<AreaEcp>& rows, double level,
                                                       const std::string& scenario) {
  std::map<std::string, std::vector<BoxPanel>> by_domain;
  for (const auto& row : rows) {
    if (row.level != level) continue;
    auto& panels = by_domain[row.domain];
    auto pit = std::find_if(panels.begin(), panels.end(), [&](const BoxPanel& p) { return p.title == row.parameter; });
    if (pit == panels.end()) {
      panels.push_back({row.parameter, {}});
      pit = panels.end() - 1;
    }
    auto git = std::find_if(pit->groups.begin(), pit->groups.end(),
                            [&](const BoxGroup& g) { return g.label == row.interval; });
    if (git == pit->groups.end()) {
      pit->groups.push_back({row.interval, {}});
      git = pit->groups.end() - 1;
    }
    git->values.push_back(row.ecp);
  }
  std::map<std::string, std::string> out;
  for (const auto& [domain, panels] : by_domain) {
    double lo = 1.0;
    for (const auto& p : panels)
      for (const auto& g : p.groups)
        for (double v : g.values) lo = std::min(lo, v);
    lo = std::max(0.0, std::floor(lo * 10.0) / 10.0);
    if (lo >= level) lo = std::max(0.0, level - 0.1);
    out[domain] = boxplot_svg(panels, "Per-area ECP, " + scenario + ", " + domain + " areas, nominal " +
                                          format_double(level),
                              lo, 1.0, level);
  }
  return out;
}

inline std::vector<AreaEcp> read_area_ecp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open input '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("area ECP file is empty");
  const auto header = detail::split_csv(detail::trim(line));
  const std::vector<std::string> expect{"scenario", "domain", "parameter", "interval", "level", "area_id", "ecp", "count"};
  if (header != expect) throw ValidationError("'" + path + "' is not a per-area ECP table");
  std::vector<AreaEcp> out;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    const auto lv = parse_double(f.size() == 8 ? f[4] : "");
    const auto id = parse_integer(f.size() == 8 ? f[5] : "");
    const auto ecp = parse_double(f.size() == 8 ? f[6] : "");
    const auto c = parse_integer(f.size() == 8 ? f[7] : "");
    if (!lv || !id || !ecp || !c) throw ValidationError("row " + std::to_string(row) + ": malformed per-area ECP row");
    out.push_back({f[1], f[2], f[3], *lv, *id, *ecp, static_cast<int>(*c)});
  }
  return out;
}

// Reads a table written by emit() back as cells: numbers (including Inf)
// become doubles or integers, empty fields become null.
inline Table read_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("input table is empty");
  Table t;
  t.columns = detail::split_csv(detail::trim(line));
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != t.columns.size()) throw ValidationError("row " + std::to_string(row) + ": wrong number of fields");
    std::vector<Cell> cells;
    for (const auto& s : f) {
      if (s.empty()) cells.emplace_back();
      else if (auto i = parse_integer(s)) cells.emplace_back(*i);
      else if (auto d = parse_double(s)) cells.emplace_back(*d);
      else cells.emplace_back(s);
    }
    t.add(std::move(cells));
  }
  return t;
}

}  // namespace ebpmse
