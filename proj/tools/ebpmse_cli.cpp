// ebpmse: fit, predict, MSE, intervals and simulation studies from the
// command line. Exit codes: 0 success, 2 validation error, 3 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ebpmse/ebpmse.hpp"

using namespace ebpmse;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct Options {
  std::string config;
  std::string input;
  std::string output;
  std::optional<std::string> format;
  std::optional<std::uint64_t> seed;
  std::optional<long long> L;
  std::optional<int> B;
  std::optional<std::string> pipeline;
  std::optional<std::string> sampler;
  std::optional<int> pool_size;
  std::vector<std::string> params;
  std::vector<long long> areas;
  std::vector<double> levels;
  std::vector<std::string> variants;
  bool interaction = false;
  bool standard = false;
  std::string effects;
  // simulate
  std::string outdir;
  std::optional<std::string> design;
  std::optional<int> M;
  std::optional<long long> D;
  std::optional<double> r_sigma;
  bool progress = false;
  // report
  std::string svg;
  std::optional<double> level;
};

const std::map<std::string, std::set<std::string>> kConfigKeys{
    {"run",
     {"seed", "L", "B", "pool_size", "sampler", "max_attempts", "levels", "parameters", "pipeline", "interaction",
      "standard", "common_random_numbers", "threads", "format", "variants"}},
    {"simulate",
     {"design", "D", "r_sigma", "sigma_e", "N_i", "M", "truncation", "strata_sizes", "areas_selected",
      "t_variant", "svg_level"}},
};

template <class To, class From>
std::optional<To> cast(const std::optional<From>& v) {
  if (!v) return std::nullopt;
  return static_cast<To>(*v);
}

template <class T>
T pick(const std::optional<T>& cli, const std::optional<T>& cfg, T fallback) {
  if (cli) return *cli;
  if (cfg) return *cfg;
  return fallback;
}

std::vector<Eigen::Index> index_list(const std::vector<std::string>& items, const std::string& what) {
  std::vector<Eigen::Index> out;
  for (const auto& s : items) {
    const auto v = parse_integer(s);
    if (!v) throw ValidationError(what + ": '" + s + "' is not an integer");
    out.push_back(static_cast<Eigen::Index>(*v));
  }
  return out;
}

struct Resolved {
  PipelineOptions pipe;
  std::vector<AreaParameter> params;
  ReportFormat format = ReportFormat::kCsv;
  std::vector<MseVariant> variants;
};

Resolved resolve(const Options& o, const Config& cfg, const char* default_format = "csv") {
  Resolved r;
  auto& p = r.pipe;
  p.seed = pick<std::uint64_t>(o.seed, cast<std::uint64_t>(cfg.get_integer("run", "seed")), 1);
  p.L = static_cast<Eigen::Index>(pick<long long>(o.L, cfg.get_integer("run", "L"), 500));
  p.B = static_cast<int>(pick<long long>(cast<long long>(o.B),
                                         cfg.get_integer("run", "B"), 200));
  if (p.L < 2 || p.B < 2) throw ValidationError("L and B must be at least 2");
  p.kind = parse_pipeline(pick<std::string>(o.pipeline, cfg.get("run", "pipeline"), "noninformative"));
  const auto sampler = pick<std::string>(o.sampler, cfg.get("run", "sampler"), "pool");
  if (sampler == "pool") p.sir.method = SirMethod::kPool;
  else if (sampler == "exact") p.sir.method = SirMethod::kExact;
  else throw ValidationError("unknown sampler '" + sampler + "' (expected pool or exact)");
  p.sir.pool_size = static_cast<int>(pick<long long>(cast<long long>(o.pool_size),
                                                     cfg.get_integer("run", "pool_size"), 100));
  if (p.sir.pool_size < 1) throw ValidationError("pool_size must be positive");
  p.sir.max_attempts = static_cast<int>(cfg.get_integer("run", "max_attempts").value_or(10000));
  if (p.sir.max_attempts < 1) throw ValidationError("max_attempts must be positive");
  p.interaction = o.interaction || cfg.get_bool("run", "interaction").value_or(false);
  p.standard = o.standard || cfg.get_bool("run", "standard").value_or(false);
  p.common_random_numbers = cfg.get_bool("run", "common_random_numbers").value_or(true);
  if (!o.levels.empty()) p.levels = o.levels;
  else if (auto l = cfg.get_list("run", "levels")) p.levels = parse_double_list(*l, "levels");
  if (std::getenv("EBPMSE_THREADS") == nullptr)
    p.threads = static_cast<unsigned>(std::max<long long>(1, cfg.get_integer("run", "threads").value_or(1)));

  ParameterRegistry reg;
  std::vector<std::string> specs = o.params;
  if (specs.empty()) specs = cfg.get_list("run", "parameters").value_or(std::vector<std::string>{"mean"});
  for (const auto& s : specs) r.params.push_back(reg.parse(s));
  r.format = parse_format(pick<std::string>(o.format, cfg.get("run", "format"), default_format));
  std::vector<std::string> vs = o.variants;
  if (vs.empty()) vs = cfg.get_list("run", "variants").value_or(std::vector<std::string>{});
  for (const auto& v : vs) r.variants.push_back(parse_variant(v));
  return r;
}

Config load_config(const Options& o) {
  Config cfg = o.config.empty() ? Config() : Config::load(o.config);
  cfg.check_known(kConfigKeys);
  return cfg;
}

void write_table(const std::string& path, const Table& t, ReportFormat fmt) {
  if (path.empty() || path == "-") emit(std::cout, t, fmt);
  else emit(path, t, fmt);
}

SampleDataset load_data(const Options& o) {
  auto data = ingest(o.input);
  std::vector<AreaId> ids(o.areas.begin(), o.areas.end());
  require_areas(data, ids);
  return data;
}

std::vector<EbpPrediction> flatten(const std::vector<std::vector<EbpPrediction>>& v,
                                   const SampleDataset& data, const std::vector<long long>& areas) {
  std::vector<EbpPrediction> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!areas.empty() && std::find(areas.begin(), areas.end(), data.area(i).id) == areas.end()) continue;
    out.insert(out.end(), v[i].begin(), v[i].end());
  }
  return out;
}

template <class T>
std::vector<T> keep_areas(std::vector<T> rows, const std::vector<long long>& areas) {
  if (areas.empty()) return rows;
  std::erase_if(rows, [&](const T& r) { return std::find(areas.begin(), areas.end(), r.area_id) == areas.end(); });
  return rows;
}

int cmd_fit(const Options& o) {
  const auto cfg = load_config(o);
  const auto r = resolve(o, cfg);
  const auto data = load_data(o);
  const auto fit = fit_pipeline(data, r.pipe);
  write_table(o.output, fit_table(fit), r.format);
  if (!o.effects.empty()) write_table(o.effects, effects_table(fit, data), r.format);
  return 0;
}

int cmd_predict(const Options& o) {
  const auto cfg = load_config(o);
  const auto r = resolve(o, cfg);
  const auto data = load_data(o);
  const auto fit = fit_pipeline(data, r.pipe);
  const auto preds = predict_pipeline(fit, data, r.params, r.pipe);
  write_table(o.output, prediction_table(flatten(preds, data, o.areas)), r.format);
  return 0;
}

int cmd_mse(const Options& o, bool intervals) {
  const auto cfg = load_config(o);
  auto r = resolve(o, cfg);
  r.pipe.intervals = intervals;
  const auto data = load_data(o);
  const auto res = run_pipeline(data, r.params, r.pipe);
  if (intervals) {
    write_table(o.output, interval_table(keep_areas(interval_reports(res), o.areas)), r.format);
  } else {
    auto t = mse_table(keep_areas(mse_reports(res), o.areas));
    if (!r.variants.empty()) t = select_variants(t, r.variants);
    write_table(o.output, t, r.format);
  }
  if (res.dropped) std::cerr << "warning: " << res.dropped << " bootstrap refits failed and were dropped\n";
  if (res.fallbacks) std::cerr << "warning: " << res.fallbacks << " sampler draws fell back to the sample distribution\n";
  return 0;
}

SimConfig sim_config(const Options& o, const Config& cfg, const Resolved& r) {
  SimConfig s;
  s.design = parse_design(pick<std::string>(o.design, cfg.get("simulate", "design"), "noninformative"));
  s.D = static_cast<Eigen::Index>(pick<long long>(o.D, cfg.get_integer("simulate", "D"), 0));
  s.r_sigma = pick<double>(o.r_sigma, cfg.get_double("simulate", "r_sigma"), 1.0);
  s.sigma_e = cfg.get_double("simulate", "sigma_e").value_or(0.3);
  s.N_i = static_cast<Eigen::Index>(cfg.get_integer("simulate", "N_i").value_or(200));
  s.M = static_cast<int>(pick<long long>(cast<long long>(o.M),
                                         cfg.get_integer("simulate", "M"), 500));
  s.truncation = cfg.get_double("simulate", "truncation").value_or(2.5);
  if (auto l = cfg.get_list("simulate", "strata_sizes")) {
    s.strata_sizes = index_list(*l, "strata_sizes");
    s.informative.unit_sizes = s.strata_sizes;
  }
  if (auto l = cfg.get_list("simulate", "areas_selected")) s.informative.areas_selected = index_list(*l, "areas_selected");
  if (auto t = cfg.get("simulate", "t_variant")) s.t_variant = parse_variant(*t);
  s.L = r.pipe.L;
  s.B = r.pipe.B;
  s.seed = r.pipe.seed;
  s.levels = r.pipe.levels;
  s.parameters = r.params;
  s.standard = r.pipe.standard;
  s.sir = r.pipe.sir;
  // The simulation defaults to the exact sampler unless the sampler is set.
  if (!o.sampler && !cfg.get("run", "sampler")) s.sir.method = SirMethod::kExact;
  if (o.pipeline || cfg.get("run", "pipeline")) s.pipeline = r.pipe.kind;
  s.threads = r.pipe.threads;
  return s;
}

int cmd_simulate(const Options& o) {
  const auto cfg = load_config(o);
  Options defaults = o;
  if (o.params.empty() && !cfg.get("run", "parameters"))
    defaults.params = {"mean", "exp_mean", "q25", "q75", "pg", "gini"};
  const auto r = resolve(defaults, cfg);
  const auto s = sim_config(o, cfg, r);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(o.outdir, ec);
  if (ec || !fs::is_directory(o.outdir)) throw ValidationError("cannot create output directory '" + o.outdir + "'");
  std::function<void(int, int)> progress;
  if (o.progress) progress = [](int done, int total) { std::cerr << "replicate " << done << "/" << total << "\n"; };
  const auto res = run_study(s, progress);
  const std::string ext = r.format == ReportFormat::kCsv ? ".csv" : ".jsonl";
  const fs::path dir(o.outdir);
  emit((dir / ("rb" + ext)).string(), rb_table(res), r.format);
  emit((dir / ("ecp" + ext)).string(), ecp_table(res), r.format);
  emit((dir / ("ecp_area" + ext)).string(), area_ecp_table(res), r.format);
  emit((dir / ("tstat" + ext)).string(), tstat_table(res), r.format);
  emit((dir / ("summary" + ext)).string(), summary_table(res), r.format);
  const double lv = cfg.get_double("simulate", "svg_level").value_or(
      std::find(s.levels.begin(), s.levels.end(), 0.95) != s.levels.end() ? 0.95 : s.levels.front());
  for (const auto& [domain, svg] : ecp_boxplots(res.area_ecp, lv, res.scenario))
    write_text((dir / ("ecp_" + domain + ".svg")).string(), svg);
  if (!res.failures.empty()) {
    std::ofstream f(dir / "failures.txt");
    for (const auto& line : res.failures) f << line << '\n';
    std::cerr << "warning: " << res.dropped << " of " << res.requested << " replicates failed and were dropped\n";
  }
  return 0;
}

int cmd_report(const Options& o) {
  const auto fmt = parse_format(o.format.value_or("csv"));
  std::ifstream in(o.input, std::ios::binary);
  if (!in) throw ValidationError("cannot open input '" + o.input + "'");
  const auto t = read_table(in);
  write_table(o.output, t, fmt);
  if (!o.svg.empty()) {
    const auto rows = read_area_ecp(o.input);
    const double lv = o.level.value_or(0.95);
    const auto plots = ecp_boxplots(rows, lv, rows.empty() ? std::string() : std::string("report"));
    if (plots.empty()) throw ValidationError("no per-area ECP rows at level " + format_double(lv));
    if (plots.size() == 1) {
      write_text(o.svg, plots.begin()->second);
    } else {
      const std::filesystem::path base(o.svg);
      for (const auto& [domain, svg] : plots)
        write_text((base.parent_path() / (base.stem().string() + "_" + domain + base.extension().string())).string(), svg);
    }
  }
  return 0;
}

void add_common(CLI::App* c, Options& o) {
  c->add_option("--config,-c", o.config, "Key-value config file with [run] and [simulate] sections")->check(CLI::ExistingFile);
  c->add_option("--seed", o.seed, "Master seed");
  c->add_option("--format", o.format, "Output format: csv or jsonl");
  c->add_option("--output,-o", o.output, "Output path (default stdout)");
}

void add_data(CLI::App* c, Options& o) {
  c->add_option("--input,-i", o.input, "Unit-level CSV")->required()->check(CLI::ExistingFile);
  c->add_option("--pipeline", o.pipeline, "noninformative or informative");
  c->add_flag("--interaction", o.interaction, "Weight model with x*y interaction");
  c->add_option("--sampler", o.sampler, "Informative sampler: pool (SIR) or exact");
  c->add_option("--pool-size", o.pool_size, "SIR candidates per draw");
}

void add_prediction(CLI::App* c, Options& o) {
  c->add_option("-L,--L", o.L, "Monte Carlo draws per area");
  c->add_option("--param,-p", o.params, "Area parameter: mean, exp_mean, q25, quantile:0.3, pg, pg:155, gini");
  c->add_option("--areas", o.areas, "Only report these area ids");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Empirical best prediction with bootstrap MSE for small areas"};
  app.require_subcommand(1);
  Options o;

  auto* fit = app.add_subcommand("fit", "Fit the model and write parameter estimates");
  add_common(fit, o);
  add_data(fit, o);
  fit->add_option("--effects", o.effects, "Also write per-area random effect estimates here");

  auto* predict = app.add_subcommand("predict", "EBP point predictions");
  add_common(predict, o);
  add_data(predict, o);
  add_prediction(predict, o);

  auto* mse = app.add_subcommand("mse", "EBP with bootstrap MSE estimates");
  add_common(mse, o);
  add_data(mse, o);
  add_prediction(mse, o);
  mse->add_option("-B,--B", o.B, "Bootstrap replicates");
  mse->add_option("--variants", o.variants, "MSE columns to keep: noBC Add Mult Comp HM S");
  mse->add_flag("--standard", o.standard, "Also compute the full-population bootstrap estimator S");

  auto* ci = app.add_subcommand("ci", "Naive, calibrated and normal prediction intervals");
  add_common(ci, o);
  add_data(ci, o);
  add_prediction(ci, o);
  ci->add_option("-B,--B", o.B, "Bootstrap replicates");
  ci->add_option("--levels", o.levels, "Nominal levels (default 0.90 0.95 0.99)");
  ci->add_flag("--standard", o.standard, "Also form normal intervals from S");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo study: RB, ECP and T statistic tables");
  add_common(sim, o);
  sim->add_option("--outdir", o.outdir, "Directory for tables and plots")->required();
  sim->add_option("--design", o.design, "noninformative or informative");
  sim->add_option("-D,--D", o.D, "Number of areas");
  sim->add_option("--r-sigma", o.r_sigma, "sigma_u / sigma_e");
  sim->add_option("-M,--M", o.M, "Monte Carlo replicates");
  sim->add_option("-L,--L", o.L, "EBP draws");
  sim->add_option("-B,--B", o.B, "Bootstrap replicates");
  sim->add_option("--param,-p", o.params, "Area parameters");
  sim->add_option("--pipeline", o.pipeline, "Override the pipeline fitted in each replicate");
  sim->add_option("--sampler", o.sampler, "pool or exact (default exact)");
  sim->add_option("--pool-size", o.pool_size, "SIR candidates per draw");
  sim->add_flag("--standard", o.standard, "Include the S estimator (noninformative pipeline)");
  sim->add_flag("--progress", o.progress, "Report finished replicates on stderr");

  auto* report = app.add_subcommand("report", "Convert a report table and draw ECP boxplots");
  report->add_option("--input,-i", o.input, "Table written by this tool")->required()->check(CLI::ExistingFile);
  report->add_option("--output,-o", o.output, "Output path (default stdout)");
  report->add_option("--format", o.format, "csv or jsonl");
  report->add_option("--svg", o.svg, "Boxplot path (input must be a per-area ECP table)");
  report->add_option("--level", o.level, "Nominal level for the boxplot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*fit) return cmd_fit(o);
    if (*predict) return cmd_predict(o);
    if (*mse) return cmd_mse(o, false);
    if (*ci) return cmd_mse(o, true);
    if (*sim) return cmd_simulate(o);
    if (*report) return cmd_report(o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return 0;
}
