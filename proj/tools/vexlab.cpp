#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vex/harness.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vex;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed JSON in " + path);
  return j;
}

void apply_override(json& j, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=val: " + kv);
  std::string key = kv.substr(0, eq);
  std::string val = kv.substr(eq + 1);
  json parsed = json::parse(val, nullptr, false);
  j[key] = parsed.is_discarded() ? json(val) : parsed;
}

json curve_to_json(const AggregateCurve& c) {
  return json{{"steps", c.steps},   {"iqm", c.iqm},     {"ipr_lo", c.ipr_lo},
              {"ipr_hi", c.ipr_hi}, {"ci_lo", c.ci_lo}, {"ci_hi", c.ci_hi},
              {"norm_lo", c.norm.lo}, {"norm_hi", c.norm.hi}};
}

AggregateCurve curve_from_json(const json& j) {
  AggregateCurve c;
  c.steps = j.at("steps").get<std::vector<long>>();
  c.iqm = j.at("iqm").get<std::vector<double>>();
  c.ipr_lo = j.at("ipr_lo").get<std::vector<double>>();
  c.ipr_hi = j.at("ipr_hi").get<std::vector<double>>();
  c.ci_lo = j.at("ci_lo").get<std::vector<double>>();
  c.ci_hi = j.at("ci_hi").get<std::vector<double>>();
  c.norm.lo = j.at("norm_lo").get<double>();
  c.norm.hi = j.at("norm_hi").get<double>();
  return c;
}

int cmd_run(const std::string& config_path, int seed, const std::vector<std::string>& overrides,
            std::string out_dir) {
  json j = load_json_file(config_path);
  for (const auto& kv : overrides) apply_override(j, kv);
  if (seed >= 0) j["seed"] = seed;
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  if (out_dir.empty())
    out_dir = "runs/" + cfg.hash() + "_seed" + std::to_string(cfg.seed);
  run_experiment(cfg, out_dir);
  std::cout << out_dir << "\n";
  return 0;
}

int cmd_sweep(const std::string& grid_path, const std::string& out_dir) {
  json grid = load_json_file(grid_path);
  std::vector<json> configs{json::object()};
  std::vector<std::string> varied;
  for (const auto& [key, val] : grid.items()) {
    if (val.is_array()) {
      varied.push_back(key);
      std::vector<json> next;
      for (const auto& base : configs)
        for (const auto& v : val) {
          json c = base;
          c[key] = v;
          next.push_back(std::move(c));
        }
      configs = std::move(next);
    } else {
      for (auto& c : configs) c[key] = val;
    }
  }
  // fixed keys were only applied to the configs existing at their turn
  for (auto& c : configs)
    for (const auto& [key, val] : grid.items())
      if (!val.is_array()) c[key] = val;

  for (const auto& c : configs) {
    ExperimentConfig cfg = ExperimentConfig::from_json(c);
    std::string name;
    for (const auto& key : varied)
      name += (name.empty() ? "" : "_") + key + "-" + c.at(key).dump();
    if (name.empty()) name = cfg.hash();
    std::string dir = out_dir + "/" + name;
    std::cout << "running " << dir << "\n";
    run_experiment(cfg, dir);
  }
  return 0;
}

int cmd_aggregate(const std::vector<std::string>& runs, const std::vector<std::string>& baseline,
                  const std::string& out_dir) {
  SeriesSet base = load_returns(baseline);
  Normalization norm = baseline_normalization(base);
  AggregateCurve base_curve = aggregate(base, norm);
  SeriesSet set = load_returns(runs);
  AggregateCurve curve = aggregate(set, norm);
  FinalPerformance fp = final_performance(curve);
  LearningSpeed ls = learning_speed(curve, base_curve);

  fs::create_directories(out_dir);
  json out{{"curve", curve_to_json(curve)},
           {"baseline", curve_to_json(base_curve)},
           {"final_performance",
            {{"iqm", fp.iqm}, {"ci_lo", fp.ci_lo}, {"ci_hi", fp.ci_hi}, {"step", fp.step}}},
           {"learning_speed",
            {{"reached", ls.reached},
             {"cross_step", ls.cross_step},
             {"percent", ls.reached ? json(ls.percent) : json(nullptr)}}}};
  std::ofstream f(out_dir + "/aggregate.json", std::ios::trunc);
  f << out.dump(2) << "\n";
  std::cout << out_dir << "/aggregate.json\n";
  return 0;
}

int cmd_plot(const std::string& agg_dir) {
  json j = load_json_file(agg_dir + "/aggregate.json");
  std::map<std::string, AggregateCurve> curves;
  curves["result"] = curve_from_json(j.at("curve"));
  curves["baseline"] = curve_from_json(j.at("baseline"));
  emit_curve_plot(agg_dir + "/curve.svg", "normalized IQM return", curves);
  std::cout << agg_dir << "/curve.svg\n";
  return 0;
}

std::vector<int> parse_horizons(const std::string& csv) {
  std::vector<int> hs;
  size_t start = 0;
  while (start < csv.size()) {
    size_t comma = csv.find(',', start);
    if (comma == std::string::npos) comma = csv.size();
    hs.push_back(std::stoi(csv.substr(start, comma - start)));
    start = comma + 1;
  }
  if (hs.empty()) throw ConfigError("empty horizon list");
  return hs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"value-expansion laboratory"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "execute one experiment");
  std::string run_config, run_out;
  int run_seed = -1;
  std::vector<std::string> run_overrides;
  run->add_option("--config", run_config, "config JSON file")->required();
  run->add_option("--seed", run_seed, "seed override");
  run->add_option("--override", run_overrides, "key=val config overrides");
  run->add_option("--out", run_out, "run directory (default runs/<hash>_seed<seed>)");

  auto* sweep = app.add_subcommand("sweep", "expand a grid file and run each config");
  std::string sweep_grid, sweep_out = "runs";
  sweep->add_option("--grid", sweep_grid, "grid JSON file")->required();
  sweep->add_option("--out", sweep_out, "output directory");

  auto* agg = app.add_subcommand("aggregate", "cross-seed aggregation");
  std::vector<std::string> agg_runs, agg_base;
  std::string agg_out;
  agg->add_option("--runs", agg_runs, "run directories")->required();
  agg->add_option("--baseline", agg_base, "baseline (H=0) run directories")->required();
  agg->add_option("--out", agg_out, "output directory")->required();

  auto* study = app.add_subcommand("study", "diagnostic studies");
  std::string study_kind, study_ckpts, study_out = "study_targets.jsonl";
  std::string study_horizons = "1,3,5,10,30";
  int study_particles = 100;
  study->add_option("kind", study_kind, "study kind (targets)")->required();
  study->add_option("--checkpoints", study_ckpts, "run directory with checkpoints")->required();
  study->add_option("--horizons", study_horizons, "comma-separated horizons");
  study->add_option("--particles", study_particles, "particles per target");
  study->add_option("--out", study_out, "output JSONL file");

  auto* plot = app.add_subcommand("plot", "emit SVG plots for an aggregate");
  std::string plot_agg;
  plot->add_option("--aggregate", plot_agg, "aggregate directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_config, run_seed, run_overrides, run_out);
    if (sweep->parsed()) return cmd_sweep(sweep_grid, sweep_out);
    if (agg->parsed()) return cmd_aggregate(agg_runs, agg_base, agg_out);
    if (study->parsed()) {
      if (study_kind != "targets") throw ConfigError("unknown study kind: " + study_kind);
      run_target_study(study_ckpts, parse_horizons(study_horizons), study_particles, study_out);
      std::cout << study_out << "\n";
      return 0;
    }
    if (plot->parsed()) return cmd_plot(plot_agg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IntegrityError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
