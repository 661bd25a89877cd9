// Command-line front end: table generation, surrogate fitting, single
// optimizer runs, full studies, and report regeneration.

#include <cstdio>
#include <exception>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fedhpo/study.hpp>

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  return nlohmann::json::parse(in);
}

// Shared shape of the gen-table / fit-surrogate / run configs: a space, one
// task, and the knobs the subcommand cares about.
fedhpo::SearchSpace space_of(const nlohmann::json& cfg) {
  return fedhpo::space_from_json(cfg.at("space"));
}

fedhpo::Algorithm algorithm_of(const nlohmann::json& cfg) {
  std::string a = cfg.value("algorithm", "fedavg");
  if (a == "fedavg") return fedhpo::Algorithm::FedAvg;
  if (a == "fedopt") return fedhpo::Algorithm::FedOpt;
  throw std::invalid_argument("unknown algorithm '" + a + "' (valid: fedavg, fedopt)");
}

std::vector<fedhpo::FidelityVector> fidelities_of(const nlohmann::json& cfg) {
  std::vector<fedhpo::FidelityVector> out;
  if (cfg.contains("fidelities")) {
    for (const auto& f : cfg.at("fidelities"))
      out.push_back({f.at(0).get<int>(), f.at(1).get<double>()});
  } else if (cfg.contains("rounds") && cfg.contains("sample_rates")) {
    for (const auto& r : cfg.at("rounds"))
      for (const auto& s : cfg.at("sample_rates"))
        out.push_back({r.get<int>(), s.get<double>()});
  } else {
    throw std::invalid_argument(
        "config needs either 'fidelities' ([rounds, sample_rate] pairs) or "
        "'rounds' plus 'sample_rates'");
  }
  return out;
}

fedhpo::FederatedDataset dataset_of(const nlohmann::json& cfg) {
  fedhpo::TaskSpec t = fedhpo::task_spec_from_json(cfg.at("task"));
  fedhpo::Dataset base = t.source == "csv"
                             ? fedhpo::load_csv(t.csv_path, t.label_column)
                             : fedhpo::synth_blobs(t.n_samples, t.n_features, t.n_classes,
                                                   t.spread, t.seed);
  return fedhpo::make_federated(base, t.n_clients, t.alpha, t.seed);
}

int cmd_gen_table(const std::string& config_path, const std::string& out_path, bool resume,
                  int jobs) {
  nlohmann::json cfg = load_json(config_path);
  if (!resume && std::ifstream(out_path).good())
    throw std::runtime_error("output '" + out_path + "' already exists; pass --resume to reuse");
  fedhpo::SearchSpace space = space_of(cfg);
  fedhpo::FederatedDataset data = dataset_of(cfg);
  fedhpo::TableGenOptions opts;
  opts.n_seeds = cfg.value("n_seeds", 3);
  opts.n_jobs = jobs;
  opts.progress = [](long done, long total) {
    std::fprintf(stderr, "rows %ld/%ld\n", done, total);
  };
  fedhpo::LookupTable table =
      fedhpo::generate_table(data, algorithm_of(cfg), space, fidelities_of(cfg), opts, out_path);
  std::fprintf(stderr, "table '%s': %zu rows\n", out_path.c_str(), table.rows.size());
  return 0;
}

int cmd_fit_surrogate(const std::string& config_path, const std::string& table_path,
                      const std::string& out_path, std::uint64_t seed) {
  nlohmann::json cfg = load_json(config_path);
  fedhpo::SearchSpace space = space_of(cfg);
  fedhpo::LookupTable table = fedhpo::load_table(table_path, space);
  fedhpo::SurrogateModel model = fedhpo::fit_surrogate(table, seed);
  model.save(out_path);
  std::printf("n_trees=%d max_depth=%d cv_mae=%s\n", model.params.n_trees,
              model.params.max_depth, fedhpo::g9(model.cv_mae).c_str());
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& optimizer,
            const std::string& mode_name, std::uint64_t seed, const std::string& out_path) {
  nlohmann::json cfg = load_json(config_path);

  fedhpo::StudyConfig sc;
  sc.space = space_of(cfg);
  sc.mode = fedhpo::mode_from_string(mode_name);
  sc.algorithm = algorithm_of(cfg);
  if (cfg.contains("system"))
    sc.system = fedhpo::system_config_from_json(cfg.at("system"));
  fedhpo::TaskSpec task = fedhpo::task_spec_from_json(cfg.at("task"));
  double budget = cfg.at("budget_seconds").get<double>();

  nlohmann::json opt_json = cfg.value("optimizer", nlohmann::json::object());
  opt_json["kind"] = optimizer;
  fedhpo::OptimizerSpec spec = fedhpo::optimizer_spec_from_json(opt_json);
  spec.seed = seed;

  sc.tasks = {task};
  fedhpo::BenchmarkHandle h = fedhpo::build_task_handle(sc, task);
  std::vector<fedhpo::Trial> trials = fedhpo::run_optimizer(spec, h, budget);

  nlohmann::json meta;
  meta["schema_version"] = fedhpo::kStudySchemaVersion;
  meta["task"] = task.id;
  meta["optimizer"] = optimizer;
  meta["seed"] = seed;
  meta["mode"] = fedhpo::to_string(sc.mode);
  meta["budget_seconds"] = budget;
  meta["system"] = fedhpo::to_json(sc.system);
  fedhpo::write_cell_log(out_path, meta, trials);
  std::fprintf(stderr, "%zu trials, final loss %s\n", trials.size(),
               fedhpo::g9(fedhpo::final_best(trials)).c_str());
  return 0;
}

int cmd_study(const std::string& config_path, const std::string& out_dir, int jobs) {
  fedhpo::StudyConfig cfg = fedhpo::study_config_from_json(load_json(config_path));
  fedhpo::StudyOutcome out = fedhpo::run_study(cfg, out_dir, jobs);
  std::fprintf(stderr, "%zu cells, %d failed\n", out.cells.size(), out.n_failed);
  for (const auto& c : out.cells)
    if (c.failed) std::fprintf(stderr, "  %s: %s\n", c.stem.c_str(), c.error.c_str());
  return out.n_failed == 0 ? 0 : 1;
}

int cmd_report(const std::string& study_dir) {
  fedhpo::write_reports(study_dir);
  std::fprintf(stderr, "reports written to '%s'\n", study_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated hyperparameter-optimization benchmark toolkit"};
  app.require_subcommand(1);

  std::string config, out, table, optimizer, mode = "tabular", study_dir;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool resume = false;

  auto* gen = app.add_subcommand("gen-table", "Evaluate the whole grid into a lookup table");
  gen->add_option("--config", config, "Config JSON: space, task, algorithm, fidelities")
      ->required();
  gen->add_option("--out", out, "Output table CSV")->required();
  gen->add_flag("--resume", resume, "Reuse rows already present in the output");
  gen->add_option("--jobs", jobs, "Worker threads");

  auto* fit = app.add_subcommand("fit-surrogate", "Fit regression forests on a table");
  fit->add_option("--config", config, "Config JSON carrying the search space")->required();
  fit->add_option("--table", table, "Input table CSV")->required();
  fit->add_option("--out", out, "Output surrogate file")->required();
  fit->add_option("--seed", seed, "Cross-validation seed");

  auto* run = app.add_subcommand("run", "One budgeted optimizer run");
  run->add_option("--config", config, "Config JSON: space, task, budget, optimizer params")
      ->required();
  run->add_option("--optimizer", optimizer, "rs | de | bo_kde | sha | hb | bohb | dehb")
      ->required();
  run->add_option("--mode", mode, "raw | tabular | surrogate");
  run->add_option("--seed", seed, "Run seed");
  run->add_option("--out", out, "Trial log (JSON lines)")->required();

  auto* study = app.add_subcommand("study", "Run a full task x optimizer x repetition grid");
  study->add_option("--config", config, "Study config JSON")->required();
  study->add_option("--out", out, "Study output directory")->required();
  study->add_option("--jobs", jobs, "Concurrent cells");

  auto* report = app.add_subcommand("report", "Regenerate summary CSVs from cell logs");
  report->add_option("--study-dir", study_dir, "Directory written by `study`")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_table(config, out, resume, jobs);
    if (fit->parsed()) return cmd_fit_surrogate(config, table, out, seed);
    if (run->parsed()) return cmd_run(config, optimizer, mode, seed, out);
    if (study->parsed()) return cmd_study(config, out, jobs);
    if (report->parsed()) return cmd_report(study_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
