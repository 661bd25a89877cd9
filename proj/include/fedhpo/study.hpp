#pragma once

// Study orchestration: runs the (task x optimizer x repetition) grid under a
// shared simulated budget, logs every cell as JSON lines, and distills the
// logs into summary CSVs (final losses, sign tests, mean ranks, regret
// ECDFs). Reports are a pure function of the logs, so they can be
// regenerated from a study directory alone.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <fedhpo/analysis.hpp>
#include <fedhpo/fedex.hpp>

namespace fedhpo {

constexpr int kStudySchemaVersion = 1;

struct TaskSpec {
  std::string id;
  std::string source = "synthetic";  // synthetic | csv
  std::string csv_path;
  std::string label_column = "label";
  int n_samples = 200;
  int n_features = 8;
  int n_classes = 3;
  double spread = 1.0;
  int n_clients = 4;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  std::string table_path;      // tabular mode
  std::string surrogate_path;  // surrogate mode
};

struct StudyOptimizer {
  std::string name;
  OptimizerSpec spec;
  bool fedex = false;
  FedExOptions fedex_options;
};

struct StudyConfig {
  SearchSpace space;
  Mode mode = Mode::Tabular;
  Algorithm algorithm = Algorithm::FedAvg;
  SystemModelConfig system;
  std::vector<TaskSpec> tasks;
  std::vector<StudyOptimizer> optimizers;
  double budget_seconds = 0.0;
  int repetitions = 1;
  std::uint64_t base_seed = 0;
  int grid_points = 512;

  void validate() const {
    if (tasks.empty()) throw std::invalid_argument("study: no tasks");
    if (optimizers.empty()) throw std::invalid_argument("study: no optimizers");
    if (!(budget_seconds > 0.0)) throw std::invalid_argument("study: budget must be positive");
    if (repetitions < 1) throw std::invalid_argument("study: repetitions must be at least 1");
    if (grid_points < 1) throw std::invalid_argument("study: grid_points must be at least 1");
    std::set<std::string> names;
    auto check_name = [&](const std::string& s, const char* what) {
      if (s.empty()) throw std::invalid_argument(std::string("study: empty ") + what);
      for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
          throw std::invalid_argument("study: " + std::string(what) + " '" + s +
                                      "' may use only letters, digits, '_' and '-'");
      if (!names.insert(s).second)
        throw std::invalid_argument("study: duplicate name '" + s + "'");
    };
    for (const auto& t : tasks) check_name(t.id, "task id");
    names.clear();
    for (const auto& o : optimizers) {
      check_name(o.name, "optimizer name");
      if (o.fedex && o.spec.kind != OptKind::RS && o.spec.kind != OptKind::SHA)
        throw std::invalid_argument("study: fedex wrapper must be rs or sha");
      o.spec.params.validate();
    }
    for (const auto& t : tasks) {
      if (t.source != "synthetic" && t.source != "csv")
        throw std::invalid_argument("study: unknown task source '" + t.source + "'");
      if (t.source == "csv" && t.csv_path.empty())
        throw std::invalid_argument("study: csv task '" + t.id + "' needs csv_path");
      if (mode == Mode::Tabular && t.table_path.empty())
        throw std::invalid_argument("study: tabular mode needs table_path for '" + t.id + "'");
      if (mode == Mode::Surrogate && t.surrogate_path.empty())
        throw std::invalid_argument("study: surrogate mode needs surrogate_path for '" + t.id +
                                    "'");
    }
  }
};

inline nlohmann::json to_json(const TaskSpec& t) {
  nlohmann::json j;
  j["id"] = t.id;
  j["source"] = t.source;
  if (t.source == "csv") {
    j["csv_path"] = t.csv_path;
    j["label_column"] = t.label_column;
  } else {
    j["n_samples"] = t.n_samples;
    j["n_features"] = t.n_features;
    j["n_classes"] = t.n_classes;
    j["spread"] = t.spread;
  }
  j["n_clients"] = t.n_clients;
  j["alpha"] = t.alpha;
  j["seed"] = t.seed;
  if (!t.table_path.empty()) j["table"] = t.table_path;
  if (!t.surrogate_path.empty()) j["surrogate"] = t.surrogate_path;
  return j;
}

inline TaskSpec task_spec_from_json(const nlohmann::json& j) {
  TaskSpec t;
  t.id = j.at("id").get<std::string>();
  if (j.contains("source")) t.source = j.at("source").get<std::string>();
  if (j.contains("csv_path")) t.csv_path = j.at("csv_path").get<std::string>();
  if (j.contains("label_column")) t.label_column = j.at("label_column").get<std::string>();
  if (j.contains("n_samples")) t.n_samples = j.at("n_samples").get<int>();
  if (j.contains("n_features")) t.n_features = j.at("n_features").get<int>();
  if (j.contains("n_classes")) t.n_classes = j.at("n_classes").get<int>();
  if (j.contains("spread")) t.spread = j.at("spread").get<double>();
  if (j.contains("n_clients")) t.n_clients = j.at("n_clients").get<int>();
  if (j.contains("alpha")) t.alpha = j.at("alpha").get<double>();
  if (j.contains("seed")) t.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("table")) t.table_path = j.at("table").get<std::string>();
  if (j.contains("surrogate")) t.surrogate_path = j.at("surrogate").get<std::string>();
  return t;
}

inline nlohmann::json optimizer_entry_to_json(const StudyOptimizer& o) {
  nlohmann::json j;
  j["name"] = o.name;
  j["kind"] = to_string(o.spec.kind);
  j["seed"] = o.spec.seed;
  const OptimizerParams d;  // defaults: only emit what differs
  const OptimizerParams& p = o.spec.params;
  if (p.sample_rate != d.sample_rate) j["sample_rate"] = p.sample_rate;
  if (p.rounds != d.rounds) j["rounds"] = p.rounds;
  if (p.population != d.population) j["population"] = p.population;
  if (p.f != d.f) j["f"] = p.f;
  if (p.cr != d.cr) j["cr"] = p.cr;
  if (p.gamma != d.gamma) j["gamma"] = p.gamma;
  if (p.n_samples != d.n_samples) j["n_samples"] = p.n_samples;
  if (p.random_fraction != d.random_fraction) j["random_fraction"] = p.random_fraction;
  if (p.bandwidth_factor != d.bandwidth_factor) j["bandwidth_factor"] = p.bandwidth_factor;
  if (p.min_bandwidth != d.min_bandwidth) j["min_bandwidth"] = p.min_bandwidth;
  if (p.min_points != d.min_points) j["min_points"] = p.min_points;
  if (p.n0 != d.n0) j["n0"] = p.n0;
  if (p.stages != d.stages) j["stages"] = p.stages;
  if (p.total_rounds != d.total_rounds) j["total_rounds"] = p.total_rounds;
  if (p.eta != d.eta) j["eta"] = p.eta;
  if (p.max_rounds != d.max_rounds) j["max_rounds"] = p.max_rounds;
  if (!p.schedule.empty()) {
    nlohmann::json sch = nlohmann::json::array();
    for (auto [n, r] : p.schedule) sch.push_back({n, r});
    j["schedule"] = sch;
  }
  if (o.fedex) {
    j["fedex"] = true;
    j["eta_p"] = o.fedex_options.eta_p;
    j["beta"] = o.fedex_options.beta;
  }
  return j;
}

inline StudyOptimizer optimizer_entry_from_json(const nlohmann::json& j) {
  StudyOptimizer o;
  o.name = j.at("name").get<std::string>();
  o.spec = optimizer_spec_from_json(j);
  if (j.contains("fedex")) o.fedex = j.at("fedex").get<bool>();
  if (j.contains("eta_p")) o.fedex_options.eta_p = j.at("eta_p").get<double>();
  if (j.contains("beta")) o.fedex_options.beta = j.at("beta").get<double>();
  return o;
}

inline nlohmann::json to_json(const StudyConfig& c) {
  nlohmann::json j;
  j["schema_version"] = kStudySchemaVersion;
  j["space"] = to_json(c.space);
  j["mode"] = to_string(c.mode);
  j["algorithm"] = c.algorithm == Algorithm::FedAvg ? "fedavg" : "fedopt";
  j["system"] = to_json(c.system);
  j["tasks"] = nlohmann::json::array();
  for (const auto& t : c.tasks) j["tasks"].push_back(to_json(t));
  j["optimizers"] = nlohmann::json::array();
  for (const auto& o : c.optimizers) j["optimizers"].push_back(optimizer_entry_to_json(o));
  j["budget_seconds"] = c.budget_seconds;
  j["repetitions"] = c.repetitions;
  j["base_seed"] = c.base_seed;
  j["grid_points"] = c.grid_points;
  return j;
}

inline StudyConfig study_config_from_json(const nlohmann::json& j) {
  StudyConfig c;
  c.space = space_from_json(j.at("space"));
  if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("algorithm")) {
    std::string a = j.at("algorithm").get<std::string>();
    if (a == "fedavg") {
      c.algorithm = Algorithm::FedAvg;
    } else if (a == "fedopt") {
      c.algorithm = Algorithm::FedOpt;
    } else {
      throw std::invalid_argument("study: unknown algorithm '" + a + "'");
    }
  }
  if (j.contains("system")) c.system = system_config_from_json(j.at("system"));
  for (const auto& t : j.at("tasks")) c.tasks.push_back(task_spec_from_json(t));
  for (const auto& o : j.at("optimizers")) c.optimizers.push_back(optimizer_entry_from_json(o));
  c.budget_seconds = j.at("budget_seconds").get<double>();
  if (j.contains("repetitions")) c.repetitions = j.at("repetitions").get<int>();
  if (j.contains("base_seed")) c.base_seed = j.at("base_seed").get<std::uint64_t>();
  if (j.contains("grid_points")) c.grid_points = j.at("grid_points").get<int>();
  c.validate();
  return c;
}

inline std::string config_hash(const StudyConfig& c) {
  std::uint64_t h = rng::hash_key(to_json(c).dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- Task materialization -------------------------------------------------------

inline BenchmarkHandle build_task_handle(const StudyConfig& cfg, const TaskSpec& t) {
  BenchmarkHandle h;
  h.algo = cfg.algorithm;
  h.space = cfg.space;
  h.mode = cfg.mode;
  h.sys = cfg.system;
  Dataset base = t.source == "csv" ? load_csv(t.csv_path, t.label_column)
                                   : synth_blobs(t.n_samples, t.n_features, t.n_classes,
                                                 t.spread, t.seed);
  auto fed = std::make_shared<FederatedDataset>(make_federated(base, t.n_clients, t.alpha,
                                                               t.seed));
  h.task = task_info_of(t.id, *fed);
  switch (cfg.mode) {
    case Mode::Raw:
      h.data = fed;
      break;
    case Mode::Tabular:
      h.data = fed;
      h.table = std::make_shared<LookupTable>(load_table(t.table_path, cfg.space));
      break;
    case Mode::Surrogate:
      h.data = fed;
      h.model = std::make_shared<SurrogateModel>(SurrogateModel::load(t.surrogate_path));
      break;
  }
  h.validate();
  return h;
}

// --- Cell logs --------------------------------------------------------------------

struct CellId {
  int task = 0, optimizer = 0, repetition = 0;
};

inline std::string cell_stem(const StudyConfig& cfg, const CellId& id) {
  return cfg.tasks[static_cast<std::size_t>(id.task)].id + "__" +
         cfg.optimizers[static_cast<std::size_t>(id.optimizer)].name + "__rep" +
         std::to_string(id.repetition);
}

inline std::uint64_t cell_seed(const StudyConfig& cfg, const CellId& id) {
  return rng::mix(cfg.base_seed, "cell", id.task, id.optimizer, id.repetition);
}

inline nlohmann::json trial_to_json(const Trial& t) {
  nlohmann::json j;
  j["config"] = t.config.values;
  j["rounds"] = t.fidelity.rounds;
  j["sample_rate"] = t.fidelity.sample_rate;
  auto m = metrics_of(t.result);
  auto names = metric_names();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = m[i];
  j["diverged"] = t.result.diverged;
  j["sim_time"] = t.sim_time_at_completion;
  return j;
}

inline Trial trial_from_json(const nlohmann::json& j) {
  Trial t;
  t.config.values = j.at("config").get<std::vector<double>>();
  t.fidelity.rounds = j.at("rounds").get<int>();
  t.fidelity.sample_rate = j.at("sample_rate").get<double>();
  std::array<double, 9> m{};
  auto names = metric_names();
  for (std::size_t i = 0; i < names.size(); ++i) m[i] = j.at(names[i]).get<double>();
  assign_metrics(t.result, m);
  t.result.diverged = j.at("diverged").get<bool>();
  t.sim_time_at_completion = j.at("sim_time").get<double>();
  return t;
}

struct CellLog {
  nlohmann::json meta;
  std::vector<Trial> trials;
  bool failed = false;
  std::string error;
};

inline void write_cell_log(const std::string& path, const nlohmann::json& meta,
                           const std::vector<Trial>& trials, const std::string& error = "") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("study: cannot write '" + path + "'");
  out << meta.dump() << "\n";
  for (const auto& t : trials) out << trial_to_json(t).dump() << "\n";
  if (!error.empty()) {
    nlohmann::json e;
    e["kind"] = "error";
    e["message"] = error;
    out << e.dump() << "\n";
  }
}

inline CellLog read_cell_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("study: cannot open '" + path + "'");
  CellLog log;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("study: empty cell log '" + path + "'");
  log.meta = nlohmann::json::parse(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    if (j.contains("kind") && j.at("kind") == "error") {
      log.failed = true;
      log.error = j.at("message").get<std::string>();
      continue;
    }
    log.trials.push_back(trial_from_json(j));
  }
  return log;
}

// --- Execution --------------------------------------------------------------------

struct CellOutcome {
  CellId id;
  std::string stem;
  bool failed = false;
  std::string error;
  std::size_t n_trials = 0;
};

struct StudyOutcome {
  std::string directory;
  std::vector<CellOutcome> cells;
  int n_failed = 0;
};

namespace detail {

inline void run_one_cell(const StudyConfig& cfg, const BenchmarkHandle& task_handle,
                         const CellId& id, const std::string& dir, CellOutcome& out) {
  const StudyOptimizer& opt = cfg.optimizers[static_cast<std::size_t>(id.optimizer)];
  out.id = id;
  out.stem = cell_stem(cfg, id);
  std::string log_path = dir + "/cells/" + out.stem + ".jsonl";

  OptimizerSpec spec = opt.spec;
  spec.seed = rng::mix(cell_seed(cfg, id), spec.seed);

  nlohmann::json meta;
  meta["schema_version"] = kStudySchemaVersion;
  meta["task"] = cfg.tasks[static_cast<std::size_t>(id.task)].id;
  meta["optimizer"] = opt.name;
  meta["repetition"] = id.repetition;
  meta["seed"] = spec.seed;
  meta["mode"] = to_string(cfg.mode);
  meta["budget_seconds"] = cfg.budget_seconds;
  meta["system"] = to_json(cfg.system);
  meta["config_hash"] = config_hash(cfg);

  try {
    BenchmarkHandle h = task_handle;  // fresh ledger per cell, shared read-only data
    std::vector<Trial> trials;
    if (opt.fedex) {
      FedExRun fx = run_fedex(spec, h, cfg.budget_seconds, opt.fedex_options);
      trials = std::move(fx.trials);
      std::ofstream pol(dir + "/cells/" + out.stem + ".policy.csv", std::ios::binary);
      if (!pol) throw std::runtime_error("study: cannot write policy series");
      pol << "# schema_version " << kStudySchemaVersion << "\n";
      pol << "trial,round,dimension,arm,probability\n";
      for (const auto& snap : fx.snapshots)
        for (std::size_t d = 0; d < snap.probs.size(); ++d)
          for (std::size_t a = 0; a < snap.probs[d].size(); ++a)
            pol << snap.trial << ',' << snap.round << ',' << fx.policy.dims[d].name << ','
                << g9(fx.policy.dims[d].arms[a]) << ',' << g9(snap.probs[d][a]) << "\n";
    } else {
      trials = run_optimizer(spec, h, cfg.budget_seconds);
    }
    out.n_trials = trials.size();
    write_cell_log(log_path, meta, trials);
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
    write_cell_log(log_path, meta, {}, e.what());
  }
}

}  // namespace detail

inline void write_reports(const std::string& dir);

// Runs every cell of the study grid, one budgeted optimizer run each, then
// distills the logs into the summary reports. Cell failures are recorded in
// the outcome and the cell's log, never fatal.
inline StudyOutcome run_study(const StudyConfig& cfg, const std::string& dir, int jobs = 1) {
  cfg.validate();
  if (jobs < 1) throw std::invalid_argument("run_study: jobs must be at least 1");
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/cells");
  {
    std::ofstream out(dir + "/study.json", std::ios::binary);
    if (!out) throw std::runtime_error("study: cannot write study.json");
    out << to_json(cfg).dump(2) << "\n";
  }

  std::vector<BenchmarkHandle> handles;
  for (const auto& t : cfg.tasks) handles.push_back(build_task_handle(cfg, t));

  std::vector<CellId> ids;
  for (int t = 0; t < static_cast<int>(cfg.tasks.size()); ++t)
    for (int o = 0; o < static_cast<int>(cfg.optimizers.size()); ++o)
      for (int r = 0; r < cfg.repetitions; ++r) ids.push_back({t, o, r});

  StudyOutcome outcome;
  outcome.directory = dir;
  outcome.cells.resize(ids.size());
  int n_jobs = std::min<int>(jobs, static_cast<int>(ids.size()));
  if (n_jobs <= 1) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      detail::run_one_cell(cfg, handles[static_cast<std::size_t>(ids[i].task)], ids[i], dir,
                           outcome.cells[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < n_jobs; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < ids.size(); i = next.fetch_add(1))
          detail::run_one_cell(cfg, handles[static_cast<std::size_t>(ids[i].task)], ids[i], dir,
                               outcome.cells[i]);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& c : outcome.cells)
    if (c.failed) ++outcome.n_failed;

  write_reports(dir);
  return outcome;
}

// --- Reports ------------------------------------------------------------------------

// Recomputes every summary CSV from study.json plus the cell logs.
inline void write_reports(const std::string& dir) {
  std::ifstream cfg_in(dir + "/study.json");
  if (!cfg_in) throw std::runtime_error("report: cannot open '" + dir + "/study.json'");
  nlohmann::json cfg_json = nlohmann::json::parse(cfg_in);
  StudyConfig cfg = study_config_from_json(cfg_json);

  std::size_t n_tasks = cfg.tasks.size();
  std::size_t n_opts = cfg.optimizers.size();
  std::size_t n_reps = static_cast<std::size_t>(cfg.repetitions);

  // logs[t][o][r]
  std::vector<std::vector<std::vector<CellLog>>> logs(
      n_tasks, std::vector<std::vector<CellLog>>(n_opts, std::vector<CellLog>(n_reps)));
  for (std::size_t t = 0; t < n_tasks; ++t)
    for (std::size_t o = 0; o < n_opts; ++o)
      for (std::size_t r = 0; r < n_reps; ++r) {
        CellId id{static_cast<int>(t), static_cast<int>(o), static_cast<int>(r)};
        std::string path = dir + "/cells/" + cell_stem(cfg, id) + ".jsonl";
        try {
          logs[t][o][r] = read_cell_log(path);
        } catch (const std::exception& e) {
          logs[t][o][r].failed = true;
          logs[t][o][r].error = e.what();
        }
      }

  auto csv_open = [&](const std::string& name) {
    std::ofstream out(dir + "/" + name, std::ios::binary);
    if (!out) throw std::runtime_error("report: cannot write '" + name + "'");
    out << "# schema_version " << kStudySchemaVersion << "\n";
    return out;
  };

  // Final best-seen loss per cell.
  {
    auto out = csv_open("final_losses.csv");
    out << "task,optimizer,repetition,status,n_trials,final_loss\n";
    for (std::size_t t = 0; t < n_tasks; ++t)
      for (std::size_t o = 0; o < n_opts; ++o)
        for (std::size_t r = 0; r < n_reps; ++r) {
          const CellLog& log = logs[t][o][r];
          out << cfg.tasks[t].id << ',' << cfg.optimizers[o].name << ',' << r << ','
              << (log.failed ? "failed" : "ok") << ',' << log.trials.size() << ','
              << g9(final_best(log.trials)) << "\n";
        }
  }

  // Pairwise sign tests on final losses over all (task, repetition) cells.
  {
    auto out = csv_open("sign_tests.csv");
    out << "optimizer_a,optimizer_b,wins,ties,losses,p_value\n";
    for (std::size_t a = 0; a < n_opts; ++a)
      for (std::size_t b = a + 1; b < n_opts; ++b) {
        int wins = 0, ties = 0, losses = 0;
        for (std::size_t t = 0; t < n_tasks; ++t)
          for (std::size_t r = 0; r < n_reps; ++r) {
            if (logs[t][a][r].failed || logs[t][b][r].failed) continue;
            double fa = final_best(logs[t][a][r].trials);
            double fb = final_best(logs[t][b][r].trials);
            if (fa < fb) {
              ++wins;
            } else if (fb < fa) {
              ++losses;
            } else {
              ++ties;
            }
          }
        out << cfg.optimizers[a].name << ',' << cfg.optimizers[b].name << ',' << wins << ','
            << ties << ',' << losses << ',';
        if (wins + losses > 0) out << g9(sign_test(wins, ties, losses));
        out << "\n";
      }
  }

  // Mean rank over the shared simulated-time grid.
  {
    auto out = csv_open("mean_rank.csv");
    out << "time";
    for (const auto& o : cfg.optimizers) out << ',' << o.name;
    out << "\n";
    double t_first = std::numeric_limits<double>::infinity();
    for (const auto& per_task : logs)
      for (const auto& per_opt : per_task)
        for (const auto& log : per_opt)
          if (!log.failed && !log.trials.empty()) {
            auto steps = best_seen_steps(log.trials);
            if (!steps.empty()) t_first = std::min(t_first, steps.front().first);
          }
    if (n_opts >= 2 && std::isfinite(t_first)) {
      std::vector<double> grid = time_grid(t_first, cfg.budget_seconds, cfg.grid_points);
      std::vector<std::vector<std::vector<double>>> curves(n_opts);
      for (std::size_t o = 0; o < n_opts; ++o)
        for (std::size_t t = 0; t < n_tasks; ++t)
          for (std::size_t r = 0; r < n_reps; ++r)
            curves[o].push_back(best_seen(logs[t][o][r].trials, grid));
      auto ranks = mean_rank(curves);
      for (std::size_t i = 0; i < grid.size(); ++i) {
        out << g9(grid[i]);
        for (std::size_t o = 0; o < n_opts; ++o) out << ',' << g9(ranks[o][i]);
        out << "\n";
      }
    }
  }

  // Per-task ECDF of normalized regret over every evaluated configuration.
  {
    auto out = csv_open("ecdf.csv");
    out << "task,regret,fraction\n";
    for (std::size_t t = 0; t < n_tasks; ++t) {
      std::vector<double> losses;
      for (std::size_t o = 0; o < n_opts; ++o)
        for (std::size_t r = 0; r < n_reps; ++r)
          for (const auto& trial : logs[t][o][r].trials)
            losses.push_back(trial.result.valid.loss);
      std::size_t distinct = std::set<double>(losses.begin(), losses.end()).size();
      if (distinct < 2) continue;
      for (auto [regret, frac] : ecdf(losses))
        out << cfg.tasks[t].id << ',' << g9(regret) << ',' << g9(frac) << "\n";
    }
  }
}

}  // namespace fedhpo
