#pragma once

#include <array>
#include <atomic>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "fl_engine.hpp"
#include "forest.hpp"
#include "sysmodel.hpp"

namespace fedhpo {

// One function evaluation f(lambda, b): per-split metrics plus the simulated
// wall-clock cost of the course that produced them.
struct EvalResult {
  SplitMetrics train, valid, test;
  double elapsed_seconds = 0.0;
  bool diverged = false;
};

inline const std::array<const char*, 9>& metric_names() {
  static const std::array<const char*, 9> names = {
      "train_loss", "valid_loss", "test_loss", "train_acc", "valid_acc",
      "test_acc",   "train_f1",   "valid_f1",  "test_f1"};
  return names;
}

inline std::array<double, 9> metrics_of(const RoundReport& r) {
  return {r.train.loss,     r.valid.loss,     r.test.loss,
          r.train.accuracy, r.valid.accuracy, r.test.accuracy,
          r.train.macro_f1, r.valid.macro_f1, r.test.macro_f1};
}

inline std::array<double, 9> metrics_of(const EvalResult& r) {
  return {r.train.loss,     r.valid.loss,     r.test.loss,
          r.train.accuracy, r.valid.accuracy, r.test.accuracy,
          r.train.macro_f1, r.valid.macro_f1, r.test.macro_f1};
}

inline void assign_metrics(EvalResult& out, const std::array<double, 9>& m) {
  out.train.loss = m[0];
  out.valid.loss = m[1];
  out.test.loss = m[2];
  out.train.accuracy = m[3];
  out.valid.accuracy = m[4];
  out.test.accuracy = m[5];
  out.train.macro_f1 = m[6];
  out.valid.macro_f1 = m[7];
  out.test.macro_f1 = m[8];
}

// Canonical float rendering used for every CSV the toolkit writes. Nine
// significant digits round-trip through double, so parsed values re-render
// to the same string.
inline std::string g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

class GridMissError : public std::runtime_error {
 public:
  explicit GridMissError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::string row_key(const HyperConfig& cfg, const FidelityVector& b) {
  std::string key;
  for (double v : cfg.values) {
    key += g9(v);
    key += '|';
  }
  key += std::to_string(b.rounds);
  key += '|';
  key += g9(b.sample_rate);
  return key;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("table: bad ") + what + " value '" + s + "'");
  }
}

}  // namespace detail

// --- Lookup table -----------------------------------------------------------

struct TableRow {
  HyperConfig config;
  FidelityVector fidelity;
  std::array<double, 9> metrics{};
  int n_seeds = 0;
};

struct LookupTable {
  SearchSpace space;
  std::vector<TableRow> rows;
  std::unordered_map<std::string, std::size_t> index;

  const TableRow* find(const HyperConfig& cfg, const FidelityVector& b) const {
    auto it = index.find(detail::row_key(cfg, b));
    return it == index.end() ? nullptr : &rows[it->second];
  }
};

inline std::string table_header(const SearchSpace& space) {
  std::string h;
  for (const auto& d : space.dimensions) {
    h += d.name;
    h += ',';
  }
  h += "round,sample_rate";
  for (const char* m : metric_names()) {
    h += ',';
    h += m;
  }
  h += ",n_seeds";
  return h;
}

inline std::string sidecar_path(const std::string& table_path) {
  const std::string ext = ".csv";
  if (table_path.size() > ext.size() &&
      table_path.compare(table_path.size() - ext.size(), ext.size(), ext) == 0)
    return table_path.substr(0, table_path.size() - ext.size()) + ".seeds.csv";
  return table_path + ".seeds";
}

inline std::string sidecar_header(const SearchSpace& space) {
  std::string h = "seed,";
  for (const auto& d : space.dimensions) {
    h += d.name;
    h += ',';
  }
  h += "round,sample_rate";
  for (const char* m : metric_names()) {
    h += ',';
    h += m;
  }
  return h;
}

// Parses and validates a completed table: schema match, one row per grid
// config and fidelity present, constant seed count.
inline LookupTable load_table(const std::string& path, const SearchSpace& space) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("table: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("table: empty file '" + path + "'");
  if (line != table_header(space))
    throw std::runtime_error("table: header does not match the search space in '" + path + "'");

  LookupTable t;
  t.space = space;
  std::size_t n_dims = space.dimensions.size();
  std::size_t n_cols = n_dims + 2 + 9 + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = detail::split_csv(line);
    if (cells.size() != n_cols)
      throw std::runtime_error("table: malformed row in '" + path + "'");
    TableRow row;
    for (std::size_t i = 0; i < n_dims; ++i)
      row.config.values.push_back(detail::parse_double(cells[i], "dimension"));
    row.fidelity.rounds = static_cast<int>(detail::parse_double(cells[n_dims], "round"));
    row.fidelity.sample_rate = detail::parse_double(cells[n_dims + 1], "sample_rate");
    for (std::size_t m = 0; m < 9; ++m)
      row.metrics[m] = detail::parse_double(cells[n_dims + 2 + m], "metric");
    row.n_seeds = static_cast<int>(detail::parse_double(cells[n_cols - 1], "n_seeds"));
    if (row.n_seeds < 1) throw std::runtime_error("table: n_seeds must be >= 1");
    std::string key = detail::row_key(row.config, row.fidelity);
    if (!t.index.emplace(key, t.rows.size()).second)
      throw std::runtime_error("table: duplicate row for " + key);
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw std::runtime_error("table: no rows in '" + path + "'");

  for (const auto& r : t.rows)
    if (r.n_seeds != t.rows.front().n_seeds)
      throw std::runtime_error("table: seed count varies across rows");

  // Full-coverage check: every grid config must appear at every fidelity
  // level the table contains.
  std::vector<FidelityVector> fidelities;
  for (const auto& r : t.rows) {
    bool seen = false;
    for (const auto& f : fidelities)
      if (f.rounds == r.fidelity.rounds && f.sample_rate == r.fidelity.sample_rate) seen = true;
    if (!seen) fidelities.push_back(r.fidelity);
  }
  auto configs = grid(space);
  if (t.rows.size() != configs.size() * fidelities.size())
    throw std::runtime_error("table: incomplete grid coverage in '" + path + "'");
  for (const auto& cfg : configs)
    for (const auto& f : fidelities)
      if (!t.find(cfg, f))
        throw std::runtime_error("table: missing grid row in '" + path + "'");
  return t;
}

// --- Feature encoding for the surrogate -------------------------------------

// Maps (config, fidelity) to a numeric row: one column per continuous or
// integer dimension (log axes in log10 domain), a one-hot block per
// categorical dimension, then round count and sample rate.
struct Encoder {
  struct Block {
    int start = 0;
    int width = 1;
  };
  std::vector<Block> blocks;
  int n_cols = 0;

  static Encoder from(const SearchSpace& space) {
    Encoder e;
    int col = 0;
    for (const auto& d : space.dimensions) {
      int w = d.kind == DimKind::Categorical ? static_cast<int>(d.values.size()) : 1;
      e.blocks.push_back({col, w});
      col += w;
    }
    e.n_cols = col + 2;
    return e;
  }

  Eigen::VectorXd encode(const SearchSpace& space, const HyperConfig& cfg,
                         const FidelityVector& b) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n_cols);
    for (std::size_t i = 0; i < space.dimensions.size(); ++i) {
      const Dimension& d = space.dimensions[i];
      double v = cfg.values[i];
      const Block& blk = blocks[i];
      if (d.kind == DimKind::Categorical) {
        int best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < d.values.size(); ++k) {
          double dist = std::abs(d.values[k] - v);
          if (dist < best_dist) {
            best_dist = dist;
            best = static_cast<int>(k);
          }
        }
        x[blk.start + best] = 1.0;
      } else if (d.log_scale) {
        x[blk.start] = std::log10(v);
      } else {
        x[blk.start] = v;
      }
    }
    x[n_cols - 2] = static_cast<double>(b.rounds);
    x[n_cols - 1] = b.sample_rate;
    return x;
  }
};

// --- Surrogate model ---------------------------------------------------------

constexpr char kSurrogateMagic[8] = {'F', 'H', 'P', 'O', 'S', 'R', 'G', '1'};

struct SurrogateModel {
  SearchSpace space;
  forest::ForestParams params;
  double cv_mae = 0.0;
  std::vector<forest::Forest> forests;  // one per metric, metric_names() order

  EvalResult predict(const HyperConfig& cfg, const FidelityVector& b) const {
    Encoder enc = Encoder::from(space);
    Eigen::VectorXd x = enc.encode(space, cfg, b);
    std::array<double, 9> m{};
    for (std::size_t i = 0; i < 9; ++i) m[i] = forests[i].predict(x);
    EvalResult r;
    assign_metrics(r, m);
    return r;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("surrogate: cannot write '" + path + "'");
    out.write(kSurrogateMagic, sizeof kSurrogateMagic);
    forest::Forest::write_u32(out, static_cast<std::uint32_t>(params.n_trees));
    forest::Forest::write_u32(out, static_cast<std::uint32_t>(params.max_depth));
    forest::Forest::write_u32(out, static_cast<std::uint32_t>(params.min_leaf));
    forest::Forest::write_f64(out, cv_mae);
    std::string space_json = to_json(space).dump();
    std::uint64_t len = space_json.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(space_json.data(), static_cast<std::streamsize>(space_json.size()));
    forest::Forest::write_u32(out, static_cast<std::uint32_t>(forests.size()));
    for (const auto& f : forests) f.save(out);
    if (!out) throw std::runtime_error("surrogate: write failed for '" + path + "'");
  }

  static SurrogateModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("surrogate: cannot open '" + path + "'");
    char magic[8] = {};
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kSurrogateMagic, sizeof magic) != 0)
      throw std::runtime_error("surrogate: '" + path + "' is not a surrogate model file");
    SurrogateModel m;
    m.params.n_trees = static_cast<int>(forest::Forest::read_u32(in));
    m.params.max_depth = static_cast<int>(forest::Forest::read_u32(in));
    m.params.min_leaf = static_cast<int>(forest::Forest::read_u32(in));
    m.cv_mae = forest::Forest::read_f64(in);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in) throw std::runtime_error("surrogate: truncated file '" + path + "'");
    std::string space_json(len, '\0');
    in.read(space_json.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("surrogate: truncated file '" + path + "'");
    m.space = space_from_json(nlohmann::json::parse(space_json));
    std::uint32_t n_forests = forest::Forest::read_u32(in);
    for (std::uint32_t i = 0; i < n_forests; ++i)
      m.forests.push_back(forest::Forest::load(in, m.params));
    if (m.forests.size() != 9)
      throw std::runtime_error("surrogate: unexpected forest count in '" + path + "'");
    return m;
  }
};

// 10-fold cross-validated grid search over the forest size, scored by mean
// absolute error on validation loss; the winner is refit on all rows, once
// per metric.
inline SurrogateModel fit_surrogate(const LookupTable& table, std::uint64_t seed) {
  if (table.rows.size() < 20)
    throw std::invalid_argument("fit_surrogate: need at least 20 table rows");
  const SearchSpace& space = table.space;
  Encoder enc = Encoder::from(space);
  int n = static_cast<int>(table.rows.size());
  Eigen::MatrixXd X(n, enc.n_cols);
  Eigen::MatrixXd Y(n, 9);
  for (int i = 0; i < n; ++i) {
    const TableRow& r = table.rows[static_cast<std::size_t>(i)];
    X.row(i) = enc.encode(space, r.config, r.fidelity).transpose();
    for (int m = 0; m < 9; ++m) Y(i, m) = r.metrics[static_cast<std::size_t>(m)];
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng::Engine fold_eng(rng::mix(seed, "cv_folds"));
  fold_eng.shuffle(order);
  const int k_folds = 10;
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  {
    int base = n / k_folds, extra = n % k_folds, pos = 0;
    for (int f = 0; f < k_folds; ++f) {
      int sz = base + (f < extra ? 1 : 0);
      for (int j = 0; j < sz; ++j) fold_of[static_cast<std::size_t>(order[pos++])] = f;
    }
  }

  const int tree_counts[] = {10, 20};
  const int depths[] = {10, 15, 20};
  forest::ForestParams best;
  double best_mae = std::numeric_limits<double>::infinity();
  int pair_index = 0;
  for (int nt : tree_counts) {
    for (int md : depths) {
      forest::ForestParams p;
      p.n_trees = nt;
      p.max_depth = md;
      double abs_err = 0.0;
      for (int f = 0; f < k_folds; ++f) {
        std::vector<int> tr;
        for (int i = 0; i < n; ++i)
          if (fold_of[static_cast<std::size_t>(i)] != f) tr.push_back(i);
        Eigen::MatrixXd Xt(static_cast<int>(tr.size()), enc.n_cols);
        Eigen::VectorXd yt(static_cast<int>(tr.size()));
        for (std::size_t j = 0; j < tr.size(); ++j) {
          Xt.row(static_cast<int>(j)) = X.row(tr[j]);
          yt[static_cast<int>(j)] = Y(tr[j], 1);  // validation loss column
        }
        auto model = forest::Forest::fit(Xt, yt, p, rng::mix(seed, "cv", pair_index, f));
        for (int i = 0; i < n; ++i)
          if (fold_of[static_cast<std::size_t>(i)] == f)
            abs_err += std::abs(model.predict(X.row(i).transpose()) - Y(i, 1));
      }
      double mae = abs_err / static_cast<double>(n);
      if (mae < best_mae) {
        best_mae = mae;
        best = p;
      }
      ++pair_index;
    }
  }

  SurrogateModel model;
  model.space = space;
  model.params = best;
  model.cv_mae = best_mae;
  for (int m = 0; m < 9; ++m)
    model.forests.push_back(
        forest::Forest::fit(X, Y.col(m), best, rng::mix(seed, "metric", m)));
  return model;
}

// --- Benchmark handle and evaluation -----------------------------------------

enum class Mode { Raw, Tabular, Surrogate };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::Raw: return "raw";
    case Mode::Tabular: return "tabular";
    default: return "surrogate";
  }
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "raw") return Mode::Raw;
  if (s == "tabular") return Mode::Tabular;
  if (s == "surrogate") return Mode::Surrogate;
  throw std::invalid_argument("unknown mode: " + s);
}

struct TaskInfo {
  std::string id;
  int n_clients = 0;
  int n_features = 0;
  int n_classes = 0;
};

struct BenchmarkHandle {
  TaskInfo task;
  Algorithm algo = Algorithm::FedAvg;
  SearchSpace space;
  Mode mode = Mode::Raw;
  SystemModelConfig sys;
  std::shared_ptr<const FederatedDataset> data;    // raw mode
  std::shared_ptr<const LookupTable> table;        // tabular mode
  std::shared_ptr<const SurrogateModel> model;     // surrogate mode
  BudgetLedger ledger{std::numeric_limits<double>::infinity()};

  void validate() const {
    if (task.n_clients < 1 || task.n_features < 1 || task.n_classes < 2)
      throw std::invalid_argument("handle: task metadata incomplete");
    if (mode == Mode::Raw && !data) throw std::invalid_argument("handle: raw mode needs data");
    if (mode == Mode::Tabular && !table)
      throw std::invalid_argument("handle: tabular mode needs a lookup table");
    if (mode == Mode::Surrogate && !model)
      throw std::invalid_argument("handle: surrogate mode needs a model");
  }
};

inline TaskInfo task_info_of(const std::string& id, const FederatedDataset& data) {
  TaskInfo t;
  t.id = id;
  t.n_clients = static_cast<int>(data.clients.size());
  t.n_features = data.n_features;
  t.n_classes = data.n_classes;
  return t;
}

// Simulated cost of the course this evaluation stands for. Payloads follow
// the model the config implies unless the config pins explicit sizes.
inline double evaluation_cost(const BenchmarkHandle& h, const HyperConfig& cfg,
                              const FidelityVector& b, std::uint64_t seed) {
  Architecture arch = architecture_from(h.space, cfg);
  double payload = static_cast<double>(param_count(arch, h.task.n_features, h.task.n_classes)) *
                   4.0 / (1024.0 * 1024.0);
  SystemModelParams p = resolve_system_params(h.sys, payload);
  if (p.sampled_stragglers) {
    rng::Engine eng(rng::mix(seed, "systime"));
    return sampled_course_time(p, h.task.n_clients, b, eng);
  }
  return course_time(p, h.task.n_clients, b);
}

inline EvalResult evaluate(BenchmarkHandle& h, const HyperConfig& cfg, const FidelityVector& b,
                           std::uint64_t seed) {
  h.validate();
  h.space.validate_config(cfg);
  h.space.validate_fidelity(b);
  if (h.ledger.exhausted()) throw BudgetExhausted("evaluate: budget exhausted");

  EvalResult r;
  switch (h.mode) {
    case Mode::Raw: {
      CourseResult course = run_course(*h.data, h.algo, h.space, cfg, b, seed);
      auto m = metrics_of(course.final);
      assign_metrics(r, m);
      r.diverged = course.diverged;
      break;
    }
    case Mode::Tabular: {
      const TableRow* row = h.table->find(cfg, b);
      if (!row) {
        std::string msg = "tabular evaluate: query off the stored grid:";
        for (std::size_t i = 0; i < cfg.values.size(); ++i)
          msg += " " + h.space.dimensions[i].name + "=" + g9(cfg.values[i]);
        msg += " round=" + std::to_string(b.rounds) + " sample_rate=" + g9(b.sample_rate);
        throw GridMissError(msg);
      }
      assign_metrics(r, row->metrics);
      break;
    }
    case Mode::Surrogate: {
      r = h.model->predict(cfg, b);
      break;
    }
  }
  r.elapsed_seconds = evaluation_cost(h, cfg, b, seed);
  h.ledger.charge(r.elapsed_seconds);
  return r;
}

// --- Table generation ---------------------------------------------------------

struct TableGenOptions {
  int n_seeds = 3;
  int n_jobs = 1;
  long max_jobs = 1000000;  // cap on configs x fidelities x seeds
  // Called after each freshly computed row with (rows done, rows to compute);
  // may fire from worker threads when n_jobs > 1.
  std::function<void(long, long)> progress;
};

namespace detail {

struct PendingRow {
  std::size_t order_pos;
  HyperConfig config;
  FidelityVector fidelity;
};

struct ComputedRow {
  std::vector<std::array<double, 9>> per_seed;
  std::array<double, 9> mean{};
};

inline ComputedRow compute_row(const FederatedDataset& data, Algorithm algo,
                               const SearchSpace& space, const PendingRow& job, int n_seeds) {
  ComputedRow out;
  for (int s = 0; s < n_seeds; ++s) {
    CourseResult course =
        run_course(data, algo, space, job.config, job.fidelity,
                   static_cast<std::uint64_t>(s));
    out.per_seed.push_back(metrics_of(course.final));
  }
  for (const auto& m : out.per_seed)
    for (std::size_t i = 0; i < 9; ++i) out.mean[i] += m[i];
  for (std::size_t i = 0; i < 9; ++i) out.mean[i] /= static_cast<double>(n_seeds);
  return out;
}

inline std::string main_line(const SearchSpace& space, const HyperConfig& cfg,
                             const FidelityVector& b, const std::array<double, 9>& mean,
                             int n_seeds) {
  std::string line;
  for (std::size_t i = 0; i < space.dimensions.size(); ++i) {
    line += g9(cfg.values[i]);
    line += ',';
  }
  line += std::to_string(b.rounds);
  line += ',';
  line += g9(b.sample_rate);
  for (double v : mean) {
    line += ',';
    line += g9(v);
  }
  line += ',';
  line += std::to_string(n_seeds);
  return line;
}

inline std::string seed_line(const SearchSpace& space, int seed, const HyperConfig& cfg,
                             const FidelityVector& b, const std::array<double, 9>& m) {
  std::string line = std::to_string(seed);
  for (std::size_t i = 0; i < space.dimensions.size(); ++i) {
    line += ',';
    line += g9(cfg.values[i]);
  }
  line += ',';
  line += std::to_string(b.rounds);
  line += ',';
  line += g9(b.sample_rate);
  for (double v : m) {
    line += ',';
    line += g9(v);
  }
  return line;
}

// Reads an existing CSV into key -> line(s), tolerating a truncated final
// line from an interrupted run. key_cols are the columns forming the row key
// starting at key_start.
inline std::unordered_map<std::string, std::vector<std::string>> scan_existing(
    const std::string& path, const std::string& expect_header, std::size_t key_start,
    std::size_t n_dims, std::size_t n_cols) {
  std::unordered_map<std::string, std::vector<std::string>> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  if (!std::getline(in, line)) return out;
  if (line != expect_header)
    throw std::runtime_error("table: existing file '" + path + "' has a different schema");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != n_cols) continue;  // interrupted write
    std::string key;
    bool ok = true;
    for (std::size_t i = 0; i < n_dims; ++i) {
      try {
        key += g9(parse_double(cells[key_start + i], "dimension"));
      } catch (const std::exception&) {
        ok = false;
        break;
      }
      key += '|';
    }
    if (!ok) continue;
    try {
      key += std::to_string(
          static_cast<int>(parse_double(cells[key_start + n_dims], "round")));
      key += '|';
      key += g9(parse_double(cells[key_start + n_dims + 1], "sample_rate"));
    } catch (const std::exception&) {
      continue;
    }
    out[key].push_back(line);
  }
  return out;
}

}  // namespace detail

// Runs the full grid x fidelity grid with seeds 0..n_seeds-1 and writes the
// seed-averaged table plus a per-seed sidecar. Rows already present in the
// output file are reused verbatim, so an interrupted run resumes where it
// stopped. Row order is grid order (first dimension slowest) with the
// fidelity grid cycling fastest.
inline LookupTable generate_table(const FederatedDataset& data, Algorithm algo,
                                  const SearchSpace& space,
                                  const std::vector<FidelityVector>& fidelity_grid,
                                  const TableGenOptions& opts, const std::string& out_path) {
  if (fidelity_grid.empty()) throw std::invalid_argument("generate_table: empty fidelity grid");
  if (opts.n_seeds < 1) throw std::invalid_argument("generate_table: n_seeds must be >= 1");
  for (const auto& b : fidelity_grid) space.validate_fidelity(b);

  auto configs = grid(space);
  long total_jobs = static_cast<long>(configs.size()) * static_cast<long>(fidelity_grid.size()) *
                    opts.n_seeds;
  if (total_jobs > opts.max_jobs)
    throw std::invalid_argument("generate_table: " + std::to_string(total_jobs) +
                                " course runs exceed the job cap of " +
                                std::to_string(opts.max_jobs));

  std::string header = table_header(space);
  std::string side_path = sidecar_path(out_path);
  std::string side_header = sidecar_header(space);
  std::size_t n_dims = space.dimensions.size();

  auto existing = detail::scan_existing(out_path, header, 0, n_dims, n_dims + 2 + 9 + 1);
  auto existing_seeds =
      detail::scan_existing(side_path, side_header, 1, n_dims, 1 + n_dims + 2 + 9);

  std::vector<detail::PendingRow> all_rows;
  for (const auto& cfg : configs)
    for (const auto& b : fidelity_grid)
      all_rows.push_back({all_rows.size(), cfg, b});

  std::ofstream out(out_path, std::ios::trunc);
  std::ofstream side(side_path, std::ios::trunc);
  if (!out || !side)
    throw std::runtime_error("generate_table: cannot write '" + out_path + "'");
  out << header << '\n';
  side << side_header << '\n';

  std::vector<const detail::PendingRow*> missing;
  for (const auto& row : all_rows)
    if (!existing.count(detail::row_key(row.config, row.fidelity)))
      missing.push_back(&row);

  std::unordered_map<std::size_t, detail::ComputedRow> computed;
  long to_compute = static_cast<long>(missing.size());
  if (opts.n_jobs > 1 && missing.size() > 1) {
    std::atomic<std::size_t> next{0};
    std::atomic<long> done{0};
    std::vector<std::optional<detail::ComputedRow>> slots(missing.size());
    auto worker = [&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= missing.size()) return;
        slots[i] = detail::compute_row(data, algo, space, *missing[i], opts.n_seeds);
        if (opts.progress) opts.progress(done.fetch_add(1) + 1, to_compute);
      }
    };
    int n_threads = std::min<int>(opts.n_jobs, static_cast<int>(missing.size()));
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    for (std::size_t i = 0; i < missing.size(); ++i)
      computed.emplace(missing[i]->order_pos, std::move(*slots[i]));
  } else {
    long done = 0;
    for (const auto* row : missing) {
      computed.emplace(row->order_pos, detail::compute_row(data, algo, space, *row, opts.n_seeds));
      if (opts.progress) opts.progress(++done, to_compute);
    }
  }

  for (const auto& row : all_rows) {
    std::string key = detail::row_key(row.config, row.fidelity);
    auto hit = existing.find(key);
    if (hit != existing.end()) {
      auto side_hit = existing_seeds.find(key);
      if (side_hit != existing_seeds.end())
        for (const auto& l : side_hit->second) side << l << '\n';
      out << hit->second.front() << '\n';
    } else {
      const detail::ComputedRow& c = computed.at(row.order_pos);
      for (int s = 0; s < opts.n_seeds; ++s)
        side << detail::seed_line(space, s, row.config, row.fidelity,
                                  c.per_seed[static_cast<std::size_t>(s)])
             << '\n';
      out << detail::main_line(space, row.config, row.fidelity, c.mean, opts.n_seeds) << '\n';
    }
    out.flush();
    side.flush();
  }
  out.close();
  side.close();
  return load_table(out_path, space);
}

}  // namespace fedhpo
