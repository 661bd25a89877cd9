#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fedhpo/backends.hpp>
#include <fedhpo/dataflow.hpp>
#include <fedhpo/forest.hpp>

using namespace fedhpo;
namespace fs = std::filesystem;

namespace {

Eigen::MatrixXd column(const std::vector<double>& v) {
  Eigen::MatrixXd X(static_cast<int>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) X(static_cast<int>(i), 0) = v[i];
  return X;
}

Eigen::VectorXd vec(const std::vector<double>& v) {
  Eigen::VectorXd y(static_cast<int>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) y[static_cast<int>(i)] = v[i];
  return y;
}

Eigen::VectorXd probe(double x) {
  Eigen::VectorXd p(1);
  p[0] = x;
  return p;
}

SearchSpace tiny_space() {
  SearchSpace s;
  s.dimensions.push_back(
      {"learning_rate", DimKind::Continuous, 0.01, 1.0, {}, true, 3, Side::Client});
  s.dimensions.push_back({"batch_size", DimKind::Integer, 8, 32, {}, true, 2, Side::Client});
  s.validate();
  return s;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

// One small generated table shared across the cases below.
struct TableFixture {
  SearchSpace space;
  std::shared_ptr<FederatedDataset> data;
  std::vector<FidelityVector> fids;
  std::string path;
  LookupTable table;
};

const TableFixture& fixture() {
  static TableFixture f = [] {
    TableFixture t;
    t.space = tiny_space();
    Dataset d = synth_blobs(60, 4, 3, 1.0, 99);
    t.data = std::make_shared<FederatedDataset>(make_federated(d, 3, 1.0, 99));
    t.fids = {{1, 1.0}, {2, 1.0}, {4, 1.0}, {8, 1.0}};
    t.path = (fs::temp_directory_path() / "fedhpo_test_table.csv").string();
    fs::remove(t.path);
    fs::remove(sidecar_path(t.path));
    TableGenOptions opts;
    opts.n_seeds = 3;
    t.table = generate_table(*t.data, Algorithm::FedAvg, t.space, t.fids, opts, t.path);
    return t;
  }();
  return f;
}

BenchmarkHandle tabular_handle() {
  BenchmarkHandle h;
  h.task = task_info_of("tiny", *fixture().data);
  h.algo = Algorithm::FedAvg;
  h.space = fixture().space;
  h.mode = Mode::Tabular;
  h.table = std::make_shared<LookupTable>(fixture().table);
  return h;
}

}  // namespace

TEST_CASE("tree fits an axis-aligned step exactly", "[forest]") {
  Eigen::MatrixXd X = column({1, 2, 3, 4, 5, 6});
  Eigen::VectorXd y = vec({0, 0, 1, 1, 1, 1});
  forest::ForestParams p;
  p.n_trees = 1;
  p.bootstrap = false;
  auto f = forest::Forest::fit(X, y, p, 1);
  // The zero-error split lands midway between x=2 and x=3.
  CHECK(f.predict(probe(2.4)) == 0.0);
  CHECK(f.predict(probe(2.6)) == 1.0);
  CHECK(f.predict(probe(-10.0)) == 0.0);
  CHECK(f.predict(probe(100.0)) == 1.0);
}

TEST_CASE("split search picks the informative feature", "[forest]") {
  // Feature 1 is pure noise; only feature 0 separates the target.
  Eigen::MatrixXd X(8, 2);
  Eigen::VectorXd y(8);
  rng::Engine eng(5);
  for (int i = 0; i < 8; ++i) {
    X(i, 0) = i;
    X(i, 1) = eng.u01();
    y[i] = i >= 4 ? 2.0 : -2.0;
  }
  forest::ForestParams p;
  p.n_trees = 1;
  p.bootstrap = false;
  auto f = forest::Forest::fit(X, y, p, 1);
  const auto& root = f.trees()[0].nodes[0];
  CHECK(root.feature == 0);
  CHECK(root.threshold == Catch::Approx(3.5));
}

TEST_CASE("forest without bootstrap equals its tree", "[forest]") {
  rng::Engine eng(17);
  Eigen::MatrixXd X(30, 2);
  Eigen::VectorXd y(30);
  for (int i = 0; i < 30; ++i) {
    X(i, 0) = eng.u01();
    X(i, 1) = eng.u01();
    y[i] = X(i, 0) * 2.0 + X(i, 1);
  }
  forest::ForestParams one;
  one.n_trees = 1;
  one.bootstrap = false;
  forest::ForestParams many = one;
  many.n_trees = 7;
  auto a = forest::Forest::fit(X, y, one, 3);
  auto b = forest::Forest::fit(X, y, many, 3);
  for (double t : {0.1, 0.4, 0.9}) {
    Eigen::VectorXd q(2);
    q << t, 1.0 - t;
    CHECK(a.predict(q) == Catch::Approx(b.predict(q)).epsilon(1e-14));
  }
}

TEST_CASE("constant target predicts the constant everywhere", "[forest]") {
  rng::Engine eng(23);
  Eigen::MatrixXd X(25, 3);
  for (int i = 0; i < 25; ++i)
    for (int j = 0; j < 3; ++j) X(i, j) = eng.u01();
  Eigen::VectorXd y = Eigen::VectorXd::Constant(25, 0.7);
  forest::ForestParams p;
  p.n_trees = 10;
  auto f = forest::Forest::fit(X, y, p, 11);
  for (double t : {-5.0, 0.3, 42.0}) {
    Eigen::VectorXd q(3);
    q << t, t, t;
    CHECK(f.predict(q) == Catch::Approx(0.7).epsilon(1e-14));
  }
}

TEST_CASE("bootstrap forests are seed deterministic", "[forest]") {
  rng::Engine eng(31);
  Eigen::MatrixXd X(40, 2);
  Eigen::VectorXd y(40);
  for (int i = 0; i < 40; ++i) {
    X(i, 0) = eng.u01();
    X(i, 1) = eng.u01();
    y[i] = X(i, 0) + 0.1 * eng.normal();
  }
  forest::ForestParams p;
  p.n_trees = 10;
  auto a = forest::Forest::fit(X, y, p, 7);
  auto b = forest::Forest::fit(X, y, p, 7);
  auto c = forest::Forest::fit(X, y, p, 8);
  bool any_diff = false;
  for (double t : {0.05, 0.25, 0.5, 0.75, 0.95}) {
    Eigen::VectorXd q(2);
    q << t, 0.5;
    CHECK(a.predict(q) == b.predict(q));
    if (a.predict(q) != c.predict(q)) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("predictions stay inside the target range", "[forest]") {
  rng::Engine eng(41);
  Eigen::MatrixXd X(50, 2);
  Eigen::VectorXd y(50);
  for (int i = 0; i < 50; ++i) {
    X(i, 0) = eng.u01();
    X(i, 1) = eng.u01();
    y[i] = eng.uniform(-3.0, 5.0);
  }
  forest::ForestParams p;
  p.n_trees = 20;
  auto f = forest::Forest::fit(X, y, p, 2);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd q(2);
    q << eng.uniform(-1.0, 2.0), eng.uniform(-1.0, 2.0);
    double v = f.predict(q);
    CHECK(v >= y.minCoeff());
    CHECK(v <= y.maxCoeff());
  }
}

TEST_CASE("min_leaf and max_depth bound the tree", "[forest]") {
  Eigen::MatrixXd X = column({1, 2, 3, 4, 5, 6, 7, 8});
  Eigen::VectorXd y = vec({1, 2, 3, 4, 5, 6, 7, 8});
  forest::ForestParams leafy;
  leafy.n_trees = 1;
  leafy.bootstrap = false;
  leafy.min_leaf = 8;
  auto f = forest::Forest::fit(X, y, leafy, 1);
  CHECK(f.trees()[0].nodes.size() == 1);
  CHECK(f.predict(probe(3.0)) == Catch::Approx(4.5));

  forest::ForestParams shallow;
  shallow.n_trees = 1;
  shallow.bootstrap = false;
  shallow.max_depth = 1;
  auto g = forest::Forest::fit(X, y, shallow, 1);
  CHECK(g.trees()[0].nodes.size() <= 3);
}

TEST_CASE("forest stream round trip preserves predictions", "[forest]") {
  rng::Engine eng(53);
  Eigen::MatrixXd X(30, 2);
  Eigen::VectorXd y(30);
  for (int i = 0; i < 30; ++i) {
    X(i, 0) = eng.u01();
    X(i, 1) = eng.u01();
    y[i] = std::sin(X(i, 0) * 6.0) + X(i, 1);
  }
  forest::ForestParams p;
  p.n_trees = 10;
  auto f = forest::Forest::fit(X, y, p, 9);
  std::stringstream buf;
  f.save(buf);
  auto g = forest::Forest::load(buf, p);
  for (double t : {0.1, 0.6, 0.9}) {
    Eigen::VectorXd q(2);
    q << t, t;
    CHECK(f.predict(q) == g.predict(q));
  }
}

TEST_CASE("generate table writes one row per grid cell", "[backends]") {
  const auto& f = fixture();
  CHECK(f.table.rows.size() == 24);  // 6 configs x 4 fidelities
  auto main_lines = lines_of(slurp(f.path));
  CHECK(main_lines.size() == 25);  // header + rows
  CHECK(main_lines[0] == table_header(f.space));
  auto side_lines = lines_of(slurp(sidecar_path(f.path)));
  CHECK(side_lines.size() == 1 + 24 * 3);
  for (const auto& row : f.table.rows) CHECK(row.n_seeds == 3);
}

TEST_CASE("rerunning a complete table recomputes nothing", "[backends]") {
  const auto& f = fixture();
  std::string before = slurp(f.path);
  std::string side_before = slurp(sidecar_path(f.path));
  // A different dataset would change every metric, so byte-identical output
  // proves the rows came from disk.
  Dataset other = synth_blobs(60, 4, 3, 1.0, 12345);
  auto other_fed = make_federated(other, 3, 1.0, 12345);
  TableGenOptions opts;
  opts.n_seeds = 3;
  auto t = generate_table(other_fed, Algorithm::FedAvg, f.space, f.fids, opts, f.path);
  CHECK(slurp(f.path) == before);
  CHECK(slurp(sidecar_path(f.path)) == side_before);
  CHECK(t.rows.size() == 24);
}

TEST_CASE("an interrupted table resumes from the rows on disk", "[backends]") {
  const auto& f = fixture();
  std::string full = slurp(f.path);
  std::string side_full = slurp(sidecar_path(f.path));
  auto main_lines = lines_of(full);
  auto side_lines = lines_of(side_full);

  std::string part_path = (fs::temp_directory_path() / "fedhpo_test_partial.csv").string();
  std::string part_side = sidecar_path(part_path);
  {
    std::ofstream out(part_path, std::ios::trunc);
    for (std::size_t i = 0; i <= 5; ++i) out << main_lines[i] << '\n';
    std::ofstream side(part_side, std::ios::trunc);
    for (std::size_t i = 0; i <= 15; ++i) side << side_lines[i] << '\n';
  }
  TableGenOptions opts;
  opts.n_seeds = 3;
  auto t = generate_table(*f.data, Algorithm::FedAvg, f.space, f.fids, opts, part_path);
  CHECK(t.rows.size() == 24);
  CHECK(slurp(part_path) == full);
  CHECK(slurp(part_side) == side_full);
  fs::remove(part_path);
  fs::remove(part_side);
}

TEST_CASE("parallel generation matches the sequential bytes", "[backends]") {
  const auto& f = fixture();
  std::string par_path = (fs::temp_directory_path() / "fedhpo_test_parallel.csv").string();
  fs::remove(par_path);
  fs::remove(sidecar_path(par_path));
  TableGenOptions opts;
  opts.n_seeds = 3;
  opts.n_jobs = 3;
  generate_table(*f.data, Algorithm::FedAvg, f.space, f.fids, opts, par_path);
  CHECK(slurp(par_path) == slurp(f.path));
  CHECK(slurp(sidecar_path(par_path)) == slurp(sidecar_path(f.path)));
  fs::remove(par_path);
  fs::remove(sidecar_path(par_path));
}

TEST_CASE("stored means average the per-seed runs", "[backends]") {
  const auto& f = fixture();
  const TableRow& row = f.table.rows[7];
  std::array<double, 9> mean{};
  for (int s = 0; s < 3; ++s) {
    auto course = run_course(*f.data, Algorithm::FedAvg, f.space, row.config, row.fidelity,
                             static_cast<std::uint64_t>(s));
    auto m = metrics_of(course.final);
    for (std::size_t i = 0; i < 9; ++i) mean[i] += m[i] / 3.0;
  }
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(row.metrics[i] == Catch::Approx(mean[i]).epsilon(1e-7).margin(1e-9));
}

TEST_CASE("sidecar rows reproduce raw runs bit exactly", "[backends]") {
  const auto& f = fixture();
  const TableRow& row = f.table.rows[3];
  auto course =
      run_course(*f.data, Algorithm::FedAvg, f.space, row.config, row.fidelity, 1);
  std::string expect = detail::seed_line(f.space, 1, row.config, row.fidelity,
                                         metrics_of(course.final));
  auto side_lines = lines_of(slurp(sidecar_path(f.path)));
  bool found = false;
  for (const auto& l : side_lines)
    if (l == expect) found = true;
  CHECK(found);
}

TEST_CASE("job cap rejects oversized table requests", "[backends]") {
  const auto& f = fixture();
  TableGenOptions opts;
  opts.n_seeds = 3;
  opts.max_jobs = 10;
  CHECK_THROWS_AS(
      generate_table(*f.data, Algorithm::FedAvg, f.space, f.fids, opts, "/tmp/never.csv"),
      std::invalid_argument);
}

TEST_CASE("load_table rejects broken files", "[backends]") {
  const auto& f = fixture();
  CHECK_THROWS_WITH(load_table("/nonexistent/table.csv", f.space),
                    Catch::Matchers::ContainsSubstring("cannot open"));

  auto main_lines = lines_of(slurp(f.path));
  std::string tmp = (fs::temp_directory_path() / "fedhpo_test_broken.csv").string();
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << "wrong,header\n";
  }
  CHECK_THROWS_WITH(load_table(tmp, f.space),
                    Catch::Matchers::ContainsSubstring("header"));
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (std::size_t i = 0; i + 1 < main_lines.size(); ++i) out << main_lines[i] << '\n';
  }
  CHECK_THROWS_WITH(load_table(tmp, f.space),
                    Catch::Matchers::ContainsSubstring("incomplete"));
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const auto& l : main_lines) out << l << '\n';
    out << main_lines[1] << '\n';
  }
  CHECK_THROWS_WITH(load_table(tmp, f.space),
                    Catch::Matchers::ContainsSubstring("duplicate"));
  fs::remove(tmp);
}

TEST_CASE("tabular evaluate returns stored rows and rejects off-grid", "[backends]") {
  auto h = tabular_handle();
  const TableRow& row = fixture().table.rows[10];
  EvalResult r = evaluate(h, row.config, row.fidelity, 0);
  auto m = metrics_of(RoundReport{});
  (void)m;
  CHECK(r.valid.loss == row.metrics[1]);
  CHECK(r.train.loss == row.metrics[0]);
  CHECK(r.test.macro_f1 == row.metrics[8]);

  HyperConfig off = row.config;
  off.values[0] = 0.5;  // between the lr grid points
  CHECK_THROWS_AS(evaluate(h, off, row.fidelity, 0), GridMissError);

  FidelityVector odd{3, 1.0};  // round count the table never stored
  CHECK_THROWS_AS(evaluate(h, row.config, odd, 0), GridMissError);
}

TEST_CASE("raw evaluate matches the course and prices it", "[backends]") {
  const auto& f = fixture();
  BenchmarkHandle h;
  h.task = task_info_of("tiny", *f.data);
  h.algo = Algorithm::FedAvg;
  h.space = f.space;
  h.mode = Mode::Raw;
  h.data = f.data;

  HyperConfig cfg = f.table.rows[0].config;
  FidelityVector b{4, 1.0};
  EvalResult r = evaluate(h, cfg, b, 7);
  auto course = run_course(*f.data, Algorithm::FedAvg, f.space, cfg, b, 7);
  auto m = metrics_of(course.final);
  CHECK(r.valid.loss == m[1]);
  CHECK(r.test.accuracy == m[5]);

  // Expected price: LR payload on this task, default network.
  double payload = 15.0 * 4.0 / (1024.0 * 1024.0);
  SystemModelParams p = resolve_system_params(h.sys, payload);
  CHECK(r.elapsed_seconds == Catch::Approx(course_time(p, 3, b)));
  CHECK(h.ledger.spent() == Catch::Approx(r.elapsed_seconds));
}

TEST_CASE("sampled straggler pricing is seed deterministic", "[backends]") {
  auto h = tabular_handle();
  h.sys.sampled_stragglers = true;
  auto h2 = tabular_handle();
  h2.sys.sampled_stragglers = true;
  const TableRow& row = fixture().table.rows[2];
  EvalResult a = evaluate(h, row.config, row.fidelity, 5);
  EvalResult b = evaluate(h2, row.config, row.fidelity, 5);
  CHECK(a.elapsed_seconds == b.elapsed_seconds);
  CHECK(a.elapsed_seconds > 0.0);
  EvalResult c = evaluate(h2, row.config, row.fidelity, 6);
  CHECK(c.elapsed_seconds != a.elapsed_seconds);
}

TEST_CASE("evaluate charges the ledger until exhausted", "[backends]") {
  auto h = tabular_handle();
  const TableRow& row = fixture().table.rows[0];
  double cost = evaluation_cost(h, row.config, row.fidelity, 0);
  h.ledger = BudgetLedger(1.5 * cost);
  evaluate(h, row.config, row.fidelity, 0);
  CHECK_FALSE(h.ledger.exhausted());
  evaluate(h, row.config, row.fidelity, 1);
  CHECK(h.ledger.exhausted());
  CHECK(h.ledger.spent() == Catch::Approx(2.0 * cost));
  CHECK_THROWS_AS(evaluate(h, row.config, row.fidelity, 2), BudgetExhausted);
}

TEST_CASE("surrogate on a constant table predicts the constant", "[backends]") {
  SearchSpace space = tiny_space();
  LookupTable t;
  t.space = space;
  std::vector<FidelityVector> fids = {{1, 1.0}, {2, 1.0}, {4, 1.0}, {8, 1.0}};
  for (const auto& cfg : grid(space)) {
    for (const auto& b : fids) {
      TableRow row;
      row.config = cfg;
      row.fidelity = b;
      row.metrics.fill(0.7);
      row.n_seeds = 1;
      t.index.emplace(detail::row_key(cfg, b), t.rows.size());
      t.rows.push_back(row);
    }
  }
  auto model = fit_surrogate(t, 1);
  CHECK(model.cv_mae <= 1e-12);
  HyperConfig q;
  q.values = {0.37, 16.0};  // off-grid on purpose
  EvalResult r = model.predict(q, {5, 0.6});
  CHECK(r.valid.loss == Catch::Approx(0.7).epsilon(1e-14));
  CHECK(r.train.accuracy == Catch::Approx(0.7).epsilon(1e-14));
  CHECK(r.test.macro_f1 == Catch::Approx(0.7).epsilon(1e-14));
}

TEST_CASE("surrogate learns an axis-aligned step", "[backends]") {
  SearchSpace space;
  space.dimensions.push_back({"step_size", DimKind::Integer, 1, 4, {}, false, 4, Side::Client});
  space.dimensions.push_back(
      {"learning_rate", DimKind::Continuous, 1e-5, 1.0, {}, true, 6, Side::Client});
  space.validate();
  LookupTable t;
  t.space = space;
  for (const auto& cfg : grid(space)) {
    TableRow row;
    row.config = cfg;
    row.fidelity = {1, 1.0};
    double target = cfg.values[0] >= 3.0 ? 1.0 : 0.0;
    row.metrics.fill(target);
    row.n_seeds = 1;
    t.index.emplace(detail::row_key(row.config, row.fidelity), t.rows.size());
    t.rows.push_back(row);
  }
  REQUIRE(t.rows.size() == 24);
  auto model = fit_surrogate(t, 3);
  CHECK(model.cv_mae <= 0.05);
}

TEST_CASE("fit_surrogate is deterministic and too-small tables fail", "[backends]") {
  const auto& f = fixture();
  auto a = fit_surrogate(f.table, 5);
  auto b = fit_surrogate(f.table, 5);
  CHECK(a.cv_mae == b.cv_mae);
  CHECK(a.params.n_trees == b.params.n_trees);
  CHECK(a.params.max_depth == b.params.max_depth);
  for (const auto& row : f.table.rows) {
    EvalResult ra = a.predict(row.config, row.fidelity);
    EvalResult rb = b.predict(row.config, row.fidelity);
    CHECK(ra.valid.loss == rb.valid.loss);
  }

  LookupTable small;
  small.space = f.space;
  small.rows.assign(f.table.rows.begin(), f.table.rows.begin() + 10);
  CHECK_THROWS_AS(fit_surrogate(small, 1), std::invalid_argument);
}

TEST_CASE("surrogate stays close to the table it was fit on", "[backends]") {
  const auto& f = fixture();
  auto model = fit_surrogate(f.table, 5);
  int within = 0;
  for (const auto& row : f.table.rows) {
    EvalResult r = model.predict(row.config, row.fidelity);
    if (std::abs(r.valid.loss - row.metrics[1]) <= 5.0 * model.cv_mae) ++within;
  }
  // Mode-consistency target: at least 95% of grid points.
  CHECK(within * 100 >= 95 * static_cast<int>(f.table.rows.size()));
}

TEST_CASE("surrogate file round trip and magic check", "[backends]") {
  const auto& f = fixture();
  auto model = fit_surrogate(f.table, 5);
  std::string path = (fs::temp_directory_path() / "fedhpo_test_model.bin").string();
  model.save(path);
  auto back = SurrogateModel::load(path);
  CHECK(back.cv_mae == model.cv_mae);
  CHECK(back.params.n_trees == model.params.n_trees);
  CHECK(back.space.dimensions.size() == model.space.dimensions.size());
  for (const auto& row : f.table.rows) {
    EvalResult ra = model.predict(row.config, row.fidelity);
    EvalResult rb = back.predict(row.config, row.fidelity);
    CHECK(ra.valid.loss == rb.valid.loss);
    CHECK(ra.test.macro_f1 == rb.test.macro_f1);
  }

  // Corrupt the magic and expect a refusal.
  {
    std::fstream fix(path, std::ios::in | std::ios::out | std::ios::binary);
    fix.seekp(0);
    fix.put('X');
  }
  CHECK_THROWS_WITH(SurrogateModel::load(path),
                    Catch::Matchers::ContainsSubstring("not a surrogate model"));
  fs::remove(path);
}

TEST_CASE("surrogate evaluate goes through the handle", "[backends]") {
  const auto& f = fixture();
  auto model = std::make_shared<SurrogateModel>(fit_surrogate(f.table, 5));
  BenchmarkHandle h;
  h.task = task_info_of("tiny", *f.data);
  h.algo = Algorithm::FedAvg;
  h.space = f.space;
  h.mode = Mode::Surrogate;
  h.model = model;
  const TableRow& row = f.table.rows[4];
  EvalResult direct = model->predict(row.config, row.fidelity);
  EvalResult r = evaluate(h, row.config, row.fidelity, 9);
  CHECK(r.valid.loss == direct.valid.loss);
  CHECK(r.elapsed_seconds > 0.0);
  CHECK(h.ledger.spent() == Catch::Approx(r.elapsed_seconds));

  // Surrogates answer off-grid queries instead of raising a grid miss.
  HyperConfig off = row.config;
  off.values[0] = 0.5;
  CHECK_NOTHROW(evaluate(h, off, row.fidelity, 9));
}
