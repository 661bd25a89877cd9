#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <fedhpo/dataflow.hpp>
#include <fedhpo/fedex.hpp>

using namespace fedhpo;

namespace {

Policy two_arm_policy(double eta = 0.1) {
  Policy pi;
  pi.step_size = eta;
  pi.dims.push_back({"learning_rate", 0, {0.1, 0.5}, {0.5, 0.5}});
  return pi;
}

Policy three_arm_policy(double eta = 0.1) {
  Policy pi;
  pi.step_size = eta;
  pi.dims.push_back({"learning_rate", 0, {0.1, 0.3, 0.9}, {1.0 / 3, 1.0 / 3, 1.0 / 3}});
  return pi;
}

SearchSpace arm_space() {
  SearchSpace s;
  s.dimensions.push_back(
      {"learning_rate", DimKind::Categorical, 0, 0, {0.05, 0.1, 0.2}, false, 3, Side::Client});
  s.validate();
  return s;
}

SearchSpace pinned_space() {
  SearchSpace s;
  s.dimensions.push_back(
      {"learning_rate", DimKind::Categorical, 0, 0, {0.1}, false, 1, Side::Client});
  s.dimensions.push_back(
      {"batch_size", DimKind::Categorical, 0, 0, {16.0}, false, 1, Side::Client});
  s.validate();
  return s;
}

BenchmarkHandle raw_handle(const SearchSpace& space) {
  BenchmarkHandle h;
  h.algo = Algorithm::FedAvg;
  h.space = space;
  h.mode = Mode::Raw;
  Dataset d = synth_blobs(60, 4, 3, 1.0, 17);
  h.data = std::make_shared<FederatedDataset>(make_federated(d, 3, 1.0, 17));
  h.task = task_info_of("blobs", *h.data);
  return h;
}

double per_round_cost(BenchmarkHandle& h) {
  HyperConfig cfg = grid(h.space).front();
  return evaluation_cost(h, cfg, {1, 1.0}, 0);
}

}  // namespace

TEST_CASE("make_policy covers client grids and skips model-shape axes", "[fedex]") {
  Policy pi = make_policy(builtin_space(Family::MLP, Algorithm::FedOpt), 0.2);
  CHECK(pi.step_size == 0.2);
  std::vector<std::string> names;
  for (const auto& d : pi.dims) names.push_back(d.name);
  CHECK(names == std::vector<std::string>{"batch_size", "weight_decay", "step_size",
                                          "learning_rate"});
  for (const auto& d : pi.dims) {
    REQUIRE_FALSE(d.arms.empty());
    for (double p : d.probs) CHECK(p == Catch::Approx(1.0 / d.arms.size()));
  }
  pi.validate();
}

TEST_CASE("one-hot policy always samples its arm", "[fedex]") {
  Policy pi = two_arm_policy();
  pi.dims[0].probs = {0.0, 1.0};
  rng::Engine eng(4);
  HyperConfig base;
  base.values = {0.3};
  for (int i = 0; i < 100; ++i) {
    HyperConfig cfg = sample_config(pi, base, eng);
    CHECK(cfg.values[0] == 0.5);
  }
}

TEST_CASE("uniform policy sampling matches multinomial frequencies", "[fedex]") {
  Policy pi = three_arm_policy();
  rng::Engine eng(8);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 10000; ++i)
    counts[static_cast<std::size_t>(sample_arms(pi, eng)[0])] += 1;
  for (int j = 0; j < 3; ++j)
    CHECK(std::abs(counts[static_cast<std::size_t>(j)] / 10000.0 - 1.0 / 3) < 0.02);

  rng::Engine a(12), b(12);
  for (int i = 0; i < 50; ++i) CHECK(sample_arms(pi, a) == sample_arms(pi, b));
}

TEST_CASE("aggr_policy matches the hand-worked exponentiated step", "[fedex]") {
  Policy pi = two_arm_policy(0.1);
  BaselineState bl;
  std::vector<ClientFeedback> fb = {{0, {0}, 0.2, 1, false}, {1, {1}, 0.8, 1, false}};
  aggr_policy(pi, fb, bl);
  // Centered losses +-0.3, probs 0.5: exponent gap 2 * 0.1 * 0.3 = 0.06.
  CHECK(pi.dims[0].probs[0] == Catch::Approx(1.0 / (1.0 + std::exp(-0.06))).epsilon(1e-12));
  CHECK(bl.value == Catch::Approx(0.5));
  CHECK(bl.initialized);

  Policy pw = two_arm_policy(0.1);
  BaselineState blw;
  std::vector<ClientFeedback> wfb = {{0, {0}, 0.2, 3, false}, {1, {1}, 0.8, 1, false}};
  aggr_policy(pw, wfb, blw);
  // Weights 0.75/0.25, mean 0.35: gradients -+0.225, exponent gap 0.045.
  CHECK(pw.dims[0].probs[0] == Catch::Approx(1.0 / (1.0 + std::exp(-0.045))).epsilon(1e-12));
  CHECK(blw.value == Catch::Approx(0.35));

  // A stationary loss stream keeps the baseline fixed under the EMA.
  aggr_policy(pw, wfb, blw);
  CHECK(blw.value == Catch::Approx(0.35));
}

TEST_CASE("losses equal to the baseline leave the policy unchanged", "[fedex]") {
  Policy pi = two_arm_policy(0.3);
  std::vector<ClientFeedback> fb = {{0, {0}, 0.4, 2, false}, {1, {1}, 0.4, 5, false}};

  BaselineState fresh;
  aggr_policy(pi, fb, fresh);
  CHECK(pi.dims[0].probs[0] == 0.5);
  CHECK(pi.dims[0].probs[1] == 0.5);

  BaselineState warm{0.4, true};
  aggr_policy(pi, fb, warm);
  CHECK(pi.dims[0].probs[0] == 0.5);
  CHECK(warm.value == Catch::Approx(0.4));
}

TEST_CASE("policy updates are invariant to shifting every loss", "[fedex]") {
  for (double shift : {-3.0, 0.7, 250.0}) {
    Policy a = three_arm_policy(0.2);
    Policy b = three_arm_policy(0.2);
    BaselineState bla, blb;
    for (int t = 0; t < 5; ++t) {
      std::vector<ClientFeedback> fa = {{0, {t % 3}, 0.2 + 0.1 * t, 2, false},
                                        {1, {(t + 1) % 3}, 0.9 - 0.05 * t, 1, false},
                                        {2, {(t + 2) % 3}, 0.5, 3, false}};
      std::vector<ClientFeedback> fs = fa;
      for (auto& f : fs) f.loss += shift;
      aggr_policy(a, fa, bla);
      aggr_policy(b, fs, blb);
    }
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(a.dims[0].probs[j] == Catch::Approx(b.dims[0].probs[j]).margin(1e-9));
  }
}

TEST_CASE("the better arm's probability strictly increases", "[fedex]") {
  Policy pi = two_arm_policy(0.1);
  BaselineState bl;
  double prev = 0.5;
  for (int t = 0; t < 50; ++t) {
    std::vector<ClientFeedback> fb = {{0, {0}, 0.2, 1, false}, {1, {1}, 0.8, 1, false}};
    aggr_policy(pi, fb, bl);
    // Strict growth until the importance weighting saturates the arm at 1.
    if (prev < 1.0) {
      CHECK(pi.dims[0].probs[0] > prev);
    } else {
      CHECK(pi.dims[0].probs[0] == 1.0);
    }
    prev = pi.dims[0].probs[0];
  }
  CHECK(prev > 0.9);
}

TEST_CASE("policies stay on the simplex through arbitrary updates", "[fedex]") {
  Policy pi = three_arm_policy(0.5);
  BaselineState bl;
  rng::Engine eng(33);
  for (int t = 0; t < 300; ++t) {
    std::vector<ClientFeedback> fb;
    int k = 1 + static_cast<int>(eng.below(4));
    for (int i = 0; i < k; ++i)
      fb.push_back({i, sample_arms(pi, eng), eng.uniform(0.0, 5.0),
                    1 + static_cast<int>(eng.below(10)), false});
    aggr_policy(pi, fb, bl);
    double sum = 0.0;
    for (double p : pi.dims[0].probs) {
      REQUIRE(p >= 0.0);
      sum += p;
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("diverged clients push the policy but not the baseline", "[fedex]") {
  Policy pi = two_arm_policy(0.1);
  BaselineState bl;
  std::vector<ClientFeedback> fb = {{0, {0}, 0.3, 1, false},
                                    {1, {1}, kDivergenceCap, 1, true}};
  aggr_policy(pi, fb, bl);
  CHECK(bl.value == Catch::Approx(0.3));
  CHECK(pi.dims[0].probs[0] == Catch::Approx(1.0).margin(1e-9));

  // All-diverged feedback must not initialize the reference level.
  Policy pj = two_arm_policy(0.1);
  BaselineState blj;
  std::vector<ClientFeedback> bad = {{0, {0}, kDivergenceCap, 1, true}};
  aggr_policy(pj, bad, blj);
  CHECK_FALSE(blj.initialized);
}

TEST_CASE("aggr_policy rejects malformed feedback", "[fedex]") {
  Policy pi = two_arm_policy();
  BaselineState bl;
  CHECK_THROWS_AS(aggr_policy(pi, {}, bl), std::invalid_argument);
  std::vector<ClientFeedback> zero = {{0, {0}, 0.5, 0, false}};
  CHECK_THROWS_AS(aggr_policy(pi, zero, bl), std::invalid_argument);
  std::vector<ClientFeedback> wide = {{0, {0, 1}, 0.5, 1, false}};
  CHECK_THROWS_AS(aggr_policy(pi, wide, bl), std::invalid_argument);
}

TEST_CASE("the policy finds the best arm of a stationary bandit", "[fedex]") {
  int hits = 0;
  std::vector<double> arm_loss = {0.2, 0.35, 0.5};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Policy pi = three_arm_policy(0.1);
    BaselineState bl;
    for (int t = 0; t < 200; ++t) {
      rng::Engine eng(rng::mix(seed, "bandit", t));
      std::vector<ClientFeedback> fb;
      for (int i = 0; i < 4; ++i) {
        std::vector<int> arms = sample_arms(pi, eng);
        fb.push_back({i, arms, arm_loss[static_cast<std::size_t>(arms[0])], 1, false});
      }
      aggr_policy(pi, fb, bl);
    }
    const auto& p = pi.dims[0].probs;
    if (p[0] > p[1] && p[0] > p[2]) ++hits;
  }
  CHECK(hits >= 9);
}

TEST_CASE("rs-wrapped exploration charges exactly its trials", "[fedex]") {
  auto h = raw_handle(arm_space());
  double c1 = per_round_cost(h);
  OptimizerSpec wrapper;
  wrapper.kind = OptKind::RS;
  wrapper.seed = 91;
  wrapper.params.rounds = 50;
  FedExRun run = run_fedex(wrapper, h, 500.0 * c1 + 0.5 * c1);

  REQUIRE(run.trials.size() == 10);
  for (const auto& t : run.trials) CHECK(t.fidelity.rounds == 50);
  CHECK(h.ledger.spent() == Catch::Approx(500.0 * c1));
  CHECK(run.snapshots.size() == 500);
  CHECK(run.baseline.initialized);
  run.policy.validate();
  CHECK(run.snapshots.back().probs[0] == run.policy.dims[0].probs);
}

TEST_CASE("sha-wrapped exploration follows the ladder and its price", "[fedex]") {
  auto h = raw_handle(arm_space());
  double c1 = per_round_cost(h);
  OptimizerSpec wrapper;
  wrapper.kind = OptKind::SHA;
  wrapper.seed = 14;
  wrapper.params.n0 = 27;
  wrapper.params.stages = 3;
  wrapper.params.total_rounds = 500;  // resolves to 27x12, 9x13, 3x19
  FedExRun run = run_fedex(wrapper, h, 498.0 * c1 + 0.5 * c1);

  REQUIRE(run.trials.size() == 39);
  for (int i = 0; i < 27; ++i) CHECK(run.trials[static_cast<std::size_t>(i)].fidelity.rounds == 12);
  for (int i = 27; i < 36; ++i) CHECK(run.trials[static_cast<std::size_t>(i)].fidelity.rounds == 13);
  for (int i = 36; i < 39; ++i) CHECK(run.trials[static_cast<std::size_t>(i)].fidelity.rounds == 19);
  CHECK(h.ledger.spent() == Catch::Approx(498.0 * c1));
  run.policy.validate();
}

TEST_CASE("single-arm grids reduce the exploration to its wrapper", "[fedex]") {
  OptimizerSpec wrapper;
  wrapper.kind = OptKind::RS;
  wrapper.seed = 55;
  wrapper.params.rounds = 3;

  auto ha = raw_handle(pinned_space());
  double budget = 12.5 * per_round_cost(ha);
  FedExRun fx = run_fedex(wrapper, ha, budget);

  auto hb = raw_handle(pinned_space());
  std::vector<Trial> plain = run_optimizer(wrapper, hb, budget);

  REQUIRE(fx.trials.size() == plain.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    CHECK(fx.trials[i].config.values == plain[i].config.values);
    CHECK(fx.trials[i].result.valid.loss == plain[i].result.valid.loss);
    CHECK(fx.trials[i].result.test.accuracy == plain[i].result.test.accuracy);
    CHECK(fx.trials[i].sim_time_at_completion == plain[i].sim_time_at_completion);
  }
}

TEST_CASE("a zero step size keeps the policy uniform", "[fedex]") {
  auto h = raw_handle(arm_space());
  OptimizerSpec wrapper;
  wrapper.kind = OptKind::RS;
  wrapper.seed = 2;
  wrapper.params.rounds = 4;
  FedExOptions opt;
  opt.eta_p = 0.0;
  FedExRun run = run_fedex(wrapper, h, 20.5 * per_round_cost(h), opt);
  REQUIRE_FALSE(run.trials.empty());
  for (double p : run.policy.dims[0].probs) CHECK(p == 1.0 / 3);
}

TEST_CASE("run_fedex rejects unsupported setups", "[fedex]") {
  OptimizerSpec de;
  de.kind = OptKind::DE;
  auto h = raw_handle(arm_space());
  CHECK_THROWS_AS(run_fedex(de, h, 100.0), std::invalid_argument);

  OptimizerSpec rs;
  rs.kind = OptKind::RS;
  rs.params.rounds = 2;
  BenchmarkHandle tab = h;
  tab.mode = Mode::Tabular;
  CHECK_THROWS_AS(run_fedex(rs, tab, 100.0), std::invalid_argument);
}

TEST_CASE("incumbent evaluation takes the argmax arms", "[fedex]") {
  Policy pi = three_arm_policy();
  pi.dims[0].probs = {0.2, 0.5, 0.3};
  HyperConfig base;
  base.values = {0.05};
  CHECK(incumbent_config(pi, base).values[0] == 0.3);

  SearchSpace space = arm_space();
  auto h = raw_handle(space);
  Policy hot = make_policy(space);
  hot.dims[0].probs = {0.0, 0.0, 1.0};
  FidelityVector full{6, 1.0};
  IncumbentReport rep = evaluate_incumbent(hot, h, grid(space).front(), full, {7, 7, 7});
  CHECK(rep.config.values[0] == 0.2);
  CHECK(rep.std_accuracy == 0.0);
  CourseResult direct = run_course(*h.data, h.algo, space, rep.config, full, 7);
  CHECK(rep.mean_accuracy == direct.final.test.accuracy);

  CHECK_THROWS_AS(evaluate_incumbent(hot, h, grid(space).front(), full, {}),
                  std::invalid_argument);
}
