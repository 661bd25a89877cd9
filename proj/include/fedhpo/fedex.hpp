#pragma once

// Federated hyperparameter exploration: a server-held policy samples a
// client-side configuration for every participant of every round, and the
// per-client validation feedback drives an exponentiated-gradient update of
// the policy. A standard optimizer (rs or sha) wraps the courses, owning the
// server-side dimensions and the simulated-time budget.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <fedhpo/optimizers.hpp>

namespace fedhpo {

// One categorical per tunable client-side dimension, over that dimension's
// tabular grid.
struct PolicyDim {
  std::string name;
  int index = -1;  // position of the dimension in the search space
  std::vector<double> arms;
  std::vector<double> probs;
};

struct Policy {
  std::vector<PolicyDim> dims;
  double step_size = 0.1;

  void validate() const {
    if (!(step_size >= 0.0)) throw std::invalid_argument("policy: negative step size");
    for (const auto& d : dims) {
      if (d.arms.empty() || d.arms.size() != d.probs.size())
        throw std::invalid_argument("policy: arm and probability sizes disagree");
      double sum = 0.0;
      for (double p : d.probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("policy: negative probability");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("policy: probabilities must sum to one");
    }
  }
};

// Uniform policy over the client-side grids. The model-shape axes stay out:
// every client trains the one global architecture, so depth and width can
// only be chosen per trial by the wrapper, never per client.
inline Policy make_policy(const SearchSpace& space, double eta_p = 0.1) {
  Policy pi;
  pi.step_size = eta_p;
  for (std::size_t i = 0; i < space.dimensions.size(); ++i) {
    const Dimension& d = space.dimensions[i];
    if (d.side != Side::Client) continue;
    if (d.name == "depth" || d.name == "width") continue;
    PolicyDim pd;
    pd.name = d.name;
    pd.index = static_cast<int>(i);
    pd.arms = d.grid_values();
    pd.probs.assign(pd.arms.size(), 1.0 / static_cast<double>(pd.arms.size()));
    pi.dims.push_back(std::move(pd));
  }
  pi.validate();
  return pi;
}

inline std::vector<int> sample_arms(const Policy& pi, rng::Engine& eng) {
  std::vector<int> arms(pi.dims.size(), 0);
  for (std::size_t d = 0; d < pi.dims.size(); ++d) {
    const auto& probs = pi.dims[d].probs;
    double u = eng.u01();
    double acc = 0.0;
    int pick = static_cast<int>(probs.size()) - 1;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      acc += probs[j];
      if (u < acc) {
        pick = static_cast<int>(j);
        break;
      }
    }
    arms[d] = pick;
  }
  return arms;
}

inline HyperConfig overlay_arms(const Policy& pi, const HyperConfig& base,
                                const std::vector<int>& arms) {
  if (arms.size() != pi.dims.size())
    throw std::invalid_argument("overlay_arms: arm vector size mismatch");
  HyperConfig cfg = base;
  for (std::size_t d = 0; d < pi.dims.size(); ++d)
    cfg.values[static_cast<std::size_t>(pi.dims[d].index)] =
        pi.dims[d].arms[static_cast<std::size_t>(arms[d])];
  return cfg;
}

// Independent draw per dimension; non-policy dimensions keep the base value.
inline HyperConfig sample_config(const Policy& pi, const HyperConfig& base, rng::Engine& eng) {
  return overlay_arms(pi, base, sample_arms(pi, eng));
}

struct ClientFeedback {
  int client_id = 0;
  std::vector<int> arms;  // arm index per policy dimension
  double loss = 0.0;      // client validation loss after the local update
  int n = 0;              // training sample count, used as the importance weight
  bool diverged = false;
};

// Reference level for the policy gradient. Starts at the first round's
// weighted mean so the very first update is already centered.
struct BaselineState {
  double value = 0.0;
  bool initialized = false;
};

// Exponentiated gradient descent on each dimension's categorical. The
// gradient estimate is importance-weighted by the sampling probability, and
// losses enter relative to the running baseline, so shifting every loss by a
// constant leaves the update unchanged. Diverged clients contribute their
// capped loss to the gradient but are excluded from the baseline, keeping one
// blow-up from poisoning the reference level.
inline void aggr_policy(Policy& pi, const std::vector<ClientFeedback>& feedback,
                        BaselineState& baseline, double beta = 0.1) {
  if (feedback.empty()) throw std::invalid_argument("aggr_policy: empty feedback");
  if (!(beta >= 0.0 && beta <= 1.0))
    throw std::invalid_argument("aggr_policy: beta must lie in [0, 1]");
  double total_n = 0.0;
  for (const auto& f : feedback) {
    if (f.arms.size() != pi.dims.size())
      throw std::invalid_argument("aggr_policy: arm vector size mismatch");
    if (f.n <= 0) throw std::invalid_argument("aggr_policy: nonpositive sample count");
    total_n += f.n;
  }

  double live_n = 0.0, live_sum = 0.0;
  for (const auto& f : feedback) {
    if (f.diverged) continue;
    live_n += f.n;
    live_sum += static_cast<double>(f.n) * f.loss;
  }
  double round_mean = live_n > 0.0 ? live_sum / live_n : baseline.value;
  double ref = baseline.initialized ? baseline.value : round_mean;

  for (std::size_t d = 0; d < pi.dims.size(); ++d) {
    auto& dim = pi.dims[d];
    std::vector<double> exponent(dim.probs.size(), 0.0);
    for (const auto& f : feedback) {
      std::size_t j = static_cast<std::size_t>(f.arms[d]);
      double w = static_cast<double>(f.n) / total_n;
      exponent[j] -= pi.step_size * w * (f.loss - ref) / dim.probs[j];
    }
    // Shift by the max before exponentiating; the normalization absorbs it.
    double top = *std::max_element(exponent.begin(), exponent.end());
    double sum = 0.0;
    std::vector<double> next(dim.probs.size());
    for (std::size_t j = 0; j < dim.probs.size(); ++j) {
      next[j] = dim.probs[j] * std::exp(exponent[j] - top);
      sum += next[j];
    }
    if (!(sum > 0.0)) continue;
    for (std::size_t j = 0; j < dim.probs.size(); ++j) dim.probs[j] = next[j] / sum;
  }

  if (live_n > 0.0) {
    baseline.value =
        baseline.initialized ? (1.0 - beta) * baseline.value + beta * round_mean : round_mean;
    baseline.initialized = true;
  }
}

struct FedExOptions {
  double eta_p = 0.1;  // policy step size
  double beta = 0.1;   // baseline smoothing
};

struct PolicySnapshot {
  int trial = 0;
  int round = 0;
  std::vector<std::vector<double>> probs;  // per dimension
};

struct FedExRun {
  std::vector<Trial> trials;
  Policy policy;
  BaselineState baseline;
  std::vector<PolicySnapshot> snapshots;  // one per simulated round
};

// Wrapper-driven exploration. Each wrapper trial runs one course in which
// every sampled client receives a fresh draw from the shared policy; the
// wrapper itself only sees the course's final global validation loss. The
// policy, its baseline, and the budget ledger persist across trials.
inline FedExRun run_fedex(const OptimizerSpec& wrapper, BenchmarkHandle& h,
                          double budget_seconds, const FedExOptions& opt = {}) {
  if (wrapper.kind != OptKind::RS && wrapper.kind != OptKind::SHA)
    throw std::invalid_argument("run_fedex: wrapper must be rs or sha");
  if (h.mode != Mode::Raw || !h.data)
    throw std::invalid_argument("run_fedex: needs a raw-mode handle with data");
  if (!(budget_seconds > 0.0))
    throw std::invalid_argument("run_fedex: budget must be positive");
  wrapper.params.validate();
  h.validate();
  h.ledger = BudgetLedger(budget_seconds);

  FedExRun out;
  out.policy = make_policy(h.space, opt.eta_p);

  detail::OptRun run(h, wrapper);
  run.eval_fn = [&](BenchmarkHandle& hh, const HyperConfig& cfg, const FidelityVector& b,
                    std::uint64_t seed) {
    hh.space.validate_config(cfg);
    hh.space.validate_fidelity(b);
    int trial_index = static_cast<int>(run.trials.size());
    ServerHypers server = server_hypers_from(hh.space, cfg);
    Architecture arch = architecture_from(hh.space, cfg);

    std::vector<std::vector<int>> pending;  // arms handed out this round
    AssignFn assign = [&](int round, const std::vector<int>& sampled) {
      rng::Engine eng(rng::mix(seed, "policy_draw", round));
      pending.clear();
      std::vector<ClientHypers> hypers;
      hypers.reserve(sampled.size());
      for (std::size_t k = 0; k < sampled.size(); ++k) {
        std::vector<int> arms = sample_arms(out.policy, eng);
        hypers.push_back(client_hypers_from(hh.space, overlay_arms(out.policy, cfg, arms)));
        pending.push_back(std::move(arms));
      }
      return hypers;
    };
    RoundHook hook = [&](const RoundReport& rep) {
      if (!rep.feedback.empty()) {
        std::vector<ClientFeedback> fbs;
        fbs.reserve(rep.feedback.size());
        for (std::size_t k = 0; k < rep.feedback.size(); ++k) {
          const auto& r = rep.feedback[k];
          fbs.push_back({r.client_id, pending[k], r.valid_loss, r.n_train, r.diverged});
        }
        aggr_policy(out.policy, fbs, out.baseline, opt.beta);
      }
      PolicySnapshot snap;
      snap.trial = trial_index;
      snap.round = rep.round_index;
      for (const auto& d : out.policy.dims) snap.probs.push_back(d.probs);
      out.snapshots.push_back(std::move(snap));
    };

    double cost = evaluation_cost(hh, cfg, b, seed);
    if (hh.ledger.exhausted()) throw BudgetExhausted("evaluation budget exhausted");
    CourseResult course =
        run_course_hooked(*hh.data, arch, hh.algo, server, b, seed, assign, hook);
    EvalResult res;
    res.train = course.final.train;
    res.valid = course.final.valid;
    res.test = course.final.test;
    res.diverged = course.diverged;
    res.elapsed_seconds = cost;
    hh.ledger.charge(cost);
    return res;
  };

  if (wrapper.kind == OptKind::RS) {
    detail::run_rs(run);
  } else {
    detail::run_sha(run);
  }
  out.trials = std::move(run.trials);
  return out;
}

// Per-dimension argmax arm, first index on ties.
inline HyperConfig incumbent_config(const Policy& pi, const HyperConfig& base) {
  HyperConfig cfg = base;
  for (const auto& d : pi.dims) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < d.probs.size(); ++j)
      if (d.probs[j] > d.probs[best]) best = j;
    cfg.values[static_cast<std::size_t>(d.index)] = d.arms[best];
  }
  return cfg;
}

struct IncumbentReport {
  HyperConfig config;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation across seeds
  std::vector<double> accuracies;
};

// Full courses at the target fidelity, one per seed, scored on test accuracy.
// Runs outside the tuning ledger: this is the final report, not a trial.
inline IncumbentReport evaluate_incumbent(const Policy& pi, const BenchmarkHandle& h,
                                          const HyperConfig& base, const FidelityVector& b_full,
                                          const std::vector<std::uint64_t>& seeds) {
  if (h.mode != Mode::Raw || !h.data)
    throw std::invalid_argument("evaluate_incumbent: needs a raw-mode handle with data");
  if (seeds.empty()) throw std::invalid_argument("evaluate_incumbent: needs at least one seed");
  IncumbentReport rep;
  rep.config = incumbent_config(pi, base);
  for (std::uint64_t s : seeds) {
    CourseResult r = run_course(*h.data, h.algo, h.space, rep.config, b_full, s);
    rep.accuracies.push_back(r.final.test.accuracy);
  }
  bool all_equal = true;
  for (double a : rep.accuracies)
    if (a != rep.accuracies.front()) all_equal = false;
  if (all_equal) {
    rep.mean_accuracy = rep.accuracies.front();
    rep.std_accuracy = 0.0;
    return rep;
  }
  double mean = 0.0;
  for (double a : rep.accuracies) mean += a;
  mean /= static_cast<double>(rep.accuracies.size());
  double ss = 0.0;
  for (double a : rep.accuracies) ss += (a - mean) * (a - mean);
  rep.mean_accuracy = mean;
  rep.std_accuracy = std::sqrt(ss / static_cast<double>(rep.accuracies.size() - 1));
  return rep;
}

}  // namespace fedhpo
