#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "dataflow.hpp"
#include "model.hpp"
#include "space.hpp"

namespace fedhpo {

constexpr double kDivergenceCap = 1e6;

struct ClientHypers {
  int batch_size = 32;
  double weight_decay = 0.0;
  int step_size = 1;  // local mini-batch steps per round
  double learning_rate = 0.1;
  double dropout = 0.0;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("client hypers: batch_size >= 1");
    if (weight_decay < 0.0) throw std::invalid_argument("client hypers: weight_decay >= 0");
    if (step_size < 1) throw std::invalid_argument("client hypers: step_size >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("client hypers: learning_rate >= 0");
    if (dropout < 0.0 || dropout > 0.5)
      throw std::invalid_argument("client hypers: dropout in [0, 0.5]");
  }
};

struct ServerHypers {
  double learning_rate = 1.0;
  double momentum = 0.0;
};

struct ClientFeedbackRec {
  int client_id = 0;
  ClientHypers hypers;
  double valid_loss = 0.0;  // after the local update, on the client's own data
  int n_train = 0;
  bool diverged = false;
};

struct RoundReport {
  int round_index = 0;
  std::vector<int> sampled_clients;
  SplitMetrics train, valid, test;
  std::vector<ClientFeedbackRec> feedback;
  bool diverged = false;
};

struct CourseResult {
  RoundReport final;
  std::vector<RoundReport> rounds;
  bool diverged = false;
};

// --- HyperConfig -> typed hypers, resolved by dimension name ---

inline ClientHypers client_hypers_from(const SearchSpace& space, const HyperConfig& cfg) {
  ClientHypers h;
  auto get = [&](const char* name, double fallback) {
    int i = space.index_of(name);
    return i >= 0 ? cfg.values[static_cast<std::size_t>(i)] : fallback;
  };
  h.batch_size = static_cast<int>(get("batch_size", h.batch_size));
  h.weight_decay = get("weight_decay", h.weight_decay);
  h.step_size = static_cast<int>(get("step_size", h.step_size));
  h.learning_rate = get("learning_rate", h.learning_rate);
  h.dropout = get("dropout", h.dropout);
  h.validate();
  return h;
}

inline ServerHypers server_hypers_from(const SearchSpace& space, const HyperConfig& cfg) {
  ServerHypers s;
  int i = space.index_of("server_learning_rate");
  if (i >= 0) s.learning_rate = cfg.values[static_cast<std::size_t>(i)];
  i = space.index_of("momentum");
  if (i >= 0) s.momentum = cfg.values[static_cast<std::size_t>(i)];
  return s;
}

// Architecture is implied by the space: depth/width axes mean MLP.
inline Architecture architecture_from(const SearchSpace& space, const HyperConfig& cfg) {
  Architecture a;
  int di = space.index_of("depth");
  int wi = space.index_of("width");
  if (di >= 0 || wi >= 0) {
    if (di < 0 || wi < 0)
      throw std::invalid_argument("mlp space must carry both depth and width");
    a.kind = Arch::MLP;
    a.depth = static_cast<int>(cfg.values[static_cast<std::size_t>(di)]);
    a.width = static_cast<int>(cfg.values[static_cast<std::size_t>(wi)]);
  }
  a.validate();
  return a;
}

struct LocalUpdateResult {
  ModelParams model;
  bool diverged = false;
};

// `steps` mini-batch SGD steps. Batches cycle through a seeded shuffle of the
// shard and reshuffle on wrap-around. A non-finite or cap-exceeding batch
// objective stops training and returns the last finite parameters.
inline LocalUpdateResult local_update(const ModelParams& model, const Dataset& shard,
                                      const ClientHypers& h, int steps, std::uint64_t seed) {
  if (steps < 1) throw std::invalid_argument("local_update: steps >= 1");
  if (shard.n() == 0) throw std::invalid_argument("local_update: empty shard");
  h.validate();

  LocalUpdateResult out{model, false};
  rng::Engine eng(rng::mix(seed, "local_update"));
  int n = shard.n();
  int bs = std::min(h.batch_size, n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  eng.shuffle(order);
  int cursor = 0;

  Eigen::MatrixXd bx(bs, shard.d());
  std::vector<int> by(bs);
  for (int s = 0; s < steps; ++s) {
    if (cursor + bs > n) {
      eng.shuffle(order);
      cursor = 0;
    }
    for (int i = 0; i < bs; ++i) {
      bx.row(i) = shard.X.row(order[cursor + i]);
      by[static_cast<std::size_t>(i)] = shard.y[static_cast<std::size_t>(order[cursor + i])];
    }
    cursor += bs;

    GradientResult g = gradients(out.model, bx, by, h.weight_decay, h.dropout, &eng);
    if (!std::isfinite(g.loss)) {
      out.diverged = true;
      return out;
    }
    ModelParams next = out.model;
    for (std::size_t l = 0; l < next.n_layers(); ++l) {
      next.W[l] -= h.learning_rate * g.dW[l];
      next.b[l] -= h.learning_rate * g.db[l];
    }
    if (!next.all_finite()) {
      out.diverged = true;
      return out;
    }
    out.model = std::move(next);
  }
  return out;
}

inline ModelParams fedavg_aggregate(const std::vector<std::pair<ModelParams, int>>& updates) {
  if (updates.empty()) throw std::invalid_argument("fedavg_aggregate: empty update list");
  ModelParams avg = ModelParams::zeros_like(updates.front().first);
  double total = 0.0;
  for (const auto& [m, n] : updates) total += n;
  if (total <= 0.0) throw std::invalid_argument("fedavg_aggregate: zero total weight");
  for (const auto& [m, n] : updates) {
    if (m.n_layers() != avg.n_layers())
      throw std::invalid_argument("fedavg_aggregate: shape mismatch");
    double w = n / total;
    for (std::size_t l = 0; l < avg.n_layers(); ++l) {
      if (m.W[l].rows() != avg.W[l].rows() || m.W[l].cols() != avg.W[l].cols())
        throw std::invalid_argument("fedavg_aggregate: shape mismatch");
      avg.W[l] += w * m.W[l];
      avg.b[l] += w * m.b[l];
    }
  }
  return avg;
}

// Server SGD-with-momentum on the pseudo-gradient delta = avg - global.
// The (lr=1, momentum=0) case short-circuits to the plain average so FedAvg
// equivalence holds bit-exactly.
inline std::pair<ModelParams, ModelParams> fedopt_aggregate(
    const ModelParams& buffer, const ModelParams& global,
    const std::vector<std::pair<ModelParams, int>>& updates, const ServerHypers& s) {
  ModelParams avg = fedavg_aggregate(updates);
  ModelParams new_buffer = buffer;
  for (std::size_t l = 0; l < avg.n_layers(); ++l) {
    new_buffer.W[l] = s.momentum * buffer.W[l] + (avg.W[l] - global.W[l]);
    new_buffer.b[l] = s.momentum * buffer.b[l] + (avg.b[l] - global.b[l]);
  }
  if (s.learning_rate == 1.0 && s.momentum == 0.0) return {std::move(avg), std::move(new_buffer)};
  ModelParams next = global;
  for (std::size_t l = 0; l < next.n_layers(); ++l) {
    next.W[l] += s.learning_rate * new_buffer.W[l];
    next.b[l] += s.learning_rate * new_buffer.b[l];
  }
  return {std::move(next), std::move(new_buffer)};
}

// Per-client hyperparameter assignment for one round; the default course uses
// a constant assignment, the policy-gradient tuner swaps in per-client draws.
using AssignFn =
    std::function<std::vector<ClientHypers>(int round, const std::vector<int>& sampled)>;
using RoundHook = std::function<void(const RoundReport&)>;
using ParamHook = std::function<void(int round, const ModelParams&)>;

namespace detail {

inline SplitMetrics pooled_metrics(const ModelParams& m, const FederatedDataset& task,
                                   const Dataset ClientData::*split) {
  MetricAccumulator acc(task.n_classes);
  for (const auto& c : task.clients) acc.add(m, c.*split);
  return acc.finalize();
}

inline bool cap_metrics(SplitMetrics& cur, const SplitMetrics& last_finite) {
  if (!std::isfinite(cur.loss)) {
    cur = last_finite;
    cur.loss = kDivergenceCap;
    return true;
  }
  if (cur.loss > kDivergenceCap) {
    cur.loss = kDivergenceCap;
    return true;
  }
  return false;
}

}  // namespace detail

// The generic course loop. Runs T federated rounds with seeded client
// sampling, per-client local updates, and server aggregation; metrics are
// evaluated on all clients every round. Once the course diverges the model
// freezes and subsequent reports repeat the capped metrics.
inline CourseResult run_course_hooked(const FederatedDataset& task, Architecture arch,
                                      Algorithm algo, ServerHypers server,
                                      const FidelityVector& b, std::uint64_t seed,
                                      const AssignFn& assign, const RoundHook& hook = nullptr,
                                      const ParamHook& param_hook = nullptr) {
  if (task.n_clients() < 1) throw std::invalid_argument("run_course: task has no clients");
  if (b.rounds < 0) throw std::invalid_argument("run_course: negative round count");
  if (!(b.sample_rate > 0.0) || b.sample_rate > 1.0)
    throw std::invalid_argument("run_course: sample_rate must lie in (0, 1]");
  {
    long vn = 0, tn = 0;
    for (const auto& c : task.clients) {
      vn += c.valid.n();
      tn += c.test.n();
    }
    if (vn == 0) throw std::invalid_argument("run_course: task has no validation samples");
    if (tn == 0) throw std::invalid_argument("run_course: task has no test samples");
  }

  ModelParams model = ModelParams::init(arch, task.n_features, task.n_classes, seed);
  ModelParams buffer = ModelParams::zeros_like(model);
  int N = task.n_clients();
  int n_sampled = static_cast<int>(std::ceil(b.sample_rate * N));
  n_sampled = std::min(std::max(n_sampled, 1), N);

  CourseResult result;
  SplitMetrics last_train = detail::pooled_metrics(model, task, &ClientData::train);
  SplitMetrics last_valid = detail::pooled_metrics(model, task, &ClientData::valid);
  SplitMetrics last_test = detail::pooled_metrics(model, task, &ClientData::test);

  if (b.rounds == 0) {
    result.final.round_index = 0;
    result.final.train = last_train;
    result.final.valid = last_valid;
    result.final.test = last_test;
    return result;
  }

  bool course_diverged = false;
  for (int t = 0; t < b.rounds; ++t) {
    rng::Engine sample_rng(rng::mix(seed, "sampling", t));
    RoundReport rep;
    rep.round_index = t;
    rep.sampled_clients = sample_rng.sample_without_replacement(N, n_sampled);

    if (!course_diverged) {
      std::vector<ClientHypers> hypers = assign(t, rep.sampled_clients);
      if (hypers.size() != rep.sampled_clients.size())
        throw std::invalid_argument("run_course: assignment size mismatch");
      std::vector<std::pair<ModelParams, int>> updates;
      updates.reserve(rep.sampled_clients.size());
      for (std::size_t k = 0; k < rep.sampled_clients.size(); ++k) {
        int cid = rep.sampled_clients[k];
        const ClientData& cd = task.clients[static_cast<std::size_t>(cid)];
        LocalUpdateResult lu = local_update(model, cd.train, hypers[k], hypers[k].step_size,
                                            rng::mix(seed, "local", t, cid));
        ClientFeedbackRec fb;
        fb.client_id = cid;
        fb.hypers = hypers[k];
        fb.n_train = cd.train.n();
        fb.diverged = lu.diverged;
        const Dataset& fb_split = cd.valid.n() > 0 ? cd.valid : cd.train;
        double fb_loss = ce_loss(lu.model, fb_split.X, fb_split.y);
        if (!std::isfinite(fb_loss) || fb_loss > kDivergenceCap) {
          fb_loss = kDivergenceCap;
          fb.diverged = true;
        }
        fb.valid_loss = fb_loss;
        rep.feedback.push_back(fb);
        updates.emplace_back(std::move(lu.model), cd.train.n());
      }
      if (algo == Algorithm::FedAvg) {
        model = fedavg_aggregate(updates);
      } else {
        auto [next, new_buffer] = fedopt_aggregate(buffer, model, updates, server);
        model = std::move(next);
        buffer = std::move(new_buffer);
      }
      if (!model.all_finite()) course_diverged = true;
    }
    if (param_hook) param_hook(t, model);

    if (!course_diverged) {
      rep.train = detail::pooled_metrics(model, task, &ClientData::train);
      rep.valid = detail::pooled_metrics(model, task, &ClientData::valid);
      rep.test = detail::pooled_metrics(model, task, &ClientData::test);
      bool capped = detail::cap_metrics(rep.train, last_train);
      capped = detail::cap_metrics(rep.valid, last_valid) || capped;
      capped = detail::cap_metrics(rep.test, last_test) || capped;
      if (capped) course_diverged = true;
      last_train = rep.train;
      last_valid = rep.valid;
      last_test = rep.test;
    } else {
      rep.train = last_train;
      rep.valid = last_valid;
      rep.test = last_test;
      rep.train.loss = kDivergenceCap;
      rep.valid.loss = kDivergenceCap;
      rep.test.loss = kDivergenceCap;
      for (auto& fb : rep.feedback) {
        fb.valid_loss = kDivergenceCap;
        fb.diverged = true;
      }
    }
    rep.diverged = course_diverged;
    if (hook) hook(rep);
    result.rounds.push_back(std::move(rep));
  }
  result.final = result.rounds.back();
  result.diverged = course_diverged;
  return result;
}

// Standard course: one hyperparameter configuration shared by every client.
inline CourseResult run_course(const FederatedDataset& task, Algorithm algo,
                               const SearchSpace& space, const HyperConfig& lambda,
                               const FidelityVector& b, std::uint64_t seed,
                               const ParamHook& param_hook = nullptr) {
  space.validate_config(lambda);
  if (b.rounds != 0) space.validate_fidelity(b);  // 0 rounds: evaluate the initial model
  ClientHypers h = client_hypers_from(space, lambda);
  ServerHypers s = server_hypers_from(space, lambda);
  Architecture arch = architecture_from(space, lambda);
  AssignFn constant = [h](int, const std::vector<int>& sampled) {
    return std::vector<ClientHypers>(sampled.size(), h);
  };
  return run_course_hooked(task, arch, algo, s, b, seed, constant, nullptr, param_hook);
}

}  // namespace fedhpo
