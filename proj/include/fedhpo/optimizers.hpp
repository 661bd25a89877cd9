#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "backends.hpp"

namespace fedhpo {

struct Trial {
  HyperConfig config;
  FidelityVector fidelity;
  EvalResult result;
  double sim_time_at_completion = 0.0;
};

enum class OptKind { RS, DE, BO_KDE, SHA, HB, BOHB, DEHB };

inline std::string to_string(OptKind k) {
  switch (k) {
    case OptKind::RS: return "rs";
    case OptKind::DE: return "de";
    case OptKind::BO_KDE: return "bo_kde";
    case OptKind::SHA: return "sha";
    case OptKind::HB: return "hb";
    case OptKind::BOHB: return "bohb";
    default: return "dehb";
  }
}

inline OptKind opt_kind_from_string(const std::string& s) {
  if (s == "rs") return OptKind::RS;
  if (s == "de") return OptKind::DE;
  if (s == "bo_kde") return OptKind::BO_KDE;
  if (s == "sha") return OptKind::SHA;
  if (s == "hb") return OptKind::HB;
  if (s == "bohb") return OptKind::BOHB;
  if (s == "dehb") return OptKind::DEHB;
  throw std::invalid_argument("unknown optimizer kind '" + s +
                              "' (valid: rs, de, bo_kde, sha, hb, bohb, dehb)");
}

struct OptimizerParams {
  double sample_rate = 1.0;
  int rounds = 0;  // full-fidelity round count; 0 means the space maximum

  // de / dehb
  int population = 20;
  double f = 0.5;
  double cr = 0.5;

  // bo_kde / bohb
  double gamma = 0.15;
  int n_samples = 64;
  double random_fraction = 1.0 / 3.0;
  double bandwidth_factor = 3.0;
  double min_bandwidth = 1e-3;
  int min_points = 0;  // 0 means dimension count + 2

  // sha
  int n0 = 27;
  int stages = 3;
  int total_rounds = 0;  // 0 means the space maximum
  std::vector<std::pair<int, int>> schedule;  // explicit (n_i, r_i), overrides the solver

  // sha / hb / bohb / dehb
  int eta = 3;
  int max_rounds = 0;  // hb bracket ceiling; 0 means the space maximum

  void validate() const {
    if (!(sample_rate > 0.0 && sample_rate <= 1.0))
      throw std::invalid_argument("optimizer: sample_rate must be in (0, 1]");
    if (rounds < 0 || total_rounds < 0 || max_rounds < 0)
      throw std::invalid_argument("optimizer: round knobs must be >= 0");
    if (population < 4) throw std::invalid_argument("optimizer: population must be >= 4");
    if (!(f > 0.0) || !(cr >= 0.0 && cr <= 1.0))
      throw std::invalid_argument("optimizer: de knobs out of range");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("optimizer: gamma must be in (0, 1)");
    if (n_samples < 1 || min_points < 0)
      throw std::invalid_argument("optimizer: kde knobs out of range");
    if (!(random_fraction >= 0.0 && random_fraction <= 1.0))
      throw std::invalid_argument("optimizer: random_fraction must be in [0, 1]");
    if (!(bandwidth_factor > 0.0) || !(min_bandwidth > 0.0))
      throw std::invalid_argument("optimizer: bandwidth knobs must be positive");
    if (n0 < 1 || stages < 1 || eta < 2)
      throw std::invalid_argument("optimizer: sha knobs out of range");
    for (const auto& [n, r] : schedule)
      if (n < 1 || r < 1) throw std::invalid_argument("optimizer: bad explicit schedule entry");
  }
};

struct OptimizerSpec {
  OptKind kind = OptKind::RS;
  OptimizerParams params;
  std::uint64_t seed = 0;
};

inline OptimizerSpec optimizer_spec_from_json(const nlohmann::json& j) {
  OptimizerSpec s;
  s.kind = opt_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  OptimizerParams& p = s.params;
  if (j.contains("sample_rate")) p.sample_rate = j.at("sample_rate").get<double>();
  if (j.contains("rounds")) p.rounds = j.at("rounds").get<int>();
  if (j.contains("population")) p.population = j.at("population").get<int>();
  if (j.contains("f")) p.f = j.at("f").get<double>();
  if (j.contains("cr")) p.cr = j.at("cr").get<double>();
  if (j.contains("gamma")) p.gamma = j.at("gamma").get<double>();
  if (j.contains("n_samples")) p.n_samples = j.at("n_samples").get<int>();
  if (j.contains("random_fraction")) p.random_fraction = j.at("random_fraction").get<double>();
  if (j.contains("bandwidth_factor"))
    p.bandwidth_factor = j.at("bandwidth_factor").get<double>();
  if (j.contains("min_bandwidth")) p.min_bandwidth = j.at("min_bandwidth").get<double>();
  if (j.contains("min_points")) p.min_points = j.at("min_points").get<int>();
  if (j.contains("n0")) p.n0 = j.at("n0").get<int>();
  if (j.contains("stages")) p.stages = j.at("stages").get<int>();
  if (j.contains("total_rounds")) p.total_rounds = j.at("total_rounds").get<int>();
  if (j.contains("eta")) p.eta = j.at("eta").get<int>();
  if (j.contains("max_rounds")) p.max_rounds = j.at("max_rounds").get<int>();
  if (j.contains("schedule"))
    for (const auto& e : j.at("schedule"))
      p.schedule.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  p.validate();
  return s;
}

// --- Unit-cube codec ----------------------------------------------------------

// All samplers work on [0,1]^d: ranged axes map affinely (log axes in log10
// domain), integer axes round on decode, categorical axes use index-centered
// cells of width 1/K.
struct UnitCodec {
  const SearchSpace* space = nullptr;

  explicit UnitCodec(const SearchSpace& s) : space(&s) {}

  std::size_t dims() const { return space->dimensions.size(); }

  Eigen::VectorXd random(rng::Engine& eng) const {
    Eigen::VectorXd u(static_cast<int>(dims()));
    for (int i = 0; i < u.size(); ++i) u[i] = eng.u01();
    return u;
  }

  // Latin hypercube: per dimension, one point in each of `count` strata.
  std::vector<Eigen::VectorXd> lhs(int count, rng::Engine& eng) const {
    std::vector<Eigen::VectorXd> out(static_cast<std::size_t>(count),
                                     Eigen::VectorXd(static_cast<int>(dims())));
    for (std::size_t d = 0; d < dims(); ++d) {
      std::vector<int> strata(static_cast<std::size_t>(count));
      std::iota(strata.begin(), strata.end(), 0);
      eng.shuffle(strata);
      for (int i = 0; i < count; ++i)
        out[static_cast<std::size_t>(i)][static_cast<int>(d)] =
            (strata[static_cast<std::size_t>(i)] + eng.u01()) / static_cast<double>(count);
    }
    return out;
  }

  HyperConfig decode(const Eigen::VectorXd& u) const {
    HyperConfig cfg;
    for (std::size_t i = 0; i < dims(); ++i) {
      const Dimension& d = space->dimensions[i];
      double t = std::clamp(u[static_cast<int>(i)], 0.0, 1.0);
      double v = 0.0;
      if (d.kind == DimKind::Categorical) {
        int k = std::min(static_cast<int>(d.values.size()) - 1,
                         static_cast<int>(t * static_cast<double>(d.values.size())));
        v = d.values[static_cast<std::size_t>(k)];
      } else if (d.log_scale) {
        double lo = std::log10(d.lo), hi = std::log10(d.hi);
        v = std::pow(10.0, lo + t * (hi - lo));
        if (d.kind == DimKind::Integer) v = std::floor(v + 0.5);
        v = std::clamp(v, d.lo, d.hi);
      } else {
        v = d.lo + t * (d.hi - d.lo);
        if (d.kind == DimKind::Integer) v = std::floor(v + 0.5);
        v = std::clamp(v, d.lo, d.hi);
      }
      cfg.values.push_back(v);
    }
    return cfg;
  }

  Eigen::VectorXd encode(const HyperConfig& cfg) const {
    Eigen::VectorXd u(static_cast<int>(dims()));
    for (std::size_t i = 0; i < dims(); ++i) {
      const Dimension& d = space->dimensions[i];
      double v = cfg.values[i];
      if (d.kind == DimKind::Categorical) {
        int best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < d.values.size(); ++k)
          if (std::abs(d.values[k] - v) < best_dist) {
            best_dist = std::abs(d.values[k] - v);
            best = static_cast<int>(k);
          }
        u[static_cast<int>(i)] =
            (best + 0.5) / static_cast<double>(d.values.size());
      } else if (d.log_scale) {
        double lo = std::log10(d.lo), hi = std::log10(d.hi);
        u[static_cast<int>(i)] = (std::log10(v) - lo) / (hi - lo);
      } else {
        u[static_cast<int>(i)] = (v - d.lo) / (d.hi - d.lo);
      }
    }
    return u;
  }
};

// --- SHA schedule solver -------------------------------------------------------

// Two closed forms cover the documented schedules: geometric round growth
// (r_i = r0 * eta^i) and a flat base with one extra round for middle stages
// plus whatever the remainder affords for the last. The candidate spending
// more of the budget wins; ties go to the longer final stage.
inline std::vector<std::pair<int, int>> sha_schedule(int n0, int eta, int stages,
                                                     int total_rounds) {
  if (n0 < 1 || eta < 2 || stages < 1 || total_rounds < 1)
    throw std::invalid_argument("sha_schedule: bad arguments");
  long need = 1;
  for (int i = 0; i < stages - 1; ++i) need *= eta;
  if (n0 < need)
    throw std::invalid_argument("sha_schedule: n0 must be at least eta^(stages-1)");

  std::vector<int> counts;
  long div = 1;
  for (int i = 0; i < stages; ++i) {
    counts.push_back(static_cast<int>(n0 / div));
    div *= eta;
  }

  auto cost_of = [&](const std::vector<int>& rounds) {
    long c = 0;
    for (int i = 0; i < stages; ++i) c += static_cast<long>(counts[i]) * rounds[i];
    return c;
  };

  // Geometric: largest r0 with sum(n_i * r0 * eta^i) <= total.
  long weight = 0;
  long pw = 1;
  for (int i = 0; i < stages; ++i) {
    weight += counts[static_cast<std::size_t>(i)] * pw;
    pw *= eta;
  }
  std::vector<int> geo;
  long geo_cost = -1;
  int r0 = static_cast<int>(total_rounds / weight);
  if (r0 >= 1) {
    long m = 1;
    for (int i = 0; i < stages; ++i) {
      geo.push_back(static_cast<int>(r0 * m));
      m *= eta;
    }
    geo_cost = cost_of(geo);
  }

  // Flat base, +1 for middle stages, remainder to the last stage.
  long count_sum = 0;
  for (int c : counts) count_sum += c;
  std::vector<int> flat;
  long flat_cost = -1;
  int base = static_cast<int>(total_rounds / count_sum);
  if (base >= 1) {
    flat.assign(static_cast<std::size_t>(stages), base);
    for (int i = 1; i + 1 < stages; ++i) flat[static_cast<std::size_t>(i)] = base + 1;
    if (stages > 1) {
      long spent = 0;
      for (int i = 0; i + 1 < stages; ++i)
        spent += static_cast<long>(counts[static_cast<std::size_t>(i)]) *
                 flat[static_cast<std::size_t>(i)];
      long last = (total_rounds - spent) / counts[static_cast<std::size_t>(stages - 1)];
      flat[static_cast<std::size_t>(stages - 1)] = static_cast<int>(last);
    } else {
      flat[0] = static_cast<int>(total_rounds / counts[0]);
    }
    bool ok = flat.front() >= 1;
    for (int i = 1; i < stages; ++i)
      if (flat[static_cast<std::size_t>(i)] < flat[static_cast<std::size_t>(i - 1)]) ok = false;
    if (ok) flat_cost = cost_of(flat);
  }

  const std::vector<int>* pick = nullptr;
  if (geo_cost < 0 && flat_cost < 0)
    throw std::invalid_argument("sha_schedule: infeasible for the given round budget");
  if (flat_cost > geo_cost) {
    pick = &flat;
  } else if (geo_cost > flat_cost) {
    pick = &geo;
  } else {
    pick = geo.back() >= flat.back() ? &geo : &flat;
  }

  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < stages; ++i)
    out.emplace_back(counts[static_cast<std::size_t>(i)], (*pick)[static_cast<std::size_t>(i)]);
  return out;
}

// --- Run machinery -------------------------------------------------------------

namespace detail {

struct OptRun {
  BenchmarkHandle& h;
  const OptimizerSpec& spec;
  UnitCodec codec;
  std::vector<Trial> trials;
  // Pluggable so the policy-gradient tuner can route evaluations through its
  // own course loop while keeping the wrapper and pricing untouched.
  std::function<EvalResult(BenchmarkHandle&, const HyperConfig&, const FidelityVector&,
                           std::uint64_t)>
      eval_fn;

  OptRun(BenchmarkHandle& handle, const OptimizerSpec& s) : h(handle), spec(s), codec(h.space) {}

  int full_rounds() const {
    return spec.params.rounds > 0 ? spec.params.rounds : h.space.fidelity.round_max;
  }

  HyperConfig materialize(const Eigen::VectorXd& u) const {
    HyperConfig cfg = codec.decode(u);
    if (h.mode == Mode::Tabular) cfg = nearest_grid(h.space, cfg);
    return cfg;
  }

  // One priced evaluation. Affordability is judged on expected per-round
  // cost; a rejection ends the whole run.
  bool try_eval(const HyperConfig& cfg, const FidelityVector& b, EvalResult* out = nullptr) {
    SystemModelConfig expected = h.sys;
    expected.sampled_stragglers = false;
    BenchmarkHandle probe = h;  // cheap: shared_ptr members
    probe.sys = expected;
    double per_round = evaluation_cost(probe, cfg, FidelityVector{1, b.sample_rate}, 0);
    if (h.ledger.affordable_rounds(per_round) < b.rounds) return false;
    std::uint64_t eval_seed = rng::mix(spec.seed, "trial", trials.size());
    EvalResult r = eval_fn ? eval_fn(h, cfg, b, eval_seed) : evaluate(h, cfg, b, eval_seed);
    trials.push_back(Trial{cfg, b, r, h.ledger.spent()});
    if (out) *out = r;
    return true;
  }
};

// --- TPE-style proposal model ---------------------------------------------------

struct KdeSampler {
  const SearchSpace* space;
  const OptimizerParams* p;
  std::vector<Eigen::VectorXd> units;
  std::vector<double> losses;

  KdeSampler(const SearchSpace& s, const OptimizerParams& params) : space(&s), p(&params) {}

  void observe(const Eigen::VectorXd& u, double loss) {
    units.push_back(u);
    losses.push_back(loss);
  }

  int min_points() const {
    return p->min_points > 0 ? p->min_points
                             : static_cast<int>(space->dimensions.size()) + 2;
  }

  bool ready() const {
    if (static_cast<int>(units.size()) < min_points()) return false;
    double lo = losses.front(), hi = losses.front();
    for (double l : losses) {
      lo = std::min(lo, l);
      hi = std::max(hi, l);
    }
    return hi > lo;  // all-equal losses carry no ranking signal
  }

  struct DimModel {
    bool categorical = false;
    std::vector<double> points;      // unit coordinates of the set
    double bandwidth = 1e-3;
    std::vector<double> cat_prob;    // smoothed frequencies
  };

  DimModel dim_model(const std::vector<std::size_t>& set, std::size_t d) const {
    const Dimension& dim = space->dimensions[d];
    DimModel m;
    if (dim.kind == DimKind::Categorical) {
      m.categorical = true;
      std::size_t k_count = dim.values.size();
      m.cat_prob.assign(k_count, 1.0);  // +1 pseudo-count
      for (std::size_t i : set) {
        int k = std::min(static_cast<int>(k_count) - 1,
                         static_cast<int>(units[i][static_cast<int>(d)] *
                                          static_cast<double>(k_count)));
        m.cat_prob[static_cast<std::size_t>(k)] += 1.0;
      }
      double total = static_cast<double>(set.size()) + static_cast<double>(k_count);
      for (double& q : m.cat_prob) q /= total;
      return m;
    }
    for (std::size_t i : set) m.points.push_back(units[i][static_cast<int>(d)]);
    double mean = 0.0;
    for (double x : m.points) mean += x;
    mean /= static_cast<double>(m.points.size());
    double var = 0.0;
    for (double x : m.points) var += (x - mean) * (x - mean);
    double sd = m.points.size() > 1
                    ? std::sqrt(var / static_cast<double>(m.points.size() - 1))
                    : 0.0;
    // Scott's rule in the unit domain, widened and floored per config.
    double n = static_cast<double>(m.points.size());
    double dims = static_cast<double>(space->dimensions.size());
    m.bandwidth = std::max(p->min_bandwidth,
                           p->bandwidth_factor * sd * std::pow(n, -1.0 / (dims + 4.0)));
    return m;
  }

  static double kde_density(const DimModel& m, double x) {
    double acc = 0.0;
    for (double c : m.points) {
      double z = (x - c) / m.bandwidth;
      acc += std::exp(-0.5 * z * z) / (m.bandwidth * std::sqrt(2.0 * M_PI));
    }
    return acc / static_cast<double>(m.points.size());
  }

  double density(const std::vector<DimModel>& models, const Eigen::VectorXd& u) const {
    double prod = 1.0;
    for (std::size_t d = 0; d < models.size(); ++d) {
      const DimModel& m = models[d];
      if (m.categorical) {
        int k = std::min(static_cast<int>(m.cat_prob.size()) - 1,
                         static_cast<int>(u[static_cast<int>(d)] *
                                          static_cast<double>(m.cat_prob.size())));
        prod *= m.cat_prob[static_cast<std::size_t>(k)];
      } else {
        prod *= kde_density(m, u[static_cast<int>(d)]);
      }
    }
    return prod;
  }

  // Argmax of good/bad density ratio over n_samples draws from the good
  // model; falls back to a uniform draw while unready or by random_fraction.
  Eigen::VectorXd propose(const UnitCodec& codec, rng::Engine& eng) const {
    if (!ready() || eng.u01() < p->random_fraction) return codec.random(eng);

    std::vector<std::size_t> order(units.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
    std::size_t n_good = std::max<std::size_t>(
        1, static_cast<std::size_t>(p->gamma * static_cast<double>(units.size())));
    n_good = std::min(n_good, units.size() - 1);
    std::vector<std::size_t> good(order.begin(), order.begin() + static_cast<long>(n_good));
    std::vector<std::size_t> bad(order.begin() + static_cast<long>(n_good), order.end());

    std::size_t dims = space->dimensions.size();
    std::vector<DimModel> good_m, bad_m;
    for (std::size_t d = 0; d < dims; ++d) {
      good_m.push_back(dim_model(good, d));
      bad_m.push_back(dim_model(bad, d));
    }

    Eigen::VectorXd best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < p->n_samples; ++s) {
      std::size_t pick = good[eng.below(good.size())];
      Eigen::VectorXd cand(static_cast<int>(dims));
      for (std::size_t d = 0; d < dims; ++d) {
        const DimModel& m = good_m[d];
        if (m.categorical) {
          double r = eng.u01(), acc = 0.0;
          std::size_t k = m.cat_prob.size() - 1;
          for (std::size_t q = 0; q < m.cat_prob.size(); ++q) {
            acc += m.cat_prob[q];
            if (r < acc) {
              k = q;
              break;
            }
          }
          cand[static_cast<int>(d)] =
              (static_cast<double>(k) + 0.5) / static_cast<double>(m.cat_prob.size());
        } else {
          double x = units[pick][static_cast<int>(d)] + m.bandwidth * eng.normal();
          cand[static_cast<int>(d)] = std::clamp(x, 0.0, 1.0);
        }
      }
      double score = density(good_m, cand) / std::max(density(bad_m, cand), 1e-32);
      if (score > best_score) {
        best_score = score;
        best = cand;
      }
    }
    return best;
  }
};

// --- Optimizer loops ------------------------------------------------------------

inline void run_rs(OptRun& run) {
  rng::Engine eng(rng::mix(run.spec.seed, "rs"));
  FidelityVector b{run.full_rounds(), run.spec.params.sample_rate};
  for (;;) {
    HyperConfig cfg = run.materialize(run.codec.random(eng));
    if (!run.try_eval(cfg, b)) return;
  }
}

inline void run_de(OptRun& run) {
  const OptimizerParams& p = run.spec.params;
  FidelityVector b{run.full_rounds(), p.sample_rate};
  rng::Engine init_eng(rng::mix(run.spec.seed, "de_init"));
  rng::Engine eng(rng::mix(run.spec.seed, "de_evolve"));

  struct Member {
    Eigen::VectorXd u;
    double loss = 0.0;
  };
  std::vector<Member> pop;
  for (const auto& u : run.codec.lhs(p.population, init_eng)) {
    EvalResult r;
    if (!run.try_eval(run.materialize(u), b, &r)) return;
    pop.push_back({u, r.valid.loss});
  }

  std::size_t n = pop.size();
  for (;;) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t a, c, d;
      do a = eng.below(n); while (a == i);
      do c = eng.below(n); while (c == i || c == a);
      do d = eng.below(n); while (d == i || d == a || d == c);
      Eigen::VectorXd mutant = pop[a].u + p.f * (pop[c].u - pop[d].u);
      for (int k = 0; k < mutant.size(); ++k) mutant[k] = std::clamp(mutant[k], 0.0, 1.0);
      Eigen::VectorXd child = pop[i].u;
      std::size_t forced = eng.below(static_cast<std::uint64_t>(child.size()));
      for (int k = 0; k < child.size(); ++k)
        if (eng.u01() < p.cr || static_cast<std::size_t>(k) == forced) child[k] = mutant[k];
      EvalResult r;
      if (!run.try_eval(run.materialize(child), b, &r)) return;
      if (r.valid.loss <= pop[i].loss) {
        pop[i].u = child;
        pop[i].loss = r.valid.loss;
      }
    }
  }
}

inline void run_bo_kde(OptRun& run) {
  FidelityVector b{run.full_rounds(), run.spec.params.sample_rate};
  rng::Engine eng(rng::mix(run.spec.seed, "bo"));
  KdeSampler sampler(run.h.space, run.spec.params);
  for (;;) {
    Eigen::VectorXd u = sampler.propose(run.codec, eng);
    HyperConfig cfg = run.materialize(u);
    EvalResult r;
    if (!run.try_eval(cfg, b, &r)) return;
    sampler.observe(run.codec.encode(cfg), r.valid.loss);
  }
}

// One successive-halving pass over an explicit schedule. Stage-0 candidates
// come from `provider`; every evaluation is reported through `on_result`.
// Returns false when the budget rejected an evaluation.
inline bool run_sha_pass(
    OptRun& run, const std::vector<std::pair<int, int>>& schedule, double sample_rate,
    rng::Engine& eng,
    const std::function<Eigen::VectorXd(int, rng::Engine&)>& provider,
    const std::function<void(int, int, const Eigen::VectorXd&, double)>& on_result) {
  struct Entry {
    Eigen::VectorXd u;
    HyperConfig cfg;
    double loss = 0.0;
    std::size_t order = 0;
  };
  std::vector<Entry> alive;
  for (int j = 0; j < schedule[0].first; ++j) {
    Entry e;
    e.u = provider(j, eng);
    e.cfg = run.materialize(e.u);
    e.order = static_cast<std::size_t>(j);
    alive.push_back(std::move(e));
  }

  for (std::size_t s = 0; s < schedule.size(); ++s) {
    FidelityVector b{schedule[s].second, sample_rate};
    for (std::size_t j = 0; j < alive.size(); ++j) {
      EvalResult r;
      if (!run.try_eval(alive[j].cfg, b, &r)) return false;
      alive[j].loss = r.valid.loss;
      if (on_result) on_result(static_cast<int>(s), static_cast<int>(j), alive[j].u, r.valid.loss);
    }
    if (s + 1 == schedule.size()) break;
    std::stable_sort(alive.begin(), alive.end(), [](const Entry& a, const Entry& b) {
      if (a.loss != b.loss) return a.loss < b.loss;
      return a.order < b.order;  // ties keep the earlier trial
    });
    alive.resize(static_cast<std::size_t>(schedule[s + 1].first));
  }
  return true;
}

inline std::vector<std::pair<int, int>> resolved_sha_schedule(const OptRun& run) {
  const OptimizerParams& p = run.spec.params;
  if (!p.schedule.empty()) return p.schedule;
  int total = p.total_rounds > 0 ? p.total_rounds : run.h.space.fidelity.round_max;
  return sha_schedule(p.n0, p.eta, p.stages, total);
}

inline void run_sha(OptRun& run) {
  auto schedule = resolved_sha_schedule(run);
  for (std::uint64_t pass = 0;; ++pass) {
    rng::Engine eng(rng::mix(run.spec.seed, "sha", pass));
    auto provider = [&](int, rng::Engine& e) { return run.codec.random(e); };
    if (!run_sha_pass(run, schedule, run.spec.params.sample_rate, eng, provider, nullptr))
      return;
  }
}

// Standard Hyperband bracket ladder: bracket s runs eta^s configs starting
// at R / eta^s rounds. Brackets cycle until the budget ends; the bracket
// ordinal seeds the pass stream so a single-bracket ladder replays sha.
struct HbBracket {
  std::vector<std::pair<int, int>> schedule;
};

inline std::vector<HbBracket> hb_brackets(int max_rounds, int eta) {
  int s_max = 0;
  long pw = eta;
  while (pw <= max_rounds) {
    ++s_max;
    pw *= eta;
  }
  std::vector<HbBracket> out;
  for (int s = s_max; s >= 0; --s) {
    double ratio = static_cast<double>(s_max + 1) / static_cast<double>(s + 1);
    int n0 = static_cast<int>(std::ceil(ratio * std::pow(eta, s)));
    HbBracket br;
    long div = 1;
    for (int i = 0; i <= s; ++i) {
      int n_i = static_cast<int>(n0 / div);
      int r_i = std::max(1, static_cast<int>(std::llround(
                                max_rounds * std::pow(eta, i - s))));
      br.schedule.emplace_back(n_i, r_i);
      div *= eta;
    }
    out.push_back(std::move(br));
  }
  return out;
}

inline void run_hb(OptRun& run, OptKind flavor) {
  const OptimizerParams& p = run.spec.params;
  int max_rounds = p.max_rounds > 0 ? p.max_rounds : run.h.space.fidelity.round_max;
  auto brackets = hb_brackets(max_rounds, p.eta);

  // bohb keeps one density model per round budget and proposes from the
  // deepest one that has enough spread to rank points.
  std::map<int, KdeSampler> samplers;
  auto sampler_at = [&](int budget) -> KdeSampler& {
    auto it = samplers.find(budget);
    if (it == samplers.end())
      it = samplers.emplace(budget, KdeSampler(run.h.space, p)).first;
    return it->second;
  };

  struct Member {
    Eigen::VectorXd u;
    double loss = 0.0;
  };
  std::map<int, std::vector<Member>> pops;  // dehb, keyed by round budget

  for (std::uint64_t k = 0;; ++k) {
    const HbBracket& br = brackets[static_cast<std::size_t>(k % brackets.size())];
    rng::Engine eng(rng::mix(run.spec.seed, "sha", k));

    std::vector<int> pending(static_cast<std::size_t>(br.schedule[0].first), -1);
    auto provider = [&](int j, rng::Engine& e) -> Eigen::VectorXd {
      if (flavor == OptKind::BOHB) {
        for (auto it = samplers.rbegin(); it != samplers.rend(); ++it)
          if (it->second.ready()) return it->second.propose(run.codec, e);
        return run.codec.random(e);
      }
      if (flavor == OptKind::DEHB) {
        auto& pop = pops[br.schedule[0].second];
        if (pop.size() >= 4) {
          std::size_t t = static_cast<std::size_t>(j) % pop.size();
          std::size_t a, c, d;
          do a = e.below(pop.size()); while (a == t);
          do c = e.below(pop.size()); while (c == t || c == a);
          do d = e.below(pop.size()); while (d == t || d == a || d == c);
          Eigen::VectorXd mutant = pop[a].u + p.f * (pop[c].u - pop[d].u);
          for (int q = 0; q < mutant.size(); ++q) mutant[q] = std::clamp(mutant[q], 0.0, 1.0);
          Eigen::VectorXd child = pop[t].u;
          std::size_t forced = e.below(static_cast<std::uint64_t>(child.size()));
          for (int q = 0; q < child.size(); ++q)
            if (e.u01() < p.cr || static_cast<std::size_t>(q) == forced) child[q] = mutant[q];
          pending[static_cast<std::size_t>(j)] = static_cast<int>(t);
          return child;
        }
        return run.codec.random(e);
      }
      return run.codec.random(e);
    };

    auto on_result = [&](int stage, int j, const Eigen::VectorXd& u, double loss) {
      int budget = br.schedule[static_cast<std::size_t>(stage)].second;
      if (flavor == OptKind::BOHB) {
        sampler_at(budget).observe(u, loss);
      } else if (flavor == OptKind::DEHB) {
        auto& pop = pops[budget];
        int t = stage == 0 ? pending[static_cast<std::size_t>(j)] : -1;
        if (t >= 0) {
          if (loss <= pop[static_cast<std::size_t>(t)].loss)
            pop[static_cast<std::size_t>(t)] = {u, loss};
        } else if (static_cast<int>(pop.size()) < p.population) {
          pop.push_back({u, loss});
        } else {
          std::size_t worst = 0;
          for (std::size_t q = 1; q < pop.size(); ++q)
            if (pop[q].loss > pop[worst].loss) worst = q;
          if (loss < pop[worst].loss) pop[worst] = {u, loss};
        }
      }
    };

    std::function<void(int, int, const Eigen::VectorXd&, double)> hook;
    if (flavor != OptKind::HB) hook = on_result;
    if (!run_sha_pass(run, br.schedule, p.sample_rate, eng, provider, hook)) return;
  }
}

}  // namespace detail

inline std::vector<Trial> run_optimizer(const OptimizerSpec& spec, BenchmarkHandle& h,
                                        double budget_seconds) {
  if (!(budget_seconds > 0.0))
    throw std::invalid_argument("run_optimizer: budget must be positive");
  spec.params.validate();
  h.validate();
  h.ledger = BudgetLedger(budget_seconds);

  detail::OptRun run(h, spec);
  switch (spec.kind) {
    case OptKind::RS: detail::run_rs(run); break;
    case OptKind::DE: detail::run_de(run); break;
    case OptKind::BO_KDE: detail::run_bo_kde(run); break;
    case OptKind::SHA: detail::run_sha(run); break;
    case OptKind::HB:
    case OptKind::BOHB:
    case OptKind::DEHB: detail::run_hb(run, spec.kind); break;
  }
  return std::move(run.trials);
}

}  // namespace fedhpo
