#pragma once

// Statistics over optimizer runs: best-seen trajectories on a shared
// simulated-time axis, mean ranks with average-tie handling, exact sign
// tests, and ECDFs of normalized regret.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include <fedhpo/optimizers.hpp>

namespace fedhpo {

// Incumbent change points (time, loss) in completion order. Higher-fidelity
// results are preferred: a trial can only displace the incumbent when it ran
// at least as many rounds, so a cheap low-round result never wins over an
// established full-length one.
inline std::vector<std::pair<double, double>> best_seen_steps(const std::vector<Trial>& trials) {
  std::vector<std::size_t> order(trials.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return trials[a].sim_time_at_completion < trials[b].sim_time_at_completion;
  });

  std::vector<std::pair<double, double>> steps;
  double inc_loss = std::numeric_limits<double>::infinity();
  int inc_rounds = -1;
  for (std::size_t i : order) {
    const Trial& t = trials[i];
    double loss = t.result.valid.loss;
    bool take = inc_rounds < 0 || (t.fidelity.rounds >= inc_rounds && loss < inc_loss);
    if (!take) continue;
    inc_loss = loss;
    inc_rounds = t.fidelity.rounds;
    steps.emplace_back(t.sim_time_at_completion, inc_loss);
  }
  return steps;
}

// Final incumbent loss of a run; +infinity when nothing completed.
inline double final_best(const std::vector<Trial>& trials) {
  auto steps = best_seen_steps(trials);
  return steps.empty() ? std::numeric_limits<double>::infinity() : steps.back().second;
}

// The incumbent loss sampled at each grid time; +infinity before the first
// completion.
inline std::vector<double> best_seen(const std::vector<Trial>& trials,
                                     const std::vector<double>& t_grid) {
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (t_grid[i] < t_grid[i - 1])
      throw std::invalid_argument("best_seen: time grid must be sorted");
  auto steps = best_seen_steps(trials);
  std::vector<double> out(t_grid.size(), std::numeric_limits<double>::infinity());
  std::size_t k = 0;
  double cur = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    while (k < steps.size() && steps[k].first <= t_grid[i]) cur = steps[k++].second;
    out[i] = cur;
  }
  return out;
}

// Log-spaced shared axis from the first completion to the budget limit.
inline std::vector<double> time_grid(double t_first, double t_budget, int n = 512) {
  if (!(t_first > 0.0) || !(t_budget > 0.0))
    throw std::invalid_argument("time_grid: endpoints must be positive");
  if (n < 1) throw std::invalid_argument("time_grid: need at least one point");
  if (!(t_budget > t_first) || n == 1) return {t_budget};
  std::vector<double> g(static_cast<std::size_t>(n));
  double la = std::log(t_first), lb = std::log(t_budget);
  for (int i = 0; i < n; ++i)
    g[static_cast<std::size_t>(i)] = std::exp(la + (lb - la) * i / (n - 1));
  g.front() = t_first;
  g.back() = t_budget;
  return g;
}

// Ranks (1 = best) with ties receiving the average of the covered ranks.
inline std::vector<double> rank_with_ties(const std::vector<double>& values) {
  std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && !(values[order[i]] < values[order[j + 1]])) ++j;
    double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

// curves[o][c][t]: optimizer o, context c (one task and repetition), time t.
// Returns one mean-rank trajectory per optimizer, averaged over contexts.
inline std::vector<std::vector<double>> mean_rank(
    const std::vector<std::vector<std::vector<double>>>& curves) {
  if (curves.size() < 2) throw std::invalid_argument("mean_rank: need at least two optimizers");
  std::size_t n_ctx = curves.front().size();
  if (n_ctx == 0) throw std::invalid_argument("mean_rank: no curves");
  std::size_t n_t = curves.front().front().size();
  for (const auto& opt : curves) {
    if (opt.size() != n_ctx) throw std::invalid_argument("mean_rank: context count mismatch");
    for (const auto& c : opt)
      if (c.size() != n_t) throw std::invalid_argument("mean_rank: grid length mismatch");
  }

  std::vector<std::vector<double>> out(curves.size(), std::vector<double>(n_t, 0.0));
  std::vector<double> column(curves.size());
  for (std::size_t c = 0; c < n_ctx; ++c) {
    for (std::size_t t = 0; t < n_t; ++t) {
      for (std::size_t o = 0; o < curves.size(); ++o) column[o] = curves[o][c][t];
      std::vector<double> r = rank_with_ties(column);
      for (std::size_t o = 0; o < curves.size(); ++o) out[o][t] += r[o];
    }
  }
  for (auto& traj : out)
    for (double& v : traj) v /= static_cast<double>(n_ctx);
  return out;
}

// Exact one-sided binomial sign test: the probability of at least `wins`
// successes in wins+losses fair coin flips. Ties are discarded, as usual for
// the sign test. Binomial coefficients come from the Pascal recurrence and
// stay exact in doubles far beyond any study size used here.
inline double sign_test(int wins, int ties, int losses) {
  (void)ties;
  if (wins < 0 || ties < 0 || losses < 0)
    throw std::invalid_argument("sign_test: negative count");
  int n = wins + losses;
  if (n == 0) throw std::invalid_argument("sign_test: no untied comparisons");
  std::vector<double> coeff(static_cast<std::size_t>(n) + 1, 0.0);
  coeff[0] = 1.0;
  for (int i = 1; i <= n; ++i)
    for (int k = i; k >= 1; --k)
      coeff[static_cast<std::size_t>(k)] += coeff[static_cast<std::size_t>(k - 1)];
  double tail = 0.0;
  for (int k = wins; k <= n; ++k) tail += coeff[static_cast<std::size_t>(k)];
  return std::ldexp(tail, -n);
}

// Empirical CDF of normalized regret: values map to (v - min) / (max - min)
// and the sorted distinct regrets pair with their cumulative fractions.
inline std::vector<std::pair<double, double>> ecdf(const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("ecdf: need at least two values");
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (!(hi > lo)) throw std::invalid_argument("ecdf: all values identical");
  std::vector<double> r;
  r.reserve(values.size());
  for (double v : values) r.push_back((v - lo) / (hi - lo));
  std::sort(r.begin(), r.end());
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (i + 1 == r.size() || r[i + 1] != r[i])
      out.emplace_back(r[i], static_cast<double>(i + 1) / static_cast<double>(r.size()));
  return out;
}

}  // namespace fedhpo
