#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "model.hpp"
#include "rng.hpp"
#include "space.hpp"

namespace fedhpo {

// Round-time model. Bandwidths in MB/s, payloads in MB, compute in seconds.
// c is the mean of the per-client Exp-distributed compute time.
struct SystemModelParams {
  double b_up_server = 0.25;
  double b_down_client = 0.75;
  double b_up_client = 0.25;
  double s_down = 0.0;
  double s_up = 0.0;
  double c = 1.0;
  double t_server = 0.01;
  bool sampled_stragglers = false;

  void validate() const {
    if (!(b_up_server > 0.0) || !(b_down_client > 0.0) || !(b_up_client > 0.0))
      throw std::invalid_argument("system model: bandwidths must be positive");
    if (!(s_down > 0.0) || !(s_up > 0.0))
      throw std::invalid_argument("system model: payload sizes must be positive");
    if (c < 0.0) throw std::invalid_argument("system model: c must be >= 0");
    if (t_server < 0.0) throw std::invalid_argument("system model: t_server must be >= 0");
  }
};

// Config-file form; payload sizes are optional and default to the model's.
struct SystemModelConfig {
  double b_up_server_mbps = 0.25;
  double b_down_client_mbps = 0.75;
  double b_up_client_mbps = 0.25;
  std::optional<double> s_down_mb;
  std::optional<double> s_up_mb;
  double c_seconds = 1.0;
  double t_server_seconds = 0.01;
  bool sampled_stragglers = false;
};

inline SystemModelConfig system_config_from_json(const nlohmann::json& j) {
  SystemModelConfig c;
  if (j.contains("b_up_server_mbps")) c.b_up_server_mbps = j.at("b_up_server_mbps").get<double>();
  if (j.contains("b_down_client_mbps"))
    c.b_down_client_mbps = j.at("b_down_client_mbps").get<double>();
  if (j.contains("b_up_client_mbps")) c.b_up_client_mbps = j.at("b_up_client_mbps").get<double>();
  if (j.contains("s_down_mb")) c.s_down_mb = j.at("s_down_mb").get<double>();
  if (j.contains("s_up_mb")) c.s_up_mb = j.at("s_up_mb").get<double>();
  if (j.contains("c_seconds")) c.c_seconds = j.at("c_seconds").get<double>();
  if (j.contains("t_server_seconds")) c.t_server_seconds = j.at("t_server_seconds").get<double>();
  if (j.contains("sampled_stragglers"))
    c.sampled_stragglers = j.at("sampled_stragglers").get<bool>();
  return c;
}

inline nlohmann::json to_json(const SystemModelConfig& c) {
  nlohmann::json j;
  j["b_up_server_mbps"] = c.b_up_server_mbps;
  j["b_down_client_mbps"] = c.b_down_client_mbps;
  j["b_up_client_mbps"] = c.b_up_client_mbps;
  if (c.s_down_mb) j["s_down_mb"] = *c.s_down_mb;
  if (c.s_up_mb) j["s_up_mb"] = *c.s_up_mb;
  j["c_seconds"] = c.c_seconds;
  j["t_server_seconds"] = c.t_server_seconds;
  j["sampled_stragglers"] = c.sampled_stragglers;
  return j;
}

inline double payload_size(const ModelParams& m) {
  return static_cast<double>(m.n_params()) * 4.0 / (1024.0 * 1024.0);
}

// Fills the payload fields from the model when the config leaves them unset.
inline SystemModelParams resolve_system_params(const SystemModelConfig& cfg,
                                               double model_payload_mb) {
  SystemModelParams p;
  p.b_up_server = cfg.b_up_server_mbps;
  p.b_down_client = cfg.b_down_client_mbps;
  p.b_up_client = cfg.b_up_client_mbps;
  p.s_down = cfg.s_down_mb.value_or(model_payload_mb);
  p.s_up = cfg.s_up_mb.value_or(model_payload_mb);
  p.c = cfg.c_seconds;
  p.t_server = cfg.t_server_seconds;
  p.sampled_stragglers = cfg.sampled_stragglers;
  p.validate();
  return p;
}

// Expected max of n i.i.d. Exp with mean c: by memorylessness the running
// minimum leaves one straggler at a time, so the mean is c * (1/n + ... + 1).
// c = 0 is the degenerate no-compute case and costs nothing.
inline double expected_straggler_time(int n, double c) {
  if (n < 1) throw std::invalid_argument("expected_straggler_time: n >= 1");
  if (c < 0.0) throw std::invalid_argument("expected_straggler_time: c >= 0");
  double h = 0.0;
  for (int i = 1; i <= n; ++i) h += 1.0 / i;
  return c * h;
}

// One draw of the actual straggler time (max of n exponentials).
inline double sampled_straggler_time(int n, double c, rng::Engine& eng) {
  double worst = 0.0;
  for (int i = 0; i < n; ++i) worst = std::max(worst, eng.exponential(c));
  return worst;
}

// Eq.-style round cost: broadcast bottleneck, client upload, straggler
// compute, server compute.
inline double round_time(const SystemModelParams& p, int n_sampled) {
  if (n_sampled < 1) throw std::invalid_argument("round_time: n_sampled >= 1");
  double t_comm =
      std::max(n_sampled * p.s_down / p.b_up_server, p.s_down / p.b_down_client) +
      p.s_up / p.b_up_client;
  double t_comp = expected_straggler_time(n_sampled, p.c) + p.t_server;
  return t_comm + t_comp;
}

inline double sampled_round_time(const SystemModelParams& p, int n_sampled, rng::Engine& eng) {
  if (n_sampled < 1) throw std::invalid_argument("round_time: n_sampled >= 1");
  double t_comm =
      std::max(n_sampled * p.s_down / p.b_up_server, p.s_down / p.b_down_client) +
      p.s_up / p.b_up_client;
  return t_comm + sampled_straggler_time(n_sampled, p.c, eng) + p.t_server;
}

inline int sampled_client_count(double sample_rate, int n_clients) {
  int n = static_cast<int>(std::ceil(sample_rate * n_clients));
  return std::min(std::max(n, 1), n_clients);
}

inline double course_time(const SystemModelParams& p, int n_clients, const FidelityVector& b) {
  if (b.rounds == 0) return 0.0;
  return b.rounds * round_time(p, sampled_client_count(b.sample_rate, n_clients));
}

inline double sampled_course_time(const SystemModelParams& p, int n_clients,
                                  const FidelityVector& b, rng::Engine& eng) {
  int n = sampled_client_count(b.sample_rate, n_clients);
  double total = 0.0;
  for (int t = 0; t < b.rounds; ++t) total += sampled_round_time(p, n, eng);
  return total;
}

class BudgetExhausted : public std::runtime_error {
 public:
  explicit BudgetExhausted(const std::string& what) : std::runtime_error(what) {}
};

// Simulated-seconds budget. An evaluation may be truncated to the rounds the
// remaining budget affords; the last affordable round may run "in flight", so
// spent can exceed the limit by strictly less than one round's cost.
class BudgetLedger {
 public:
  explicit BudgetLedger(double limit) : limit_(limit) {
    if (!(limit > 0.0)) throw std::invalid_argument("budget limit must be positive");
  }

  double limit() const { return limit_; }
  double spent() const { return spent_; }
  double remaining() const { return limit_ - spent_; }
  bool exhausted() const { return spent_ >= limit_; }

  // How many rounds of the given cost fit before the budget runs out.
  // Zero when not even one full round is affordable.
  int affordable_rounds(double per_round_cost) const {
    if (!(per_round_cost > 0.0))
      throw std::invalid_argument("affordable_rounds: cost must be positive");
    double rem = remaining();
    if (rem < per_round_cost) return 0;
    double r = std::ceil(rem / per_round_cost);
    if (r >= static_cast<double>(std::numeric_limits<int>::max()))
      return std::numeric_limits<int>::max();
    return static_cast<int>(r);
  }

  void charge(double seconds) {
    if (seconds < 0.0) throw std::invalid_argument("charge: negative cost");
    spent_ += seconds;
  }

 private:
  double limit_;
  double spent_ = 0.0;
};

}  // namespace fedhpo
