#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fedhpo {

enum class DimKind { Continuous, Integer, Categorical };
enum class Side { Client, Server };
enum class Family { LR, MLP };
enum class Algorithm { FedAvg, FedOpt };

inline std::string to_string(DimKind k) {
  switch (k) {
    case DimKind::Continuous: return "continuous";
    case DimKind::Integer: return "integer";
    default: return "categorical";
  }
}

inline std::string to_string(Side s) { return s == Side::Client ? "client" : "server"; }
inline std::string to_string(Family f) { return f == Family::LR ? "lr" : "mlp"; }
inline std::string to_string(Algorithm a) { return a == Algorithm::FedAvg ? "fedavg" : "fedopt"; }

inline Family family_from_string(const std::string& s) {
  if (s == "lr") return Family::LR;
  if (s == "mlp") return Family::MLP;
  throw std::invalid_argument("unknown model family '" + s + "' (expected lr or mlp)");
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "fedavg") return Algorithm::FedAvg;
  if (s == "fedopt") return Algorithm::FedOpt;
  throw std::invalid_argument("unknown FL algorithm '" + s + "' (expected fedavg or fedopt)");
}

// One hyperparameter axis. Ranged kinds carry [lo, hi] plus a grid bin count;
// categorical kinds carry an explicit value list (bins == list length).
struct Dimension {
  std::string name;
  DimKind kind = DimKind::Continuous;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> values;
  bool log_scale = false;
  int grid_bins = 0;
  Side side = Side::Client;

  void validate() const {
    if (name.empty()) throw std::invalid_argument("dimension has empty name");
    if (kind == DimKind::Categorical) {
      if (values.empty()) throw std::invalid_argument(name + ": categorical needs a value list");
      if (grid_bins != static_cast<int>(values.size()))
        throw std::invalid_argument(name + ": categorical bins must equal the value list length");
      return;
    }
    if (!(lo < hi)) throw std::invalid_argument(name + ": requires lo < hi");
    if (log_scale && lo <= 0.0) throw std::invalid_argument(name + ": log scale requires lo > 0");
    if (grid_bins < 2) throw std::invalid_argument(name + ": ranged kinds require bins >= 2");
    if (kind == DimKind::Integer &&
        (std::floor(lo) != lo || std::floor(hi) != hi))
      throw std::invalid_argument(name + ": integer bounds must be integral");
  }

  // Grid points in ascending order (categorical: list order). Log-scaled axes
  // space uniformly in base-10 logs, endpoints inclusive. Integer axes round
  // half-up and drop duplicates without reordering.
  std::vector<double> grid_values() const {
    if (kind == DimKind::Categorical) return values;
    std::vector<double> pts;
    pts.reserve(grid_bins);
    double a = log_scale ? std::log10(lo) : lo;
    double b = log_scale ? std::log10(hi) : hi;
    for (int i = 0; i < grid_bins; ++i) {
      double t = (grid_bins == 1) ? 0.0 : static_cast<double>(i) / (grid_bins - 1);
      double v = a + (b - a) * t;
      if (log_scale) v = std::pow(10.0, v);
      if (kind == DimKind::Integer) v = std::floor(v + 0.5);
      pts.push_back(v);
    }
    if (kind == DimKind::Integer) {
      std::vector<double> dedup;
      for (double v : pts)
        if (dedup.empty() || dedup.back() != v) dedup.push_back(v);
      pts = std::move(dedup);
    }
    return pts;
  }

  bool contains(double v) const {
    if (kind == DimKind::Categorical)
      return std::find(values.begin(), values.end(), v) != values.end();
    if (v < lo || v > hi) return false;
    if (kind == DimKind::Integer && std::floor(v) != v) return false;
    return true;
  }

  // Nearest grid point; log axes measure distance in log10 domain, ties break
  // toward the smaller value.
  double nearest(double v) const {
    std::vector<double> pts = grid_values();
    double best = pts.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (double p : pts) {
      double d = log_scale ? std::fabs(std::log10(v) - std::log10(p)) : std::fabs(v - p);
      if (d < best_d || (d == best_d && p < best)) {
        best_d = d;
        best = p;
      }
    }
    return best;
  }
};

// Fidelity axes: communication rounds plus client sample rate.
struct FidelitySpec {
  int round_min = 1;
  int round_max = 500;
  double sample_rate_min = 0.2;
  double sample_rate_max = 1.0;
  int sample_rate_bins = 5;

  std::vector<double> sample_rate_grid() const {
    std::vector<double> g;
    for (int i = 0; i < sample_rate_bins; ++i) {
      double t = (sample_rate_bins == 1) ? 1.0 : static_cast<double>(i) / (sample_rate_bins - 1);
      g.push_back(sample_rate_min + (sample_rate_max - sample_rate_min) * t);
    }
    return g;
  }

  void validate() const {
    if (round_min < 1 || round_max < round_min)
      throw std::invalid_argument("fidelity: invalid round range");
    if (!(sample_rate_min > 0.0) || sample_rate_max > 1.0 || sample_rate_min > sample_rate_max)
      throw std::invalid_argument("fidelity: sample_rate range must lie in (0, 1]");
    if (sample_rate_bins < 1) throw std::invalid_argument("fidelity: sample_rate bins < 1");
  }
};

struct HyperConfig {
  std::vector<double> values;  // aligned with SearchSpace::dimensions
};

struct FidelityVector {
  int rounds = 1;
  double sample_rate = 1.0;
};

struct SearchSpace {
  std::vector<Dimension> dimensions;
  FidelitySpec fidelity;

  void validate() const {
    std::set<std::string> names;
    for (const auto& d : dimensions) {
      d.validate();
      if (!names.insert(d.name).second)
        throw std::invalid_argument("duplicate dimension name '" + d.name + "'");
    }
    fidelity.validate();
  }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < dimensions.size(); ++i)
      if (dimensions[i].name == name) return static_cast<int>(i);
    return -1;
  }

  bool has(const std::string& name) const { return index_of(name) >= 0; }

  std::size_t grid_size() const {
    std::size_t n = 1;
    for (const auto& d : dimensions) n *= d.grid_values().size();
    return n;
  }

  void validate_config(const HyperConfig& c) const {
    if (c.values.size() != dimensions.size())
      throw std::invalid_argument("config has wrong dimension count");
    for (std::size_t i = 0; i < dimensions.size(); ++i)
      if (!dimensions[i].contains(c.values[i]))
        throw std::invalid_argument("config value out of range for '" + dimensions[i].name + "'");
  }

  void validate_fidelity(const FidelityVector& b) const {
    if (b.rounds < fidelity.round_min || b.rounds > fidelity.round_max)
      throw std::invalid_argument("fidelity rounds outside the space's round range");
    if (b.sample_rate < fidelity.sample_rate_min || b.sample_rate > fidelity.sample_rate_max)
      throw std::invalid_argument("fidelity sample_rate outside the space's range");
  }
};

// Full Cartesian grid in lexicographic order: the first dimension varies
// slowest, the last fastest.
inline std::vector<HyperConfig> grid(const SearchSpace& space) {
  std::vector<std::vector<double>> axes;
  axes.reserve(space.dimensions.size());
  for (const auto& d : space.dimensions) axes.push_back(d.grid_values());
  std::vector<HyperConfig> out;
  std::size_t total = 1;
  for (const auto& a : axes) total *= a.size();
  out.reserve(total);
  std::vector<std::size_t> idx(axes.size(), 0);
  for (std::size_t k = 0; k < total; ++k) {
    HyperConfig c;
    c.values.resize(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) c.values[i] = axes[i][idx[i]];
    out.push_back(std::move(c));
    for (std::size_t i = axes.size(); i-- > 0;) {
      if (++idx[i] < axes[i].size()) break;
      idx[i] = 0;
    }
  }
  return out;
}

inline HyperConfig nearest_grid(const SearchSpace& space, const HyperConfig& c) {
  if (c.values.size() != space.dimensions.size())
    throw std::invalid_argument("config has wrong dimension count");
  HyperConfig out;
  out.values.resize(c.values.size());
  for (std::size_t i = 0; i < c.values.size(); ++i)
    out.values[i] = space.dimensions[i].nearest(c.values[i]);
  return out;
}

// The benchmark search spaces. Client-side axes in fixed order, then server
// axes when the FL algorithm has server-side hyperparameters.
inline SearchSpace builtin_space(Family family, Algorithm algo) {
  SearchSpace s;
  auto dim = [](std::string name, DimKind kind, double lo, double hi, bool log, int bins,
                Side side) {
    Dimension d;
    d.name = std::move(name);
    d.kind = kind;
    d.lo = lo;
    d.hi = hi;
    d.log_scale = log;
    d.grid_bins = bins;
    d.side = side;
    return d;
  };
  s.dimensions.push_back(dim("batch_size", DimKind::Integer, 4, 256, true, 7, Side::Client));
  s.dimensions.push_back(dim("weight_decay", DimKind::Continuous, 0.0, 0.001, false, 4, Side::Client));
  s.dimensions.push_back(dim("step_size", DimKind::Integer, 1, 4, false, 4, Side::Client));
  s.dimensions.push_back(dim("learning_rate", DimKind::Continuous, 0.00001, 1.0, true, 6, Side::Client));
  if (family == Family::MLP) {
    s.dimensions.push_back(dim("depth", DimKind::Integer, 1, 3, false, 3, Side::Client));
    s.dimensions.push_back(dim("width", DimKind::Integer, 16, 1024, true, 7, Side::Client));
  }
  if (algo == Algorithm::FedOpt) {
    s.dimensions.push_back(dim("momentum", DimKind::Continuous, 0.0, 0.9, false, 2, Side::Server));
    s.dimensions.push_back(
        dim("server_learning_rate", DimKind::Continuous, 0.1, 1.0, false, 3, Side::Server));
  }
  s.fidelity = FidelitySpec{};
  s.validate();
  return s;
}

// --- config-file form (keys: name, kind, lo, hi, values, log, bins, side) ---

inline nlohmann::json to_json(const Dimension& d) {
  nlohmann::json j;
  j["name"] = d.name;
  j["kind"] = to_string(d.kind);
  if (d.kind == DimKind::Categorical) {
    j["values"] = d.values;
  } else {
    j["lo"] = d.lo;
    j["hi"] = d.hi;
  }
  j["log"] = d.log_scale;
  j["bins"] = d.grid_bins;
  j["side"] = to_string(d.side);
  return j;
}

inline Dimension dimension_from_json(const nlohmann::json& j) {
  Dimension d;
  d.name = j.at("name").get<std::string>();
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "continuous")
    d.kind = DimKind::Continuous;
  else if (kind == "integer")
    d.kind = DimKind::Integer;
  else if (kind == "categorical")
    d.kind = DimKind::Categorical;
  else
    throw std::invalid_argument("dimension '" + d.name + "': unknown kind '" + kind + "'");
  if (d.kind == DimKind::Categorical) {
    d.values = j.at("values").get<std::vector<double>>();
    d.grid_bins = j.contains("bins") ? j.at("bins").get<int>() : static_cast<int>(d.values.size());
  } else {
    d.lo = j.at("lo").get<double>();
    d.hi = j.at("hi").get<double>();
    d.grid_bins = j.at("bins").get<int>();
  }
  d.log_scale = j.contains("log") && j.at("log").get<bool>();
  if (j.contains("side")) {
    std::string side = j.at("side").get<std::string>();
    if (side == "client")
      d.side = Side::Client;
    else if (side == "server")
      d.side = Side::Server;
    else
      throw std::invalid_argument("dimension '" + d.name + "': unknown side '" + side + "'");
  }
  d.validate();
  return d;
}

inline nlohmann::json to_json(const SearchSpace& s) {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : s.dimensions) dims.push_back(to_json(d));
  nlohmann::json j;
  j["dimensions"] = dims;
  j["fidelity"] = {{"round_min", s.fidelity.round_min},
                   {"round_max", s.fidelity.round_max},
                   {"sample_rate_min", s.fidelity.sample_rate_min},
                   {"sample_rate_max", s.fidelity.sample_rate_max},
                   {"sample_rate_bins", s.fidelity.sample_rate_bins}};
  return j;
}

inline SearchSpace space_from_json(const nlohmann::json& j) {
  SearchSpace s;
  for (const auto& dj : j.at("dimensions")) s.dimensions.push_back(dimension_from_json(dj));
  if (j.contains("fidelity")) {
    const auto& f = j.at("fidelity");
    if (f.contains("round_min")) s.fidelity.round_min = f.at("round_min").get<int>();
    if (f.contains("round_max")) s.fidelity.round_max = f.at("round_max").get<int>();
    if (f.contains("sample_rate_min"))
      s.fidelity.sample_rate_min = f.at("sample_rate_min").get<double>();
    if (f.contains("sample_rate_max"))
      s.fidelity.sample_rate_max = f.at("sample_rate_max").get<double>();
    if (f.contains("sample_rate_bins"))
      s.fidelity.sample_rate_bins = f.at("sample_rate_bins").get<int>();
  }
  s.validate();
  return s;
}

}  // namespace fedhpo
