#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

// Seeding and distribution transforms are hand-rolled so that identical seeds
// give identical streams on every platform. std::mt19937_64 itself is fully
// specified by the standard; the std::*_distribution adaptors are not.
namespace fedhpo::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_key(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t mix1(std::uint64_t seed, std::uint64_t key) {
  return splitmix64(seed ^ splitmix64(key));
}

// Derives an independent substream id from a seed and a list of keys.
// Strings label the purpose, integers index repetitions.
inline std::uint64_t mix(std::uint64_t seed) { return splitmix64(seed); }

template <class K, class... Rest>
std::uint64_t mix(std::uint64_t seed, K key, Rest... rest) {
  std::uint64_t k;
  if constexpr (std::is_convertible_v<K, std::string_view>)
    k = hash_key(std::string_view(key));
  else
    k = static_cast<std::uint64_t>(key);
  return mix(mix1(seed, k), rest...);
}

class Engine {
 public:
  explicit Engine(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  // uniform in [0, 1)
  double u01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // unbiased integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("below: n must be positive");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next();
    while (v >= limit) v = next();
    return v % n;
  }

  long uniform_int(long lo, long hi) {  // inclusive range
    return lo + static_cast<long>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * u01() - 1.0;
      v = 2.0 * u01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  double exponential(double mean) { return -mean * std::log(1.0 - u01()); }

  // Marsaglia-Tsang; boosted for shape < 1.
  double gamma(double shape) {
    if (shape <= 0.0) throw std::invalid_argument("gamma: shape must be positive");
    if (shape < 1.0) {
      double u = u01();
      while (u == 0.0) u = u01();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = u01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::vector<double> dirichlet(double alpha, int n) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      p[i] = gamma(alpha);
      sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {  // Fisher-Yates
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), in draw order
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
      std::size_t j = i + below(n - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedhpo::rng
