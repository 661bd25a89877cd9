#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "rng.hpp"

namespace fedhpo::forest {

// Axis-aligned regression tree node. feature < 0 marks a leaf; interior
// nodes route x[feature] <= threshold to the left child.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(const Eigen::VectorXd& x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const TreeNode& nd = nodes[static_cast<std::size_t>(i)];
      i = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }
};

struct ForestParams {
  int n_trees = 10;
  int max_depth = 10;
  int min_leaf = 1;
  bool bootstrap = true;

  void validate() const {
    if (n_trees < 1 || max_depth < 1 || min_leaf < 1)
      throw std::invalid_argument("forest: n_trees, max_depth, min_leaf must be >= 1");
  }
};

namespace detail {

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double sse = std::numeric_limits<double>::infinity();
};

// Best variance-reduction split over all features, scanning boundaries
// between distinct sorted values. Considers every feature (the encoded
// benchmark tables are low-dimensional).
inline SplitChoice best_split(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const std::vector<int>& idx, int min_leaf) {
  SplitChoice best;
  int n = static_cast<int>(idx.size());
  std::vector<std::pair<double, double>> pts(static_cast<std::size_t>(n));  // (x, y)
  for (int f = 0; f < X.cols(); ++f) {
    for (int i = 0; i < n; ++i)
      pts[static_cast<std::size_t>(i)] = {X(idx[static_cast<std::size_t>(i)], f),
                                          y[idx[static_cast<std::size_t>(i)]]};
    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double total_sum = 0.0, total_sq = 0.0;
    for (const auto& p : pts) {
      total_sum += p.second;
      total_sq += p.second * p.second;
    }
    double left_sum = 0.0, left_sq = 0.0;
    for (int i = 0; i + 1 < n; ++i) {
      left_sum += pts[static_cast<std::size_t>(i)].second;
      left_sq += pts[static_cast<std::size_t>(i)].second * pts[static_cast<std::size_t>(i)].second;
      if (pts[static_cast<std::size_t>(i)].first == pts[static_cast<std::size_t>(i + 1)].first)
        continue;
      int nl = i + 1, nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      double right_sum = total_sum - left_sum;
      double right_sq = total_sq - left_sq;
      double sse = (left_sq - left_sum * left_sum / nl) + (right_sq - right_sum * right_sum / nr);
      if (sse < best.sse) {
        best.sse = sse;
        best.feature = f;
        best.threshold = 0.5 * (pts[static_cast<std::size_t>(i)].first +
                                pts[static_cast<std::size_t>(i + 1)].first);
      }
    }
  }
  return best;
}

inline int build_node(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<int>& idx,
                      int depth, const ForestParams& p, std::vector<TreeNode>& nodes) {
  bool pure = true;
  for (int i : idx)
    if (y[i] != y[idx.front()]) {
      pure = false;
      break;
    }
  double mean = y[idx.front()];
  if (!pure) {
    mean = 0.0;
    for (int i : idx) mean += y[i];
    mean /= static_cast<double>(idx.size());
  }

  int self = static_cast<int>(nodes.size());
  nodes.push_back(TreeNode{});
  nodes[static_cast<std::size_t>(self)].value = mean;

  if (pure || depth >= p.max_depth || static_cast<int>(idx.size()) < 2 * p.min_leaf) return self;

  SplitChoice s = best_split(X, y, idx, p.min_leaf);
  if (s.feature < 0) return self;  // all features constant on this node

  std::vector<int> left_idx, right_idx;
  for (int i : idx)
    (X(i, s.feature) <= s.threshold ? left_idx : right_idx).push_back(i);

  nodes[static_cast<std::size_t>(self)].feature = s.feature;
  nodes[static_cast<std::size_t>(self)].threshold = s.threshold;
  int l = build_node(X, y, left_idx, depth + 1, p, nodes);
  int r = build_node(X, y, right_idx, depth + 1, p, nodes);
  nodes[static_cast<std::size_t>(self)].left = l;
  nodes[static_cast<std::size_t>(self)].right = r;
  return self;
}

}  // namespace detail

class Forest {
 public:
  Forest() = default;

  static Forest fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestParams& p,
                    std::uint64_t seed) {
    p.validate();
    if (X.rows() != y.size() || X.rows() < 1)
      throw std::invalid_argument("forest: X and y must be non-empty with matching rows");
    Forest f;
    f.params_ = p;
    int n = static_cast<int>(X.rows());
    for (int t = 0; t < p.n_trees; ++t) {
      std::vector<int> idx(static_cast<std::size_t>(n));
      if (p.bootstrap) {
        rng::Engine eng(rng::mix(seed, "tree", t));
        for (int i = 0; i < n; ++i)
          idx[static_cast<std::size_t>(i)] =
              static_cast<int>(eng.below(static_cast<std::uint64_t>(n)));
      } else {
        std::iota(idx.begin(), idx.end(), 0);
      }
      Tree tree;
      detail::build_node(X, y, idx, 0, p, tree.nodes);
      f.trees_.push_back(std::move(tree));
    }
    return f;
  }

  double predict(const Eigen::VectorXd& x) const {
    if (trees_.empty()) throw std::logic_error("forest: predict on an unfitted model");
    double sum = 0.0;
    for (const auto& t : trees_) sum += t.predict(x);
    return sum / static_cast<double>(trees_.size());
  }

  const ForestParams& params() const { return params_; }
  const std::vector<Tree>& trees() const { return trees_; }

  void save(std::ostream& out) const {
    write_u32(out, static_cast<std::uint32_t>(trees_.size()));
    for (const auto& t : trees_) {
      write_u32(out, static_cast<std::uint32_t>(t.nodes.size()));
      for (const auto& nd : t.nodes) {
        write_i32(out, nd.feature);
        write_f64(out, nd.threshold);
        write_i32(out, nd.left);
        write_i32(out, nd.right);
        write_f64(out, nd.value);
      }
    }
  }

  static Forest load(std::istream& in, const ForestParams& p) {
    Forest f;
    f.params_ = p;
    std::uint32_t n_trees = read_u32(in);
    for (std::uint32_t t = 0; t < n_trees; ++t) {
      Tree tree;
      std::uint32_t n_nodes = read_u32(in);
      tree.nodes.resize(n_nodes);
      for (auto& nd : tree.nodes) {
        nd.feature = read_i32(in);
        nd.threshold = read_f64(in);
        nd.left = read_i32(in);
        nd.right = read_i32(in);
        nd.value = read_f64(in);
      }
      f.trees_.push_back(std::move(tree));
    }
    return f;
  }

  static void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static void write_i32(std::ostream& out, std::int32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("forest: truncated stream");
    return v;
  }
  static std::int32_t read_i32(std::istream& in) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("forest: truncated stream");
    return v;
  }
  static double read_f64(std::istream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("forest: truncated stream");
    return v;
  }

 private:
  ForestParams params_;
  std::vector<Tree> trees_;
};

}  // namespace fedhpo::forest
