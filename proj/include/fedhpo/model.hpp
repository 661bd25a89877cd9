#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dataflow.hpp"
#include "rng.hpp"

namespace fedhpo {

enum class Arch { LR, MLP };

struct Architecture {
  Arch kind = Arch::LR;
  int depth = 0;  // hidden layers (mlp only)
  int width = 0;

  void validate() const {
    if (kind == Arch::MLP && (depth < 1 || width < 1))
      throw std::invalid_argument("mlp architecture needs depth >= 1 and width >= 1");
  }
};

// Parameter count of the layer stack without materializing it.
inline std::size_t param_count(const Architecture& arch, int n_features, int n_classes) {
  arch.validate();
  std::vector<int> dims;
  dims.push_back(n_features);
  if (arch.kind == Arch::MLP)
    for (int l = 0; l < arch.depth; ++l) dims.push_back(arch.width);
  dims.push_back(n_classes);
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    n += static_cast<std::size_t>(dims[l] + 1) * static_cast<std::size_t>(dims[l + 1]);
  return n;
}

// Dense layer stack. LR is a single affine map to the logits; MLP inserts
// `depth` hidden layers of `width` units with ReLU.
struct ModelParams {
  Architecture arch;
  int n_features = 0;
  int n_classes = 0;
  std::vector<Eigen::MatrixXd> W;  // out x in
  std::vector<Eigen::VectorXd> b;

  static ModelParams init(Architecture arch, int n_features, int n_classes, std::uint64_t seed) {
    arch.validate();
    if (n_features < 1 || n_classes < 2)
      throw std::invalid_argument("model needs n_features >= 1 and n_classes >= 2");
    ModelParams m;
    m.arch = arch;
    m.n_features = n_features;
    m.n_classes = n_classes;
    std::vector<int> dims;
    dims.push_back(n_features);
    if (arch.kind == Arch::MLP)
      for (int l = 0; l < arch.depth; ++l) dims.push_back(arch.width);
    dims.push_back(n_classes);
    rng::Engine eng(rng::mix(seed, "model_init"));
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      int in = dims[l], out = dims[l + 1];
      double bound = 1.0 / std::sqrt(static_cast<double>(in));
      Eigen::MatrixXd w(out, in);
      for (int i = 0; i < out; ++i)
        for (int j = 0; j < in; ++j) w(i, j) = eng.uniform(-bound, bound);
      m.W.push_back(std::move(w));
      m.b.push_back(Eigen::VectorXd::Zero(out));
    }
    return m;
  }

  std::size_t n_layers() const { return W.size(); }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < W.size(); ++l)
      n += static_cast<std::size_t>(W[l].size()) + static_cast<std::size_t>(b[l].size());
    return n;
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < W.size(); ++l)
      if (!W[l].allFinite() || !b[l].allFinite()) return false;
    return true;
  }

  static ModelParams zeros_like(const ModelParams& other) {
    ModelParams m = other;
    for (auto& w : m.W) w.setZero();
    for (auto& v : m.b) v.setZero();
    return m;
  }
};

// Logits for a batch; evaluation mode (no dropout).
inline Eigen::MatrixXd forward(const ModelParams& m, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd h = X;
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    h = (h * m.W[l].transpose()).rowwise() + m.b[l].transpose();
    if (l + 1 < m.n_layers()) h = h.cwiseMax(0.0);
  }
  return h;
}

// Row-wise log-sum-exp, numerically stable.
inline Eigen::VectorXd logsumexp_rows(const Eigen::MatrixXd& Z) {
  Eigen::VectorXd mx = Z.rowwise().maxCoeff();
  Eigen::VectorXd out(Z.rows());
  for (int i = 0; i < Z.rows(); ++i)
    out(i) = mx(i) + std::log((Z.row(i).array() - mx(i)).exp().sum());
  return out;
}

// Mean softmax cross-entropy of a batch (no L2 term).
inline double ce_loss(const ModelParams& m, const Eigen::MatrixXd& X, const std::vector<int>& y) {
  if (X.rows() == 0) return 0.0;
  Eigen::MatrixXd Z = forward(m, X);
  Eigen::VectorXd lse = logsumexp_rows(Z);
  double total = 0.0;
  for (int i = 0; i < Z.rows(); ++i) total += lse(i) - Z(i, y[static_cast<std::size_t>(i)]);
  return total / Z.rows();
}

// Full training objective: mean CE + (wd/2)·sum of squared weights.
inline double objective(const ModelParams& m, const Eigen::MatrixXd& X, const std::vector<int>& y,
                        double weight_decay) {
  double l2 = 0.0;
  for (const auto& w : m.W) l2 += w.squaredNorm();
  return ce_loss(m, X, y) + 0.5 * weight_decay * l2;
}

struct GradientResult {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;
  double loss = 0.0;  // objective value at the evaluation point
};

// Backprop through the stack. Dropout masks (inverted scaling) are applied to
// hidden activations when dropout > 0 and an engine is supplied.
inline GradientResult gradients(const ModelParams& m, const Eigen::MatrixXd& X,
                                const std::vector<int>& y, double weight_decay,
                                double dropout = 0.0, rng::Engine* eng = nullptr) {
  int B = static_cast<int>(X.rows());
  if (B == 0) throw std::invalid_argument("gradients: empty batch");
  std::size_t L = m.n_layers();
  std::vector<Eigen::MatrixXd> acts(L + 1);  // post-activation values
  std::vector<Eigen::MatrixXd> masks(L);
  acts[0] = X;
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = (acts[l] * m.W[l].transpose()).rowwise() + m.b[l].transpose();
    if (l + 1 < L) {
      z = z.cwiseMax(0.0);
      if (dropout > 0.0 && eng != nullptr) {
        double keep = 1.0 - dropout;
        masks[l].resize(z.rows(), z.cols());
        for (int i = 0; i < z.rows(); ++i)
          for (int j = 0; j < z.cols(); ++j)
            masks[l](i, j) = (eng->u01() < keep) ? 1.0 / keep : 0.0;
        z = z.cwiseProduct(masks[l]);
      }
    }
    acts[l + 1] = std::move(z);
  }
  const Eigen::MatrixXd& Z = acts[L];
  Eigen::VectorXd lse = logsumexp_rows(Z);
  double loss = 0.0;
  Eigen::MatrixXd G(B, m.n_classes);  // d(meanCE)/dZ
  for (int i = 0; i < B; ++i) {
    loss += lse(i) - Z(i, y[static_cast<std::size_t>(i)]);
    G.row(i) = (Z.row(i).array() - lse(i)).exp();
    G(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  }
  loss /= B;
  G /= B;

  GradientResult out;
  out.dW.resize(L);
  out.db.resize(L);
  double l2 = 0.0;
  for (const auto& w : m.W) l2 += w.squaredNorm();
  out.loss = loss + 0.5 * weight_decay * l2;

  Eigen::MatrixXd delta = G;
  for (std::size_t l = L; l-- > 0;) {
    out.dW[l] = delta.transpose() * acts[l] + weight_decay * m.W[l];
    out.db[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      delta = delta * m.W[l];
      if (dropout > 0.0 && eng != nullptr && masks[l - 1].size() > 0)
        delta = delta.cwiseProduct(masks[l - 1]);
      delta = ((acts[l].array() > 0.0).cast<double>() * delta.array()).matrix();
    }
  }
  return out;
}

struct SplitMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

// Pools all clients' samples of one split: losses and accuracy are
// sample-weighted; macro-F1 comes from the pooled confusion matrix.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(int n_classes)
      : n_classes_(n_classes), confusion_(Eigen::MatrixXd::Zero(n_classes, n_classes)) {}

  void add(const ModelParams& m, const Dataset& split) {
    if (split.n() == 0) return;
    Eigen::MatrixXd Z = forward(m, split.X);
    Eigen::VectorXd lse = logsumexp_rows(Z);
    for (int i = 0; i < Z.rows(); ++i) {
      int truth = split.y[static_cast<std::size_t>(i)];
      loss_sum_ += lse(i) - Z(i, truth);
      int pred = 0;
      Z.row(i).maxCoeff(&pred);
      confusion_(truth, pred) += 1.0;
      n_ += 1;
    }
  }

  bool empty() const { return n_ == 0; }

  SplitMetrics finalize() const {
    SplitMetrics out;
    if (n_ == 0) return out;
    out.loss = loss_sum_ / n_;
    out.accuracy = confusion_.trace() / n_;
    double f1_sum = 0.0;
    for (int c = 0; c < n_classes_; ++c) {
      double tp = confusion_(c, c);
      double fp = confusion_.col(c).sum() - tp;
      double fn = confusion_.row(c).sum() - tp;
      double denom = 2.0 * tp + fp + fn;
      f1_sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
    }
    out.macro_f1 = f1_sum / n_classes_;
    return out;
  }

 private:
  int n_classes_;
  Eigen::MatrixXd confusion_;
  double loss_sum_ = 0.0;
  long n_ = 0;
};

}  // namespace fedhpo
