#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace fedhpo {

struct Dataset {
  Eigen::MatrixXd X;       // n_samples x n_features
  std::vector<int> y;      // class indices in [0, n_classes)
  int n_classes = 0;

  int n() const { return static_cast<int>(X.rows()); }
  int d() const { return static_cast<int>(X.cols()); }

  void validate() const {
    if (static_cast<int>(y.size()) != n())
      throw std::invalid_argument("dataset: label count != row count");
    if (n_classes < 2) throw std::invalid_argument("dataset: needs at least two classes");
    if (n() < n_classes) throw std::invalid_argument("dataset: fewer samples than classes");
    if (!X.allFinite()) throw std::invalid_argument("dataset: non-finite feature value");
    for (int v : y)
      if (v < 0 || v >= n_classes) throw std::invalid_argument("dataset: label out of range");
  }

  Dataset subset(const std::vector<int>& idx) const {
    Dataset out;
    out.X.resize(static_cast<int>(idx.size()), X.cols());
    out.y.resize(idx.size());
    out.n_classes = n_classes;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.X.row(static_cast<int>(i)) = X.row(idx[i]);
      out.y[i] = y[idx[i]];
    }
    return out;
  }
};

struct ClientData {
  Dataset train, valid, test;
};

struct FederatedDataset {
  std::vector<ClientData> clients;
  int n_features = 0;
  int n_classes = 0;

  int n_clients() const { return static_cast<int>(clients.size()); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// Reads a headered CSV, factorizes the label column in first-appearance
// order, and standardizes every feature column (constant columns become 0).
inline Dataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("load_csv: empty file '" + path + "'");
  auto header = detail::split_csv_line(line);
  int label_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (detail::trim(header[i]) == label_column) label_idx = static_cast<int>(i);
  if (label_idx < 0)
    throw std::invalid_argument("load_csv: label column '" + label_column + "' not found");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::vector<std::string> level_order;
  std::map<std::string, int> levels;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw std::invalid_argument("load_csv: row " + std::to_string(lineno) +
                                  " has wrong cell count");
    std::vector<double> feat;
    feat.reserve(cells.size() - 1);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      std::string cell = detail::trim(cells[i]);
      if (static_cast<int>(i) == label_idx) {
        auto it = levels.find(cell);
        if (it == levels.end()) {
          it = levels.emplace(cell, static_cast<int>(level_order.size())).first;
          level_order.push_back(cell);
        }
        labels.push_back(it->second);
      } else {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(cell, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != cell.size() || cell.empty())
          throw std::invalid_argument("load_csv: non-numeric cell '" + cell + "' at row " +
                                      std::to_string(lineno));
        feat.push_back(v);
      }
    }
    rows.push_back(std::move(feat));
  }
  if (rows.empty()) throw std::invalid_argument("load_csv: no data rows in '" + path + "'");
  if (level_order.size() < 2)
    throw std::invalid_argument("load_csv: label column has a single class");

  Dataset ds;
  ds.n_classes = static_cast<int>(level_order.size());
  ds.y = std::move(labels);
  int n = static_cast<int>(rows.size());
  int d = static_cast<int>(rows.front().size());
  ds.X.resize(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) ds.X(i, j) = rows[i][j];

  for (int j = 0; j < d; ++j) {
    double mean = ds.X.col(j).mean();
    double var = (ds.X.col(j).array() - mean).square().sum() / n;
    if (var > 0.0)
      ds.X.col(j) = (ds.X.col(j).array() - mean) / std::sqrt(var);
    else
      ds.X.col(j).setZero();
  }
  ds.validate();
  return ds;
}

// Gaussian blobs with class means placed deterministically on the unit
// sphere. Class sizes are balanced to within one sample.
inline Dataset synth_blobs(int n_samples, int n_features, int n_classes, double spread,
                           std::uint64_t seed) {
  if (n_samples < n_classes)
    throw std::invalid_argument("synth_blobs: need at least one sample per class");
  if (n_classes < 2) throw std::invalid_argument("synth_blobs: needs at least two classes");
  if (n_features < 1) throw std::invalid_argument("synth_blobs: needs at least one feature");
  if (spread <= 0.0) throw std::invalid_argument("synth_blobs: spread must be positive");

  rng::Engine means_rng(rng::mix(seed, "blob_means"));
  Eigen::MatrixXd mu(n_classes, n_features);
  for (int c = 0; c < n_classes; ++c) {
    double norm2 = 0.0;
    for (int j = 0; j < n_features; ++j) {
      mu(c, j) = means_rng.normal();
      norm2 += mu(c, j) * mu(c, j);
    }
    double norm = std::sqrt(norm2);
    if (norm == 0.0) norm = 1.0;
    mu.row(c) /= norm;
  }

  Dataset ds;
  ds.n_classes = n_classes;
  ds.X.resize(n_samples, n_features);
  ds.y.resize(n_samples);
  rng::Engine noise_rng(rng::mix(seed, "blob_noise"));
  int base = n_samples / n_classes;
  int extra = n_samples % n_classes;
  int row = 0;
  for (int c = 0; c < n_classes; ++c) {
    int count = base + (c < extra ? 1 : 0);
    for (int k = 0; k < count; ++k, ++row) {
      for (int j = 0; j < n_features; ++j)
        ds.X(row, j) = mu(c, j) + spread * noise_rng.normal();
      ds.y[row] = c;
    }
  }
  ds.validate();
  return ds;
}

// Dirichlet label-skew partition: per class, client shares are drawn from
// Dirichlet(alpha) and the class's samples are assigned multinomially. Any
// client left empty steals one sample from the currently largest client.
inline std::vector<std::vector<int>> lda_split(const Dataset& data, int n_clients, double alpha,
                                               std::uint64_t seed) {
  data.validate();
  if (n_clients < 1) throw std::invalid_argument("lda_split: n_clients must be positive");
  if (n_clients > data.n())
    throw std::invalid_argument("lda_split: more clients than samples");
  if (alpha <= 0.0) throw std::invalid_argument("lda_split: alpha must be positive");

  std::vector<std::vector<int>> shards(n_clients);
  rng::Engine eng(rng::mix(seed, "lda"));
  for (int c = 0; c < data.n_classes; ++c) {
    std::vector<double> p = eng.dirichlet(alpha, n_clients);
    std::vector<double> cdf(p.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      cdf[i] = acc;
    }
    cdf.back() = 1.0;
    for (int i = 0; i < data.n(); ++i) {
      if (data.y[i] != c) continue;
      double u = eng.u01();
      int client = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      if (client >= n_clients) client = n_clients - 1;
      shards[client].push_back(i);
    }
  }
  for (int k = 0; k < n_clients; ++k) {
    while (shards[k].empty()) {
      int largest = 0;
      for (int j = 1; j < n_clients; ++j)
        if (shards[j].size() > shards[largest].size()) largest = j;
      shards[k].push_back(shards[largest].back());
      shards[largest].pop_back();
    }
  }
  return shards;
}

struct TvtSplit {
  std::vector<int> train, valid, test;
};

// 80/10/10 split after a seeded shuffle; valid and test sizes round down and
// the remainder goes to train.
inline TvtSplit split_tvt(const std::vector<int>& indices, std::uint64_t seed) {
  if (indices.size() < 3)
    throw std::invalid_argument("split_tvt: needs at least 3 samples");
  std::vector<int> shuffled = indices;
  rng::Engine eng(rng::mix(seed, "tvt"));
  eng.shuffle(shuffled);
  int n = static_cast<int>(shuffled.size());
  int n_valid = n / 10;
  int n_test = n / 10;
  int n_train = n - n_valid - n_test;
  TvtSplit out;
  out.train.assign(shuffled.begin(), shuffled.begin() + n_train);
  out.valid.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_valid);
  out.test.assign(shuffled.begin() + n_train + n_valid, shuffled.end());
  return out;
}

// Full pipeline: Dirichlet shards, then a per-client train/valid/test split.
// Clients are topped up to three samples so every split is constructible.
inline FederatedDataset make_federated(const Dataset& data, int n_clients, double alpha,
                                       std::uint64_t seed) {
  auto shards = lda_split(data, n_clients, alpha, seed);
  for (int k = 0; k < n_clients; ++k) {
    while (shards[k].size() < 3) {
      int largest = 0;
      for (int j = 1; j < n_clients; ++j)
        if (shards[j].size() > shards[largest].size()) largest = j;
      if (largest == k || shards[largest].size() <= 3)
        throw std::invalid_argument("make_federated: too few samples to give every client 3");
      shards[k].push_back(shards[largest].back());
      shards[largest].pop_back();
    }
  }
  FederatedDataset fed;
  fed.n_features = data.d();
  fed.n_classes = data.n_classes;
  fed.clients.resize(n_clients);
  for (int k = 0; k < n_clients; ++k) {
    TvtSplit tvt = split_tvt(shards[k], rng::mix(seed, "client_tvt", k));
    fed.clients[k].train = data.subset(tvt.train);
    fed.clients[k].valid = data.subset(tvt.valid);
    fed.clients[k].test = data.subset(tvt.test);
  }
  return fed;
}

}  // namespace fedhpo
