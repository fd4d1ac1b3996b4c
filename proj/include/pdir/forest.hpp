/*
 * Copyright 2026 The pdir Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "pdir/error.hpp"
#include "pdir/rng.hpp"

namespace pdir {

struct ForestConfig {
  int n_trees = 500;
  int mtry = 0;  // 0 selects ceil(features / 3)
  int min_node = 5;
  bool bootstrap = true;
  int threads = 0;  // 0 selects hardware concurrency
};

/// CART regression tree stored as a flat node array; node 0 is the root.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  RegressionTree() = default;
  RegressionTree(std::vector<Node> nodes, std::vector<int> bootstrap_indices)
      : nodes_(std::move(nodes)), bootstrap_indices_(std::move(bootstrap_indices)) {}

  /// Inputs with x[feature] <= threshold descend left.
  int leaf_index(std::span<const double> x) const {
    int k = 0;
    while (nodes_[k].feature >= 0) {
      const Node& nd = nodes_[k];
      k = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return k;
  }

  double predict(std::span<const double> x) const { return nodes_[leaf_index(x)].value; }

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<int>& bootstrap_indices() const { return bootstrap_indices_; }

 private:
  std::vector<Node> nodes_;
  std::vector<int> bootstrap_indices_;
};

class RegressionForest {
 public:
  RegressionForest(std::vector<RegressionTree> trees, int mtry, int min_node, std::uint64_t seed,
                   std::size_t n_features, std::vector<std::string> feature_names,
                   std::vector<double> oob_predictions)
      : trees_(std::move(trees)),
        mtry_(mtry),
        min_node_(min_node),
        seed_(seed),
        n_features_(n_features),
        feature_names_(std::move(feature_names)),
        oob_predictions_(std::move(oob_predictions)) {}

  double predict(std::span<const double> x) const {
    if (x.size() != n_features_) {
      throw ValidationError("forest expects " + std::to_string(n_features_) + " features, got " +
                            std::to_string(x.size()));
    }
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(x);
    return s / static_cast<double>(trees_.size());
  }

  /// Batch prediction; trees are visited in the outer loop so each stays in
  /// cache, and every row still sums its trees in order.
  std::vector<double> predict(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.cols()) != n_features_) {
      throw ValidationError("forest expects " + std::to_string(n_features_) + " features, got " +
                            std::to_string(x.cols()));
    }
    const auto n = static_cast<std::size_t>(x.rows());
    const std::size_t m = n_features_;
    std::vector<double> rows(n * m);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) rows[i * m + j] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    std::vector<double> out(n, 0.0);
    for (const auto& t : trees_) {
      for (std::size_t i = 0; i < n; ++i) out[i] += t.predict(std::span<const double>(rows.data() + i * m, m));
    }
    for (double& v : out) v /= static_cast<double>(trees_.size());
    return out;
  }

  std::size_t n_trees() const { return trees_.size(); }
  int mtry() const { return mtry_; }
  int min_node() const { return min_node_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t n_features() const { return n_features_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  /// Out-of-bag prediction per training row; NaN when a row was in every bag.
  const std::vector<double>& oob_predictions() const { return oob_predictions_; }

 private:
  std::vector<RegressionTree> trees_;
  int mtry_;
  int min_node_;
  std::uint64_t seed_;
  std::size_t n_features_;
  std::vector<std::string> feature_names_;
  std::vector<double> oob_predictions_;
};

namespace detail {

// Grows one tree. Each feature keeps an array of (value, bootstrap slot)
// entries sorted by value; a node owns the same contiguous range in every
// array, and a split stably partitions each range, so no node ever re-sorts.
class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& x, std::span<const double> y,
              const std::vector<std::vector<int>>& row_order, int mtry, int min_node)
      : x_(x), y_(y), row_order_(row_order), mtry_(mtry), min_node_(min_node) {
    const auto n = static_cast<std::size_t>(x.rows());
    inverse_.resize(n + 1);
    inverse_[0] = 0.0;
    for (std::size_t k = 1; k <= n; ++k) inverse_[k] = 1.0 / static_cast<double>(k);
  }

  RegressionTree grow(std::uint64_t seed, bool bootstrap) {
    Rng rng(seed);
    const int n = static_cast<int>(x_.rows());
    const int m = static_cast<int>(x_.cols());

    std::vector<int> slot_row(n);
    if (bootstrap) {
      for (int s = 0; s < n; ++s) slot_row[s] = static_cast<int>(rng.uniform_index(n));
    } else {
      std::iota(slot_row.begin(), slot_row.end(), 0);
    }
    target_.resize(n);
    for (int s = 0; s < n; ++s) target_[s] = y_[slot_row[s]];

    // Slots grouped by row, then laid out per feature in row-sorted order.
    std::vector<int> row_start(n + 1, 0);
    for (int r : slot_row) ++row_start[r + 1];
    for (int r = 0; r < n; ++r) row_start[r + 1] += row_start[r];
    std::vector<int> slots_by_row(n);
    {
      std::vector<int> fill(row_start.begin(), row_start.end() - 1);
      for (int s = 0; s < n; ++s) slots_by_row[fill[slot_row[s]]++] = s;
    }
    order_.resize(m);
    for (int f = 0; f < m; ++f) {
      auto& ord = order_[f];
      ord.clear();
      ord.reserve(n);
      for (int r : row_order_[f]) {
        for (int k = row_start[r]; k < row_start[r + 1]; ++k) ord.push_back({x_(r, f), slots_by_row[k]});
      }
    }
    goes_left_.assign(n, 0);
    buffer_.resize(n);
    features_.resize(m);

    std::vector<RegressionTree::Node> nodes(1);
    struct Pending { int node, begin, end; };
    std::vector<Pending> stack{{0, 0, n}};
    while (!stack.empty()) {
      const Pending cur = stack.back();
      stack.pop_back();
      double total = 0.0;
      for (int i = cur.begin; i < cur.end; ++i) total += target_[order_[0][i].slot];
      nodes[cur.node].value = total / static_cast<double>(cur.end - cur.begin);
      const auto split = find_split(cur.begin, cur.end, total, rng);
      if (!split) continue;
      partition(cur.begin, cur.end, split->feature, split->left_count);
      const int left = static_cast<int>(nodes.size());
      nodes.emplace_back();
      nodes.emplace_back();
      nodes[cur.node].feature = split->feature;
      nodes[cur.node].threshold = split->threshold;
      nodes[cur.node].left = left;
      nodes[cur.node].right = left + 1;
      const int mid = cur.begin + split->left_count;
      stack.push_back({left + 1, mid, cur.end});
      stack.push_back({left, cur.begin, mid});
    }
    return RegressionTree(std::move(nodes), std::move(slot_row));
  }

 private:
  struct Entry {
    double x;
    int slot;
  };
  struct Split {
    int feature;
    int left_count;
    double threshold;
  };

  std::optional<Split> find_split(int b, int e, double total, Rng& rng) {
    const int size = e - b;
    if (size < 2 * min_node_) return std::nullopt;
    const double first = target_[order_[0][b].slot];
    bool pure = true;
    for (int i = b + 1; i < e && pure; ++i) pure = target_[order_[0][i].slot] == first;
    if (pure) return std::nullopt;

    // Candidate features: the first mtry entries of a seeded partial shuffle.
    const int m = static_cast<int>(features_.size());
    std::iota(features_.begin(), features_.end(), 0);
    for (int k = 0; k < mtry_; ++k) {
      const int j = k + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(m - k)));
      std::swap(features_[k], features_[j]);
    }

    std::optional<Split> best;
    double best_score = -std::numeric_limits<double>::infinity();
    const int last = e - min_node_;  // largest admissible left end (exclusive)
    for (int k = 0; k < mtry_; ++k) {
      const int f = features_[k];
      const Entry* ord = order_[f].data();
      double left_sum = 0.0;
      for (int i = b; i < b + min_node_ - 1; ++i) left_sum += target_[ord[i].slot];
      for (int i = b + min_node_ - 1; i < last; ++i) {
        left_sum += target_[ord[i].slot];
        if (ord[i].x == ord[i + 1].x) continue;
        const int nl = i - b + 1;
        const double right_sum = total - left_sum;
        // Minimizing child SSE is maximizing sum^2 / count over the children.
        const double score = left_sum * left_sum * inverse_[nl] + right_sum * right_sum * inverse_[size - nl];
        if (score > best_score) {
          best_score = score;
          const double xl = ord[i].x, xr = ord[i + 1].x;
          double thr = xl + 0.5 * (xr - xl);
          if (!(thr < xr)) thr = xl;
          best = Split{f, nl, thr};
        }
      }
    }
    return best;
  }

  void partition(int b, int e, int feature, int left_count) {
    const auto& split_order = order_[feature];
    for (int i = b; i < e; ++i) goes_left_[split_order[i].slot] = (i - b) < left_count;
    for (int f = 0; f < static_cast<int>(order_.size()); ++f) {
      if (f == feature) continue;
      Entry* ord = order_[f].data();
      int l = b, r = 0;
      for (int i = b; i < e; ++i) {
        const Entry en = ord[i];
        const int g = goes_left_[en.slot];
        ord[l] = en;
        buffer_[r] = en;
        l += g;
        r += 1 - g;
      }
      std::copy(buffer_.begin(), buffer_.begin() + r, ord + l);
    }
  }

  const Eigen::MatrixXd& x_;
  std::span<const double> y_;
  const std::vector<std::vector<int>>& row_order_;
  int mtry_;
  int min_node_;
  std::vector<double> inverse_;
  std::vector<double> target_;
  std::vector<std::vector<Entry>> order_;
  std::vector<char> goes_left_;
  std::vector<Entry> buffer_;
  std::vector<int> features_;
};

}  // namespace detail

/// Fits a bagged CART regression forest.
///
/// Tree t is grown from seed derive_seed(seed, t), so the result does not
/// depend on the number of worker threads.
inline RegressionForest fit_forest(const Eigen::MatrixXd& x, std::span<const double> y,
                                   const ForestConfig& config, std::uint64_t seed,
                                   std::vector<std::string> feature_names = {}) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto m = static_cast<int>(x.cols());
  if (n < 2) throw ValidationError("forest needs n ≥ 2");
  if (y.size() != n) throw ValidationError("forest target length equals the number of rows");
  if (m < 1) throw ValidationError("forest needs at least one feature");
  for (double v : y) {
    if (!std::isfinite(v)) throw ValidationError("forest target is finite");
  }
  if (config.n_trees < 1) throw ValidationError("n_trees ≥ 1");
  if (config.min_node < 1) throw ValidationError("min_node ≥ 1");
  const int mtry = config.mtry == 0 ? (m + 2) / 3 : config.mtry;
  if (mtry < 1 || mtry > m) throw ValidationError("1 ≤ mtry ≤ feature count");
  if (!feature_names.empty() && feature_names.size() != static_cast<std::size_t>(m)) {
    throw ValidationError("feature_names length equals the number of features");
  }

  std::vector<std::vector<int>> row_order(m, std::vector<int>(n));
  for (int f = 0; f < m; ++f) {
    auto& ord = row_order[f];
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) { return x(a, f) < x(b, f); });
  }

  const auto n_trees = static_cast<std::size_t>(config.n_trees);
  std::vector<RegressionTree> trees(n_trees);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    detail::TreeBuilder builder(x, y, row_order, mtry, config.min_node);
    for (std::size_t t = next++; t < n_trees; t = next++) {
      trees[t] = builder.grow(derive_seed(seed, t), config.bootstrap);
    }
  };
  unsigned threads = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(n_trees));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker);
  }

  // Out-of-bag predictions, accumulated in tree order.
  std::vector<double> oob_sum(n, 0.0);
  std::vector<int> oob_count(n, 0);
  std::vector<char> in_bag(n);
  const auto mm = static_cast<std::size_t>(m);
  std::vector<double> rows(n * mm);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < mm; ++j) rows[i * mm + j] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  for (const auto& tree : trees) {
    std::fill(in_bag.begin(), in_bag.end(), 0);
    for (int r : tree.bootstrap_indices()) in_bag[r] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (in_bag[i]) continue;
      oob_sum[i] += tree.predict(std::span<const double>(rows.data() + i * mm, mm));
      ++oob_count[i];
    }
  }
  std::vector<double> oob(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < n; ++i) {
    if (oob_count[i] > 0) oob[i] = oob_sum[i] / oob_count[i];
  }

  return RegressionForest(std::move(trees), mtry, config.min_node, seed,
                          static_cast<std::size_t>(m), std::move(feature_names), std::move(oob));
}

inline double predict_forest(const RegressionForest& forest, std::span<const double> features) {
  return forest.predict(features);
}

}  // namespace pdir
