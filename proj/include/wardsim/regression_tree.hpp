#pragma once

// Greedy CART regression tree (sum-of-squares splitting) and a bagged
// ensemble of such trees.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "wardsim/common.hpp"

namespace wardsim {

/// Row-major design: one inner vector per observation.
using Samples = std::vector<std::vector<double>>;

struct TreeControls {
  int max_depth = 6;
  std::size_t min_leaf = 5;
  double min_split_improvement = 1e-9;
};

class RegressionTree {
public:
  struct Node {
    int variable = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // mean response of the node's training subset
    std::size_t count = 0;
    double improvement = 0.0;  // SSE reduction of this split
    bool is_leaf() const noexcept { return variable < 0; }
  };

  /// Splits go left when x[variable] <= threshold. Among equal improvements
  /// the lowest variable index and then the lowest threshold wins.
  static RegressionTree fit(const Samples& x, std::span<const double> y, const TreeControls& controls = {}) {
    if (x.empty() || x.size() != y.size()) throw ValidationError("tree needs matching, non-empty X and y");
    RegressionTree tree;
    tree.dims_ = x.front().size();
    for (const auto& row : x)
      if (row.size() != tree.dims_) throw ValidationError("ragged design matrix");
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    tree.grow(x, y, idx, 0, controls);
    return tree;
  }

  double predict(std::span<const double> point) const {
    int n = 0;
    while (!nodes_[static_cast<std::size_t>(n)].is_leaf()) {
      const Node& node = nodes_[static_cast<std::size_t>(n)];
      n = point[static_cast<std::size_t>(node.variable)] <= node.threshold ? node.left : node.right;
    }
    return nodes_[static_cast<std::size_t>(n)].value;
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t dims() const noexcept { return dims_; }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.is_leaf(); }));
  }

  /// Total SSE reduction per split variable, normalized to sum 1; all zeros for a single leaf.
  std::vector<double> variable_importance() const {
    std::vector<double> imp(dims_, 0.0);
    for (const auto& n : nodes_)
      if (!n.is_leaf()) imp[static_cast<std::size_t>(n.variable)] += n.improvement;
    const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (total > 0.0)
      for (double& v : imp) v /= total;
    return imp;
  }

private:
  struct Split {
    int variable = -1;
    double threshold = 0.0;
    double improvement = 0.0;
  };

  static Split best_split(const Samples& x, std::span<const double> y, const std::vector<std::size_t>& idx,
                          const TreeControls& c) {
    Split best;
    const std::size_t n = idx.size();
    if (n < 2 * std::max<std::size_t>(c.min_leaf, 1)) return best;
    const std::size_t dims = x.front().size();
    std::vector<std::size_t> order = idx;
    double total = 0.0;
    for (std::size_t i : idx) total += y[i];

    for (std::size_t v = 0; v < dims; ++v) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a][v] < x[b][v]; });
      double left_sum = 0.0;
      for (std::size_t k = 1; k < n; ++k) {
        left_sum += y[order[k - 1]];
        const double below = x[order[k - 1]][v];
        const double above = x[order[k]][v];
        if (k < c.min_leaf || n - k < c.min_leaf || !(below < above)) continue;
        const double nl = static_cast<double>(k), nr = static_cast<double>(n - k);
        const double diff = left_sum / nl - (total - left_sum) / nr;
        const double gain = nl * nr / static_cast<double>(n) * diff * diff;
        if (gain > best.improvement) {
          double mid = below + (above - below) / 2.0;
          if (!(mid < above)) mid = below;
          best = {static_cast<int>(v), mid, gain};
        }
      }
    }
    if (best.improvement <= c.min_split_improvement) best.variable = -1;
    return best;
  }

  int grow(const Samples& x, std::span<const double> y, const std::vector<std::size_t>& idx, int depth,
           const TreeControls& c) {
    const int id = static_cast<int>(nodes_.size());
    Node node;
    double sum = 0.0;
    for (std::size_t i : idx) sum += y[i];
    node.count = idx.size();
    node.value = sum / static_cast<double>(idx.size());
    nodes_.push_back(node);

    if (depth >= c.max_depth) return id;
    const Split split = best_split(x, y, idx, c);
    if (split.variable < 0) return id;

    std::vector<std::size_t> left, right;
    for (std::size_t i : idx)
      (x[i][static_cast<std::size_t>(split.variable)] <= split.threshold ? left : right).push_back(i);
    const int l = grow(x, y, left, depth + 1, c);
    const int r = grow(x, y, right, depth + 1, c);
    Node& self = nodes_[static_cast<std::size_t>(id)];
    self.variable = split.variable;
    self.threshold = split.threshold;
    self.improvement = split.improvement;
    self.left = l;
    self.right = r;
    return id;
  }

  std::vector<Node> nodes_;
  std::size_t dims_ = 0;
};

struct EnsembleOptions {
  std::size_t trees = 50;
  double bootstrap_fraction = 0.8;
  std::uint64_t seed = 0;
  TreeControls controls{6, 2, 1e-9};
};

/// Bootstrap draw (with replacement) for tree t of an ensemble.
inline std::vector<std::size_t> bootstrap_indices(std::size_t n, double fraction, std::uint64_t seed, std::size_t t) {
  const auto size = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))));
  std::mt19937_64 rng{hash64(seed, t)};
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> out(size);
  for (auto& i : out) i = pick(rng);
  return out;
}

class BaggedTrees {
public:
  static BaggedTrees fit(const Samples& x, std::span<const double> y, const EnsembleOptions& opt = {}) {
    if (x.empty() || x.size() != y.size()) throw ValidationError("ensemble needs matching, non-empty X and y");
    BaggedTrees ensemble;
    ensemble.trees_.reserve(opt.trees);
    for (std::size_t t = 0; t < opt.trees; ++t) {
      const auto rows = bootstrap_indices(x.size(), opt.bootstrap_fraction, opt.seed, t);
      Samples bx;
      std::vector<double> by;
      bx.reserve(rows.size());
      for (std::size_t i : rows) {
        bx.push_back(x[i]);
        by.push_back(y[i]);
      }
      ensemble.trees_.push_back(RegressionTree::fit(bx, by, opt.controls));
    }
    return ensemble;
  }

  double predict(std::span<const double> point) const {
    double sum = 0.0;
    for (const auto& t : trees_) sum += t.predict(point);
    return sum / static_cast<double>(trees_.size());
  }

  const std::vector<RegressionTree>& trees() const noexcept { return trees_; }

private:
  std::vector<RegressionTree> trees_;
};

}  // namespace wardsim
