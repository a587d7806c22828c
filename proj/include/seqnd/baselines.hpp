#pragma once

// Classical comparators: kNN over raw sequences (Minkowski and LCS
// distances), prefixspan sequential-pattern features and isolation forests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqnd/common.hpp"
#include "seqnd/corpus.hpp"

namespace seqnd {

// ---------------------------------------------------------------------------
// kNN

/// Training sequences zero-padded to the longest one.
class KnnIndex {
public:
  KnnIndex(std::vector<std::vector<TokenId>> training, double p) : train_(std::move(training)), p_(p) {
    if (train_.empty()) throw InvalidArgument("kNN needs training sequences");
    if (!(p_ >= 1.0)) throw InvalidArgument("Minkowski order p must be >= 1");
    for (const auto& s : train_) width_ = std::max(width_, s.size());
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return train_.size(); }

  double distance(const std::vector<TokenId>& query, const std::vector<TokenId>& other) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < width_; ++i) {
      double a = i < query.size() ? static_cast<double>(query[i]) : 0.0;
      double b = i < other.size() ? static_cast<double>(other[i]) : 0.0;
      acc += std::pow(std::abs(a - b), p_);
    }
    return std::pow(acc, 1.0 / p_);
  }

  /// Mean distance to the k nearest training sequences. Queries longer than
  /// the padding width are truncated (and reported on `warn`).
  double score(const std::vector<TokenId>& query, std::size_t k, std::ostream* warn = &std::cerr) const {
    if (k < 1 || k > train_.size()) throw InvalidArgument("kNN requires 1 <= k <= training size");
    if (query.size() > width_ && warn)
      *warn << "warning: kNN query of length " << query.size() << " truncated to " << width_ << '\n';
    std::vector<double> d;
    d.reserve(train_.size());
    for (const auto& s : train_) d.push_back(distance(query, s));
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
    std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k));
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += d[i];
    return sum / static_cast<double>(k);
  }

private:
  std::vector<std::vector<TokenId>> train_;
  double p_;
  std::size_t width_ = 0;
};

inline std::size_t lcs_length(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// 1 - LCS / max(|a|, |b|); two empty sequences are at distance 0.
inline double lcs_distance(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  const std::size_t m = std::max(a.size(), b.size());
  if (m == 0) return 0.0;
  return 1.0 - static_cast<double>(lcs_length(a, b)) / static_cast<double>(m);
}

inline double knn_lcs_score(const std::vector<TokenId>& query, const std::vector<std::vector<TokenId>>& training,
                            std::size_t k) {
  if (k < 1 || k > training.size()) throw InvalidArgument("kNN requires 1 <= k <= training size");
  std::vector<double> d;
  d.reserve(training.size());
  for (const auto& s : training) d.push_back(lcs_distance(query, s));
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
  std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k));
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += d[i];
  return sum / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Sequential patterns

struct SequentialPattern {
  std::vector<TokenId> pattern;
  std::size_t support = 0;

  bool operator==(const SequentialPattern&) const = default;
};

/// Ranking used for top-k: support descending, then shorter, then
/// lexicographically smaller.
inline bool pattern_ranks_before(const SequentialPattern& a, const SequentialPattern& b) {
  if (a.support != b.support) return a.support > b.support;
  if (a.pattern.size() != b.pattern.size()) return a.pattern.size() < b.pattern.size();
  return a.pattern < b.pattern;
}

/// Greedy left-to-right subsequence test.
inline bool is_subsequence(const std::vector<TokenId>& pattern, const std::vector<TokenId>& seq) {
  std::size_t j = 0;
  for (std::size_t i = 0; i < seq.size() && j < pattern.size(); ++i)
    if (seq[i] == pattern[j]) ++j;
  return j == pattern.size();
}

/// Top-k frequent subsequences by prefix-projected pattern growth.
///
/// Extending a pattern never raises its support and always lengthens it, so
/// every child ranks after its parent. Expanding candidates best-first
/// therefore emits patterns in exact rank order and can stop after k.
inline std::vector<SequentialPattern> prefixspan_top_k(const std::vector<std::vector<TokenId>>& db,
                                                       std::size_t top_k = 800, std::size_t min_support = 2) {
  if (db.empty()) throw InvalidArgument("prefixspan needs a non-empty corpus");
  if (min_support < 1) min_support = 1;
  auto worse = [](const SequentialPattern& a, const SequentialPattern& b) { return pattern_ranks_before(b, a); };
  std::priority_queue<SequentialPattern, std::vector<SequentialPattern>, decltype(worse)> frontier(worse);

  // Supports of single-item extensions over the projected suffixes.
  auto extension_supports = [&](const std::vector<std::pair<std::size_t, std::size_t>>& projection) {
    std::map<TokenId, std::size_t> support;
    std::set<TokenId> seen;
    for (auto [s, start] : projection) {
      seen.clear();
      for (std::size_t i = start; i < db[s].size(); ++i)
        if (seen.insert(db[s][i]).second) ++support[db[s][i]];
    }
    return support;
  };
  auto push_children = [&](const std::vector<TokenId>& prefix,
                           const std::vector<std::pair<std::size_t, std::size_t>>& projection) {
    for (auto [item, sup] : extension_supports(projection)) {
      if (sup < min_support) continue;
      SequentialPattern child{prefix, sup};
      child.pattern.push_back(item);
      frontier.push(std::move(child));
    }
  };

  std::vector<std::pair<std::size_t, std::size_t>> projection;
  for (std::size_t s = 0; s < db.size(); ++s) projection.emplace_back(s, 0);
  push_children({}, projection);

  std::vector<SequentialPattern> out;
  while (!frontier.empty() && out.size() < top_k) {
    SequentialPattern best = frontier.top();
    frontier.pop();
    // Earliest-match projection: the suffix after the greedy embedding.
    projection.clear();
    for (std::size_t s = 0; s < db.size(); ++s) {
      std::size_t j = 0, i = 0;
      for (; i < db[s].size() && j < best.pattern.size(); ++i)
        if (db[s][i] == best.pattern[j]) ++j;
      if (j == best.pattern.size()) projection.emplace_back(s, i);
    }
    push_children(best.pattern, projection);
    out.push_back(std::move(best));
  }
  return out;
}

/// Entry j is 1 iff pattern j occurs as a subsequence.
inline std::vector<double> pattern_features(const std::vector<TokenId>& seq,
                                            const std::vector<SequentialPattern>& patterns) {
  std::vector<double> f;
  f.reserve(patterns.size());
  for (const auto& p : patterns) f.push_back(is_subsequence(p.pattern, seq) ? 1.0 : 0.0);
  return f;
}

/// Bag of words followed by pattern indicators.
inline std::vector<double> bow_sp_features(const std::vector<TokenId>& seq, std::size_t vocab_size,
                                           const std::vector<SequentialPattern>& patterns) {
  auto f = bag_of_words(seq, vocab_size);
  auto sp = pattern_features(seq, patterns);
  f.insert(f.end(), sp.begin(), sp.end());
  return f;
}

inline nlohmann::json to_json(const std::vector<SequentialPattern>& patterns, const Vocabulary& vocab) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : patterns) out.push_back({{"pattern", decode(p.pattern, vocab)}, {"support", p.support}});
  return out;
}

// ---------------------------------------------------------------------------
// Isolation forest

/// Average unsuccessful-search path length in a BST of m points:
/// c(m) = 2 H(m-1) - 2(m-1)/m with H the harmonic number.
inline double average_path_length(std::size_t m) {
  if (m <= 1) return 0.0;
  double h = 0.0;
  for (std::size_t i = 1; i <= m - 1; ++i) h += 1.0 / static_cast<double>(i);
  const double md = static_cast<double>(m);
  return 2.0 * h - 2.0 * (md - 1.0) / md;
}

class IsolationForest {
public:
  struct Node {
    int feature = -1;  // -1 marks an external node
    double split = 0.0;
    int left = -1, right = -1;
    std::size_t size = 0;
  };
  using Tree = std::vector<Node>;

  static IsolationForest fit(const std::vector<std::vector<double>>& x, std::size_t tree_count = 100,
                             std::size_t subsample = 256, std::uint64_t seed = 0) {
    if (x.empty()) throw InvalidArgument("isolation forest needs data");
    if (tree_count < 1) throw InvalidArgument("isolation forest needs at least one tree");
    IsolationForest f;
    f.subsample_ = std::min(subsample, x.size());
    f.height_limit_ = static_cast<std::size_t>(std::ceil(std::log2(std::max<std::size_t>(f.subsample_, 2))));
    for (std::size_t t = 0; t < tree_count; ++t) {
      Rng rng(seed + t);
      std::vector<std::size_t> idx(x.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t i = 0; i < f.subsample_; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
      idx.resize(f.subsample_);
      Tree tree;
      f.grow(tree, x, idx, 0, rng);
      f.trees_.push_back(std::move(tree));
    }
    return f;
  }

  double path_length(const std::vector<double>& point, const Tree& tree) const {
    int n = 0;
    double depth = 0.0;
    while (tree[static_cast<std::size_t>(n)].feature >= 0) {
      const auto& node = tree[static_cast<std::size_t>(n)];
      n = point[static_cast<std::size_t>(node.feature)] < node.split ? node.left : node.right;
      depth += 1.0;
    }
    return depth + average_path_length(tree[static_cast<std::size_t>(n)].size);
  }

  double expected_path_length(const std::vector<double>& point) const {
    double s = 0.0;
    for (const auto& t : trees_) s += path_length(point, t);
    return s / static_cast<double>(trees_.size());
  }

  /// s(x) = 2^(-E[h(x)] / c(psi)), in (0, 1].
  double score(const std::vector<double>& point) const {
    const double c = average_path_length(subsample_);
    if (c <= 0.0) return 0.5;
    return std::pow(2.0, -expected_path_length(point) / c);
  }

  std::size_t subsample() const noexcept { return subsample_; }
  std::size_t height_limit() const noexcept { return height_limit_; }
  const std::vector<Tree>& trees() const noexcept { return trees_; }

  /// Depth of the deepest external node of `tree`.
  static std::size_t tree_height(const Tree& tree, int node = 0) {
    const auto& n = tree[static_cast<std::size_t>(node)];
    if (n.feature < 0) return 0;
    return 1 + std::max(tree_height(tree, n.left), tree_height(tree, n.right));
  }

private:
  int grow(Tree& tree, const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& idx,
           std::size_t depth, Rng& rng) {
    const int id = static_cast<int>(tree.size());
    tree.push_back({-1, 0.0, -1, -1, idx.size()});
    if (depth >= height_limit_ || idx.size() <= 1) return id;
    // Candidate features: those not constant over this node's points.
    std::vector<std::size_t> candidates;
    const std::size_t dims = x[idx[0]].size();
    for (std::size_t f = 0; f < dims; ++f) {
      double lo = x[idx[0]][f], hi = lo;
      for (auto i : idx) lo = std::min(lo, x[i][f]), hi = std::max(hi, x[i][f]);
      if (hi > lo) candidates.push_back(f);
    }
    if (candidates.empty()) return id;
    const std::size_t feature = candidates[uniform_index(rng, candidates.size())];
    double lo = x[idx[0]][feature], hi = lo;
    for (auto i : idx) lo = std::min(lo, x[i][feature]), hi = std::max(hi, x[i][feature]);
    double split = uniform_range(rng, lo, hi);
    if (split <= lo) split = std::nextafter(lo, hi);
    std::vector<std::size_t> left, right;
    for (auto i : idx) (x[i][feature] < split ? left : right).push_back(i);
    tree[static_cast<std::size_t>(id)].feature = static_cast<int>(feature);
    tree[static_cast<std::size_t>(id)].split = split;
    const int l = grow(tree, x, left, depth + 1, rng);
    const int r = grow(tree, x, right, depth + 1, rng);
    tree[static_cast<std::size_t>(id)].left = l;
    tree[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  std::vector<Tree> trees_;
  std::size_t subsample_ = 0;
  std::size_t height_limit_ = 0;
};

}  // namespace seqnd
