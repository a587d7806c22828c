#pragma once

// Informed clusters (groups of ensemble topics), cluster inference, corpus
// partitioning, and the automatic baselines: k-means with silhouette-based
// model selection and single-run LDA argmax clustering.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqnd/common.hpp"
#include "seqnd/corpus.hpp"
#include "seqnd/lda.hpp"

namespace seqnd {

struct ClusterDefinition {
  std::string name;
  std::size_t k = 0;
  std::vector<std::size_t> assignment;  // global topic id -> cluster index

  /// Topics of each cluster, ascending.
  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(k);
    for (std::size_t t = 0; t < assignment.size(); ++t) out.at(assignment[t]).push_back(t);
    return out;
  }

  /// Every topic of a set with `topic_count` topics mapped exactly once into
  /// [0,k), and every cluster non-empty.
  void validate(std::size_t topic_count) const {
    if (k < 1) throw InvalidArgument("cluster definition needs k >= 1");
    if (assignment.size() != topic_count) {
      std::vector<std::size_t> missing;
      for (std::size_t t = assignment.size(); t < topic_count; ++t) missing.push_back(t);
      throw IncompleteDefinition("cluster definition covers " + std::to_string(assignment.size()) + " of " +
                                     std::to_string(topic_count) + " topics",
                                 missing);
    }
    std::vector<std::size_t> sizes(k, 0);
    for (auto c : assignment) {
      if (c >= k) throw InvalidArgument("cluster index " + std::to_string(c) + " outside [0," + std::to_string(k) + ")");
      ++sizes[c];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (sizes[c] == 0) throw IncompleteDefinition("cluster " + std::to_string(c) + " has no topics", {});
  }

  /// One cluster per topic.
  static ClusterDefinition identity(std::size_t topic_count, std::string name = "identity") {
    ClusterDefinition d{std::move(name), topic_count, {}};
    for (std::size_t t = 0; t < topic_count; ++t) d.assignment.push_back(t);
    return d;
  }

  /// Everything in one cluster.
  static ClusterDefinition single(std::size_t topic_count, std::string name = "global") {
    return {std::move(name), 1, std::vector<std::size_t>(topic_count, 0)};
  }
};

inline nlohmann::json to_json(const ClusterDefinition& d) {
  nlohmann::json a = nlohmann::json::array();
  for (std::size_t t = 0; t < d.assignment.size(); ++t) a.push_back({{"topic_id", t}, {"cluster", d.assignment[t]}});
  return {{"name", d.name}, {"k", d.k}, {"assignment", a}};
}

/// Parses and validates against a set of `topic_count` topics. Missing or
/// duplicated topic ids raise IncompleteDefinition listing the missing ids.
inline ClusterDefinition cluster_definition_from_json(const nlohmann::json& j, std::size_t topic_count) {
  ClusterDefinition d;
  d.name = j.value("name", std::string("unnamed"));
  d.k = j.at("k").get<std::size_t>();
  std::vector<std::optional<std::size_t>> slots(topic_count);
  for (const auto& e : j.at("assignment")) {
    auto t = e.at("topic_id").get<std::size_t>();
    auto c = e.at("cluster").get<std::size_t>();
    if (t >= topic_count) throw InvalidArgument("unknown topic id " + std::to_string(t));
    if (slots[t]) throw InvalidArgument("topic id " + std::to_string(t) + " assigned twice");
    slots[t] = c;
  }
  std::vector<std::size_t> missing;
  for (std::size_t t = 0; t < topic_count; ++t)
    if (!slots[t]) missing.push_back(t);
  if (!missing.empty()) {
    std::string msg = "cluster definition misses topic ids:";
    for (auto t : missing) msg += " " + std::to_string(t);
    throw IncompleteDefinition(msg, missing);
  }
  for (const auto& s : slots) d.assignment.push_back(*s);
  d.validate(topic_count);
  return d;
}

struct ClusterAssignment {
  std::size_t cluster = 0;
  std::vector<double> scores;  // mean topic probability per cluster
};

/// Cluster whose topics have the largest mean probability; ties go to the
/// lowest index.
inline ClusterAssignment assign_cluster(const std::vector<double>& topic_probs, const ClusterDefinition& def) {
  if (topic_probs.size() != def.assignment.size())
    throw InvalidArgument("topic probability vector does not match cluster definition");
  std::vector<double> sum(def.k, 0.0);
  std::vector<std::size_t> count(def.k, 0);
  for (std::size_t t = 0; t < topic_probs.size(); ++t) {
    sum[def.assignment[t]] += topic_probs[t];
    ++count[def.assignment[t]];
  }
  ClusterAssignment out;
  out.scores.resize(def.k);
  for (std::size_t c = 0; c < def.k; ++c) {
    out.scores[c] = count[c] ? sum[c] / static_cast<double>(count[c]) : -std::numeric_limits<double>::infinity();
    if (out.scores[c] > out.scores[out.cluster]) out.cluster = c;
  }
  return out;
}

struct FoldInConfig {
  std::size_t iterations = 100;
  std::uint64_t seed = 0;
};

inline ClusterAssignment assign_cluster(const std::vector<TokenId>& tokens, const TopicSet& ts,
                                        const ClusterDefinition& def, const FoldInConfig& cfg) {
  if (def.k == 1) return {0, {1.0}};
  return assign_cluster(fold_in_topicset(tokens, ts, cfg.iterations, cfg.seed), def);
}

struct Partition {
  std::vector<std::vector<std::string>> subsets;   // sequence ids per cluster
  std::vector<std::vector<std::size_t>> indices;   // corpus positions per cluster

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& s : subsets) n += s.size();
    return n;
  }
};

/// Training sequences are routed by their stored sequence-topic rows.
inline Partition partition_corpus(const Corpus& corpus, const TopicSet& ts, const ClusterDefinition& def) {
  def.validate(ts.size());
  if (ts.sequence_topic_matrix.size() != corpus.size())
    throw InvalidArgument("topic set was fitted on a corpus of different size");
  Partition p;
  p.subsets.resize(def.k);
  p.indices.resize(def.k);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (ts.sequence_ids[i] != corpus.sequences[i].id)
      throw InvalidArgument("topic set sequence order differs from corpus at '" + corpus.sequences[i].id + "'");
    std::size_t c = def.k == 1 ? 0 : assign_cluster(ts.sequence_topic_matrix[i], def).cluster;
    p.subsets[c].push_back(corpus.sequences[i].id);
    p.indices[c].push_back(i);
  }
  if (p.total() != corpus.size()) throw Error("partition does not cover the corpus");
  return p;
}

inline std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Single-run LDA clustering: the dominant topic.
inline std::size_t lda_cluster_assign(const std::vector<double>& theta) { return argmax_lowest(theta); }

inline std::size_t lda_cluster_assign(const std::vector<TokenId>& tokens, const LdaRun& run,
                                      const FoldInConfig& cfg) {
  return argmax_lowest(fold_in(tokens, run, cfg.iterations, cfg.seed));
}

// ---------------------------------------------------------------------------
// k-means

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  return std::sqrt(squared_distance(a, b));
}

struct KMeansResult {
  std::vector<std::size_t> labels;
  Matrix centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after every assignment step
  std::size_t iterations = 0;
  bool converged = false;
};

/// Lloyd iterations from k-means++ seeding. A cluster that empties is
/// re-seeded at the point farthest from its current centroid.
inline KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iters = 100) {
  const std::size_t n = x.size();
  if (k < 1 || k > n) throw InvalidArgument("k-means requires 1 <= k <= n");
  Rng rng(seed);
  KMeansResult r;
  r.centroids.push_back(x[uniform_index(rng, n)]);
  std::vector<double> d2(n);
  while (r.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : r.centroids) best = std::min(best, squared_distance(x[i], c));
      d2[i] = best;
      total += best;
    }
    // All remaining points coincide with centroids: take the next unused index.
    std::size_t pick = total > 0.0 ? sample_discrete(rng, d2) : r.centroids.size();
    r.centroids.push_back(x[pick]);
  }

  r.labels.assign(n, 0);
  auto assign = [&] {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        double d = squared_distance(x[i], r.centroids[c]);
        if (d < best) {
          best = d;
          r.labels[i] = c;
        }
      }
      inertia += best;
    }
    return inertia;
  };

  r.inertia = assign();
  r.inertia_history.push_back(r.inertia);
  for (r.iterations = 0; r.iterations < max_iters; ++r.iterations) {
    Matrix next(k, std::vector<double>(x[0].size(), 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[r.labels[i]];
      for (std::size_t j = 0; j < x[i].size(); ++j) next[r.labels[i]][j] += x[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] == 0) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          double d = squared_distance(x[i], r.centroids[r.labels[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        next[c] = x[far];
      } else {
        for (double& v : next[c]) v /= static_cast<double>(count[c]);
      }
    }
    r.centroids = std::move(next);
    auto prev = r.labels;
    r.inertia = assign();
    r.inertia_history.push_back(r.inertia);
    if (r.labels == prev) {
      r.converged = true;
      ++r.iterations;
      break;
    }
  }
  return r;
}

/// Mean silhouette with Euclidean distances. Points in singleton clusters
/// score 0.
inline double silhouette_score(const Matrix& x, const std::vector<std::size_t>& labels) {
  const std::size_t n = x.size();
  if (labels.size() != n) throw InvalidArgument("one label per point required");
  std::size_t k = 0;
  for (auto l : labels) k = std::max(k, l + 1);
  std::vector<std::size_t> sizes(k, 0);
  for (auto l : labels) ++sizes[l];
  std::size_t nonempty = 0;
  for (auto s : sizes) nonempty += s > 0;
  if (nonempty < 2) throw InvalidArgument("silhouette needs at least two non-empty clusters");

  double total = 0.0;
  std::vector<double> dist_sum(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dist_sum[labels[j]] += euclidean(x[i], x[j]);
    const std::size_t own = labels[i];
    if (sizes[own] == 1) continue;
    double a = dist_sum[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != own && sizes[c] > 0) b = std::min(b, dist_sum[c] / static_cast<double>(sizes[c]));
    double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

struct KSelection {
  std::size_t k = 0;
  double silhouette = 0.0;
  KMeansResult fit;
  std::vector<std::pair<std::size_t, double>> scores;
};

/// k in [k_min, k_max] maximizing the silhouette of the k-means fit.
inline KSelection select_k_by_silhouette(const Matrix& x, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                                         std::size_t max_iters = 100) {
  if (k_min < 2) k_min = 2;
  k_max = std::min(k_max, x.size() - 1);
  if (k_min > k_max) throw InvalidArgument("no admissible k for silhouette selection");
  KSelection best;
  best.silhouette = -std::numeric_limits<double>::infinity();
  for (std::size_t k = k_min; k <= k_max; ++k) {
    auto fit = kmeans(x, k, seed, max_iters);
    std::size_t distinct = 0;
    std::vector<bool> used(k, false);
    for (auto l : fit.labels)
      if (!used[l]) used[l] = true, ++distinct;
    double s = distinct >= 2 ? silhouette_score(x, fit.labels) : -1.0;
    best.scores.emplace_back(k, s);
    if (s > best.silhouette) {
      best.k = k;
      best.silhouette = s;
      best.fit = std::move(fit);
    }
  }
  return best;
}

}  // namespace seqnd
