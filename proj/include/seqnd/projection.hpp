#pragma once

// Data behind the topic-exploration views: an exact t-SNE layout of the
// topic-word rows, per-topic word glyphs, and shared-sequence chord counts.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqnd/common.hpp"
#include "seqnd/corpus.hpp"
#include "seqnd/lda.hpp"

namespace seqnd {

struct TsneParams {
  double perplexity = 5.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  std::size_t exaggeration_iters = 250;
  std::size_t momentum_switch = 250;
  std::uint64_t seed = 0;
};

struct TsneResult {
  Matrix coords;  // n x 2
  double kl_initial = 0.0;
  double kl_final = 0.0;
};

inline double squared_distance_2d(const std::vector<double>& a, const std::vector<double>& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

namespace detail {

// Row-conditional affinities with per-row bandwidths matched to log(perplexity).
inline Matrix tsne_affinities(const Matrix& d2, double perplexity) {
  const std::size_t n = d2.size();
  const double target = std::log(perplexity);
  Matrix p(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d2[i][j]);
    for (int step = 0; step < 200; ++step) {
      double sum = 0.0, dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        // Shift by the nearest distance so exp() cannot underflow to all zeros.
        double e = std::exp(-(d2[i][j] - dmin) * beta);
        p[i][j] = e;
        sum += e;
        dot += (d2[i][j] - dmin) * e;
      }
      double h = std::log(sum) + beta * dot / sum;
      for (std::size_t j = 0; j < n; ++j) p[i][j] /= sum;
      if (std::abs(h - target) < 1e-5) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
  }
  return p;
}

inline double tsne_kl(const Matrix& p, const Matrix& y) {
  const std::size_t n = y.size();
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) z += 1.0 / (1.0 + squared_distance_2d(y[i], y[j]));
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double q = std::max(1.0 / (1.0 + squared_distance_2d(y[i], y[j])) / z, 1e-300);
      kl += p[i][j] * std::log(p[i][j] / q);
    }
  return kl;
}

}  // namespace detail

/// Exact t-SNE into two dimensions.
inline TsneResult tsne_project(const Matrix& x, const TsneParams& params) {
  const std::size_t n = x.size();
  TsneResult r;
  if (n == 0) return r;
  if (n == 1) {
    r.coords = {{0.0, 0.0}};
    return r;
  }
  if (!(params.perplexity > 0.0) || params.perplexity >= static_cast<double>(n))
    throw InvalidArgument("t-SNE perplexity must lie in (0, number of points)");

  Matrix d2(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x[i].size(); ++k) {
        double d = x[i][k] - x[j][k];
        s += d * d;
      }
      d2[i][j] = d2[j][i] = s;
    }
  Matrix cond = detail::tsne_affinities(d2, params.perplexity);
  Matrix p(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) p[i][j] = std::max((cond[i][j] + cond[j][i]) / (2.0 * static_cast<double>(n)), 1e-12);

  Rng rng(params.seed);
  Matrix y(n, std::vector<double>(2));
  for (auto& row : y)
    for (double& v : row) {
      // Box-Muller, sd 1e-2
      double u1 = std::max(uniform01(rng), 1e-300), u2 = uniform01(rng);
      v = 1e-2 * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
  r.kl_initial = detail::tsne_kl(p, y);

  Matrix update(n, std::vector<double>(2, 0.0)), gains(n, std::vector<double>(2, 1.0)),
      grad(n, std::vector<double>(2, 0.0));
  Matrix num(n, std::vector<double>(n, 0.0));
  for (std::size_t it = 0; it < params.iterations; ++it) {
    const double exag = it < params.exaggeration_iters ? params.exaggeration : 1.0;
    const double momentum = it < params.momentum_switch ? 0.5 : 0.8;
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        num[i][j] = num[j][i] = 1.0 / (1.0 + squared_distance_2d(y[i], y[j]));
        z += 2.0 * num[i][j];
      }
    for (std::size_t i = 0; i < n; ++i) {
      grad[i][0] = grad[i][1] = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        double m = (exag * p[i][j] - num[i][j] / z) * num[i][j];
        grad[i][0] += 4.0 * m * (y[i][0] - y[j][0]);
        grad[i][1] += 4.0 * m * (y[i][1] - y[j][1]);
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (int d = 0; d < 2; ++d) {
        bool same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
        gains[i][d] = std::max(same_sign ? gains[i][d] * 0.8 : gains[i][d] + 0.2, 0.01);
        update[i][d] = momentum * update[i][d] - params.learning_rate * gains[i][d] * grad[i][d];
        y[i][d] += update[i][d];
      }
    // Keep the layout centered.
    double mx = 0.0, my = 0.0;
    for (const auto& row : y) mx += row[0], my += row[1];
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (auto& row : y) row[0] -= mx, row[1] -= my;
  }
  r.kl_final = detail::tsne_kl(p, y);
  r.coords = std::move(y);
  return r;
}

// ---------------------------------------------------------------------------
// Chord data

/// For every sequence, its top-1 topic within each run (global ids).
inline std::vector<std::vector<std::size_t>> top_topics_per_run(const TopicSet& ts) {
  std::vector<std::vector<std::size_t>> out(ts.sequence_topic_matrix.size());
  for (std::size_t d = 0; d < ts.sequence_topic_matrix.size(); ++d) {
    const auto& row = ts.sequence_topic_matrix[d];
    for (std::size_t r = 0; r < ts.runs.size(); ++r) {
      std::size_t off = ts.run_offset(r), best = off;
      for (std::size_t t = off; t < off + ts.runs[r].topics; ++t)
        if (row[t] > row[best]) best = t;
      out[d].push_back(best);
    }
  }
  return out;
}

/// chord[i][j] counts sequences associated with both topics i and j; a
/// sequence is associated with the top-1 topic of each run. Diagonal is 0.
inline std::vector<std::vector<std::size_t>> chord_matrix(const TopicSet& ts) {
  const std::size_t T = ts.size();
  std::vector<std::vector<std::size_t>> chord(T, std::vector<std::size_t>(T, 0));
  for (const auto& tops : top_topics_per_run(ts))
    for (std::size_t a = 0; a < tops.size(); ++a)
      for (std::size_t b = 0; b < tops.size(); ++b)
        if (a != b) ++chord[tops[a]][tops[b]];
  return chord;
}

/// Number of sequences associated with each topic (arc sizes).
inline std::vector<std::size_t> topic_sizes(const TopicSet& ts) {
  std::vector<std::size_t> sizes(ts.size(), 0);
  for (const auto& tops : top_topics_per_run(ts))
    for (auto t : tops) ++sizes[t];
  return sizes;
}

// ---------------------------------------------------------------------------
// Glyphs and the full projection payload

struct GlyphEntry {
  TokenId word_id = 0;
  std::string word;
  double probability = 0.0;
  std::string word_class;
};

struct TopicProjection {
  Matrix coords;
  std::vector<std::vector<GlyphEntry>> glyphs;
  std::vector<std::vector<std::size_t>> chord;
  std::vector<std::size_t> sizes;
  std::vector<TopicRef> topics;
  std::vector<std::string> dominant_class;  // class with the most probability mass per topic
};

inline std::vector<GlyphEntry> topic_glyph(const std::vector<double>& phi_row, const Vocabulary& vocab,
                                           std::size_t top_words,
                                           const std::map<std::string, std::string>& word_classes) {
  std::vector<TokenId> ids(phi_row.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) { return phi_row[a] > phi_row[b]; });
  std::vector<GlyphEntry> out;
  for (std::size_t i = 0; i < std::min(top_words, ids.size()); ++i) {
    GlyphEntry g;
    g.word_id = ids[i];
    g.word = ids[i] < vocab.size() ? vocab.word(ids[i]) : std::to_string(ids[i]);
    g.probability = phi_row[ids[i]];
    auto it = word_classes.find(g.word);
    g.word_class = it == word_classes.end() ? "unlabeled" : it->second;
    out.push_back(std::move(g));
  }
  return out;
}

inline TopicProjection project_topics(const TopicSet& ts, const Vocabulary& vocab, const TsneParams& tsne,
                                      std::size_t top_words = 10,
                                      const std::map<std::string, std::string>& word_classes = {}) {
  TopicProjection p;
  TsneParams tp = tsne;
  const double n = static_cast<double>(ts.size());
  if (ts.size() > 1 && tp.perplexity >= n) tp.perplexity = std::max(1.0, (n - 1.0) / 3.0);
  p.coords = tsne_project(ts.topic_word_matrix, tp).coords;
  for (const auto& row : ts.topic_word_matrix) {
    p.glyphs.push_back(topic_glyph(row, vocab, top_words, word_classes));
    std::map<std::string, double> mass;
    for (std::size_t w = 0; w < row.size(); ++w) {
      auto it = w < vocab.size() ? word_classes.find(vocab.word(static_cast<TokenId>(w))) : word_classes.end();
      mass[it == word_classes.end() ? "unlabeled" : it->second] += row[w];
    }
    auto best = std::max_element(mass.begin(), mass.end(), [](auto& a, auto& b) { return a.second < b.second; });
    p.dominant_class.push_back(best == mass.end() ? "unlabeled" : best->first);
  }
  p.chord = chord_matrix(ts);
  p.sizes = topic_sizes(ts);
  p.topics = ts.topics;
  return p;
}

inline nlohmann::json to_json(const TopicProjection& p) {
  nlohmann::json topics = nlohmann::json::array();
  for (std::size_t t = 0; t < p.topics.size(); ++t) {
    nlohmann::json glyph = nlohmann::json::array();
    for (const auto& g : p.glyphs[t])
      glyph.push_back({{"word_id", g.word_id}, {"word", g.word}, {"probability", g.probability}, {"class", g.word_class}});
    topics.push_back({{"topic_id", p.topics[t].topic_id},
                      {"run_id", p.topics[t].run_id},
                      {"local_index", p.topics[t].local_index},
                      {"x", p.coords[t][0]},
                      {"y", p.coords[t][1]},
                      {"size", p.sizes[t]},
                      {"dominant_class", p.dominant_class[t]},
                      {"glyph", glyph}});
  }
  return {{"topics", topics}, {"chord", p.chord}};
}

}  // namespace seqnd
