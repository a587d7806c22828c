#pragma once

// Latent Dirichlet allocation by collapsed Gibbs sampling, topic ensembles
// over several topic counts, and fold-in of unseen sequences.
//
//   p(z = k | rest) ∝ (n_dk + alpha) * (n_kw + beta) / (n_k + V*beta)
//   phi[k][w]   = (n_kw + beta)  / (n_k + V*beta)
//   theta[d][k] = (n_dk + alpha) / (|d| + K*alpha)

#include <cassert>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqnd/common.hpp"
#include "seqnd/corpus.hpp"

namespace seqnd {

using Matrix = std::vector<std::vector<double>>;

struct LdaParams {
  std::size_t topics = 10;
  double alpha = -1.0;  // <= 0 selects 50/K
  double beta = 0.01;
  std::size_t iterations = 200;
  std::size_t burn_in = 100;
  std::uint64_t seed = 0;

  double effective_alpha() const { return alpha > 0.0 ? alpha : 50.0 / static_cast<double>(topics); }
};

struct LdaRun {
  std::size_t run_id = 0;
  std::size_t topics = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  Matrix phi;    // topics x |V|
  Matrix theta;  // n x topics
  std::vector<std::vector<std::uint32_t>> assignments;  // empty when loaded from JSON
};

/// Collapsed Gibbs state over a fixed document set.
class GibbsSampler {
public:
  GibbsSampler(std::vector<std::vector<TokenId>> docs, std::size_t vocab_size, std::size_t topics, double alpha,
               double beta, std::uint64_t seed)
      : docs_(std::move(docs)),
        vocab_size_(vocab_size),
        topics_(topics),
        alpha_(alpha),
        beta_(beta),
        rng_(seed),
        doc_topic_(docs_.size() * topics, 0),
        topic_word_(topics * vocab_size, 0),
        topic_total_(topics, 0),
        weights_(topics) {
    if (topics < 1) throw InvalidArgument("LDA needs at least one topic");
    if (docs_.empty()) throw InvalidArgument("LDA needs a non-empty corpus");
    z_.resize(docs_.size());
    for (std::size_t d = 0; d < docs_.size(); ++d) {
      z_[d].resize(docs_[d].size());
      for (std::size_t i = 0; i < docs_[d].size(); ++i) {
        TokenId w = docs_[d][i];
        if (w >= vocab_size_) throw InvalidArgument("token id beyond vocabulary in LDA input");
        auto k = static_cast<std::uint32_t>(uniform_index(rng_, topics_));
        z_[d][i] = k;
        increment(d, k, w, +1);
        ++tokens_;
      }
    }
    if (topics_ > tokens_)
      throw InvalidArgument("topic count " + std::to_string(topics_) + " exceeds token count " +
                            std::to_string(tokens_));
  }

  void sweep() {
    const double vbeta = static_cast<double>(vocab_size_) * beta_;
    for (std::size_t d = 0; d < docs_.size(); ++d) {
      for (std::size_t i = 0; i < docs_[d].size(); ++i) {
        const TokenId w = docs_[d][i];
        increment(d, z_[d][i], w, -1);
        for (std::size_t k = 0; k < topics_; ++k)
          weights_[k] = (doc_topic_[d * topics_ + k] + alpha_) * (topic_word_[k * vocab_size_ + w] + beta_) /
                        (topic_total_[k] + vbeta);
        auto k = static_cast<std::uint32_t>(sample_discrete(rng_, weights_));
        z_[d][i] = k;
        increment(d, k, w, +1);
      }
    }
    assert(counts_conserved());
  }

  /// Sum of topic-word counts equals the corpus token count, and per-topic
  /// totals and per-document totals agree with it.
  bool counts_conserved() const {
    std::uint64_t tw = 0, tt = 0, dt = 0;
    for (auto c : topic_word_) tw += c;
    for (auto c : topic_total_) tt += c;
    for (auto c : doc_topic_) dt += c;
    return tw == tokens_ && tt == tokens_ && dt == tokens_;
  }

  std::size_t token_count() const noexcept { return tokens_; }
  std::size_t topics() const noexcept { return topics_; }
  std::uint32_t topic_word_count(std::size_t k, TokenId w) const { return topic_word_[k * vocab_size_ + w]; }
  std::uint32_t topic_total(std::size_t k) const { return topic_total_[k]; }
  const std::vector<std::vector<std::uint32_t>>& assignments() const noexcept { return z_; }

  Matrix phi() const {
    Matrix out(topics_, std::vector<double>(vocab_size_));
    const double vbeta = static_cast<double>(vocab_size_) * beta_;
    for (std::size_t k = 0; k < topics_; ++k)
      for (std::size_t w = 0; w < vocab_size_; ++w)
        out[k][w] = (topic_word_[k * vocab_size_ + w] + beta_) / (topic_total_[k] + vbeta);
    return out;
  }

  Matrix theta() const {
    Matrix out(docs_.size(), std::vector<double>(topics_));
    const double kalpha = static_cast<double>(topics_) * alpha_;
    for (std::size_t d = 0; d < docs_.size(); ++d)
      for (std::size_t k = 0; k < topics_; ++k)
        out[d][k] = (doc_topic_[d * topics_ + k] + alpha_) / (static_cast<double>(docs_[d].size()) + kalpha);
    return out;
  }

private:
  void increment(std::size_t d, std::uint32_t k, TokenId w, int delta) {
    doc_topic_[d * topics_ + k] += delta;
    topic_word_[k * vocab_size_ + w] += delta;
    topic_total_[k] += delta;
  }

  std::vector<std::vector<TokenId>> docs_;
  std::size_t vocab_size_;
  std::size_t topics_;
  double alpha_;
  double beta_;
  Rng rng_;
  std::vector<std::uint32_t> doc_topic_;
  std::vector<std::uint32_t> topic_word_;
  std::vector<std::uint32_t> topic_total_;
  std::vector<std::vector<std::uint32_t>> z_;
  std::vector<double> weights_;
  std::uint64_t tokens_ = 0;
};

inline std::vector<std::vector<TokenId>> token_lists(const Corpus& corpus) {
  std::vector<std::vector<TokenId>> docs;
  docs.reserve(corpus.size());
  for (const auto& s : corpus.sequences) docs.push_back(s.tokens);
  return docs;
}

/// Point estimates come from the final sample; burn_in only bounds
/// `iterations` from below.
inline LdaRun fit_lda(const Corpus& corpus, const LdaParams& p, std::size_t run_id = 0) {
  if (p.burn_in > p.iterations) throw InvalidArgument("burn-in exceeds iteration count");
  GibbsSampler sampler(token_lists(corpus), corpus.vocabulary.size(), p.topics, p.effective_alpha(), p.beta,
                       p.seed);
  for (std::size_t it = 0; it < p.iterations; ++it) sampler.sweep();
  LdaRun run;
  run.run_id = run_id;
  run.topics = p.topics;
  run.alpha = p.effective_alpha();
  run.beta = p.beta;
  run.seed = p.seed;
  run.iterations = p.iterations;
  run.phi = sampler.phi();
  run.theta = sampler.theta();
  run.assignments = sampler.assignments();
  return run;
}

/// Topic proportions of an unseen sequence with the topic-word distribution
/// held fixed.
inline std::vector<double> fold_in(const std::vector<TokenId>& tokens, const LdaRun& run,
                                   std::size_t iterations = 100, std::uint64_t seed = 0) {
  const std::size_t K = run.topics;
  std::vector<double> nk(K, 0.0);
  if (K == 1) return {1.0};
  Rng rng(seed);
  std::vector<std::uint32_t> z(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= run.phi[0].size()) throw InvalidArgument("token id beyond topic vocabulary");
    z[i] = static_cast<std::uint32_t>(uniform_index(rng, K));
    nk[z[i]] += 1.0;
  }
  std::vector<double> w(K);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      nk[z[i]] -= 1.0;
      for (std::size_t k = 0; k < K; ++k) w[k] = (nk[k] + run.alpha) * run.phi[k][tokens[i]];
      z[i] = static_cast<std::uint32_t>(sample_discrete(rng, w));
      nk[z[i]] += 1.0;
    }
  }
  const double denom = static_cast<double>(tokens.size()) + static_cast<double>(K) * run.alpha;
  std::vector<double> theta(K);
  for (std::size_t k = 0; k < K; ++k) theta[k] = (nk[k] + run.alpha) / denom;
  return theta;
}

// ---------------------------------------------------------------------------
// Ensembles

struct TopicRef {
  std::size_t topic_id = 0;  // global
  std::size_t run_id = 0;
  std::size_t local_index = 0;
};

struct TopicSet {
  std::vector<LdaRun> runs;
  std::vector<TopicRef> topics;
  Matrix topic_word_matrix;      // |T| x |V|
  Matrix sequence_topic_matrix;  // n x |T|
  std::vector<std::string> sequence_ids;

  std::size_t size() const noexcept { return topics.size(); }
  std::size_t vocab_size() const { return topic_word_matrix.empty() ? 0 : topic_word_matrix[0].size(); }

  /// Global id of the first topic of run r.
  std::size_t run_offset(std::size_t r) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += runs[i].topics;
    return off;
  }
};

/// Topics are ordered by run, then by topic index within the run.
inline TopicSet assemble_topic_set(std::vector<LdaRun> runs, std::vector<std::string> sequence_ids) {
  TopicSet ts;
  ts.runs = std::move(runs);
  ts.sequence_ids = std::move(sequence_ids);
  const std::size_t n = ts.sequence_ids.size();
  ts.sequence_topic_matrix.assign(n, {});
  for (std::size_t r = 0; r < ts.runs.size(); ++r) {
    const auto& run = ts.runs[r];
    if (run.theta.size() != n) throw InvalidArgument("run " + std::to_string(r) + " covers a different corpus");
    for (std::size_t k = 0; k < run.topics; ++k) {
      ts.topics.push_back({ts.topics.size(), r, k});
      ts.topic_word_matrix.push_back(run.phi[k]);
    }
    for (std::size_t d = 0; d < n; ++d)
      ts.sequence_topic_matrix[d].insert(ts.sequence_topic_matrix[d].end(), run.theta[d].begin(),
                                         run.theta[d].end());
  }
  return ts;
}

struct EnsembleSpec {
  std::vector<std::size_t> topic_counts;  // explicit K per run; if empty, draw randomly
  std::size_t num_runs = 0;
  std::size_t k_min = 2;
  std::size_t k_max = 10;
  std::uint64_t k_seed = 0;

  double alpha = -1.0;
  double beta = 0.01;
  std::size_t iterations = 200;
  std::size_t burn_in = 100;
  std::uint64_t seed = 0;  // run r uses seed + r

  /// K for each run; random mode draws uniformly from [k_min, k_max].
  std::vector<std::size_t> resolve_topic_counts() const {
    if (!topic_counts.empty()) return topic_counts;
    if (num_runs == 0) throw InvalidArgument("ensemble needs at least one run");
    if (k_min < 1 || k_min > k_max) throw InvalidArgument("invalid topic count range");
    Rng rng(k_seed);
    std::vector<std::size_t> ks;
    for (std::size_t i = 0; i < num_runs; ++i) ks.push_back(k_min + uniform_index(rng, k_max - k_min + 1));
    return ks;
  }
};

inline TopicSet run_ensemble(const Corpus& corpus, const EnsembleSpec& spec) {
  auto ks = spec.resolve_topic_counts();
  std::vector<LdaRun> runs;
  for (std::size_t r = 0; r < ks.size(); ++r) {
    LdaParams p;
    p.topics = ks[r];
    p.alpha = spec.alpha;
    p.beta = spec.beta;
    p.iterations = spec.iterations;
    p.burn_in = spec.burn_in;
    p.seed = spec.seed + r;
    try {
      runs.push_back(fit_lda(corpus, p, r));
    } catch (const Error& e) {
      throw InvalidArgument("LDA run " + std::to_string(r) + ": " + e.what());
    }
  }
  std::vector<std::string> ids;
  for (const auto& s : corpus.sequences) ids.push_back(s.id);
  return assemble_topic_set(std::move(runs), std::move(ids));
}

/// Fold-in against every run (run r seeded with seed + r), concatenated in
/// global topic order.
inline std::vector<double> fold_in_topicset(const std::vector<TokenId>& tokens, const TopicSet& ts,
                                            std::size_t iterations = 100, std::uint64_t seed = 0) {
  std::vector<double> out;
  out.reserve(ts.size());
  for (const auto& run : ts.runs) {
    auto theta = fold_in(tokens, run, iterations, seed + run.run_id);
    out.insert(out.end(), theta.begin(), theta.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const TopicSet& ts) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : ts.runs)
    runs.push_back({{"run_id", r.run_id},
                    {"topics", r.topics},
                    {"alpha", r.alpha},
                    {"beta", r.beta},
                    {"seed", r.seed},
                    {"iterations", r.iterations}});
  nlohmann::json topics = nlohmann::json::array();
  for (const auto& t : ts.topics)
    topics.push_back({{"topic_id", t.topic_id}, {"run_id", t.run_id}, {"local_index", t.local_index}});
  return {{"runs", runs},
          {"topics", topics},
          {"sequence_ids", ts.sequence_ids},
          {"topic_word_matrix", ts.topic_word_matrix},
          {"sequence_topic_matrix", ts.sequence_topic_matrix}};
}

inline TopicSet topic_set_from_json(const nlohmann::json& j) {
  auto twm = j.at("topic_word_matrix").get<Matrix>();
  auto stm = j.at("sequence_topic_matrix").get<Matrix>();
  std::vector<LdaRun> runs;
  std::size_t offset = 0;
  for (const auto& jr : j.at("runs")) {
    LdaRun r;
    r.run_id = jr.at("run_id").get<std::size_t>();
    r.topics = jr.at("topics").get<std::size_t>();
    r.alpha = jr.at("alpha").get<double>();
    r.beta = jr.at("beta").get<double>();
    r.seed = jr.at("seed").get<std::uint64_t>();
    r.iterations = jr.at("iterations").get<std::size_t>();
    if (offset + r.topics > twm.size()) throw InvalidArgument("topic set JSON: matrix smaller than runs declare");
    r.phi.assign(twm.begin() + static_cast<std::ptrdiff_t>(offset),
                 twm.begin() + static_cast<std::ptrdiff_t>(offset + r.topics));
    for (const auto& row : stm)
      r.theta.emplace_back(row.begin() + static_cast<std::ptrdiff_t>(offset),
                           row.begin() + static_cast<std::ptrdiff_t>(offset + r.topics));
    offset += r.topics;
    runs.push_back(std::move(r));
  }
  auto ts = assemble_topic_set(std::move(runs), j.at("sequence_ids").get<std::vector<std::string>>());
  if (ts.topic_word_matrix != twm || ts.sequence_topic_matrix != stm)
    throw InvalidArgument("topic set JSON: matrices inconsistent with runs");
  return ts;
}

}  // namespace seqnd
