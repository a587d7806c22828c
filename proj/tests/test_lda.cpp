#include <gtest/gtest.h>

#include <map>

#include "seqnd/lda.hpp"

using namespace seqnd;

namespace {

Corpus random_corpus(std::size_t docs, std::size_t words, std::size_t min_len, std::size_t max_len,
                     std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> vocab;
  for (std::size_t i = 0; i < words; ++i) vocab.push_back("t" + std::to_string(i));
  Corpus c{Vocabulary(vocab, 1), {}};
  for (std::size_t d = 0; d < docs; ++d) {
    LabeledSequence s;
    s.id = "d" + std::to_string(d);
    std::size_t len = min_len + uniform_index(rng, max_len - min_len + 1);
    for (std::size_t i = 0; i < len; ++i)
      s.tokens.push_back(static_cast<TokenId>(Vocabulary::kReserved + uniform_index(rng, words)));
    c.sequences.push_back(std::move(s));
  }
  return c;
}

}  // namespace

TEST(Gibbs, SingleTopicPhiIsSmoothedUnigram) {
  auto c = random_corpus(20, 8, 3, 12, 4);
  const double beta = 0.01;
  LdaParams p;
  p.topics = 1;
  p.beta = beta;
  p.iterations = 5;
  p.burn_in = 0;
  auto run = fit_lda(c, p);
  std::map<TokenId, double> count;
  double n = 0.0;
  for (const auto& s : c.sequences)
    for (TokenId t : s.tokens) count[t] += 1.0, n += 1.0;
  const double V = static_cast<double>(c.vocabulary.size());
  for (std::size_t w = 0; w < c.vocabulary.size(); ++w)
    EXPECT_DOUBLE_EQ(run.phi[0][w], (count[static_cast<TokenId>(w)] + beta) / (n + V * beta));
  for (const auto& row : run.theta) EXPECT_DOUBLE_EQ(row[0], 1.0);
}

TEST(Gibbs, CountsConservedEverySweep) {
  auto c = random_corpus(20, 10, 2, 15, 7);
  GibbsSampler g(token_lists(c), c.vocabulary.size(), 4, 0.5, 0.01, 3);
  EXPECT_TRUE(g.counts_conserved());
  for (int i = 0; i < 50; ++i) {
    g.sweep();
    ASSERT_TRUE(g.counts_conserved()) << "after sweep " << i;
  }
  std::uint64_t total = 0;
  for (std::size_t k = 0; k < 4; ++k) total += g.topic_total(k);
  EXPECT_EQ(total, c.token_count());
}

TEST(Gibbs, RowsAreDistributions) {
  auto c = random_corpus(15, 6, 2, 10, 1);
  LdaParams p;
  p.topics = 3;
  p.iterations = 20;
  p.burn_in = 10;
  auto run = fit_lda(c, p);
  for (const auto& row : run.phi) EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
  for (const auto& row : run.theta) EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(run.alpha, 50.0 / 3.0);
}

TEST(Gibbs, TooManyTopicsRejected) {
  Corpus c{Vocabulary({"a"}, 1), {{"x", {3, 3}, Label::Normal}}};
  LdaParams p;
  p.topics = 3;
  EXPECT_THROW(fit_lda(c, p), InvalidArgument);
}

TEST(Gibbs, SeparatesDisjointVocabularies) {
  // Two groups of documents with disjoint words: two topics recover them.
  Corpus c{Vocabulary({"a", "b", "c", "x", "y", "z"}, 1), {}};
  Rng rng(2);
  for (int d = 0; d < 40; ++d) {
    LabeledSequence s;
    s.id = "d" + std::to_string(d);
    TokenId base = d % 2 ? 3 : 6;
    for (int i = 0; i < 12; ++i) s.tokens.push_back(base + static_cast<TokenId>(uniform_index(rng, 3)));
    c.sequences.push_back(s);
  }
  LdaParams p;
  p.topics = 2;
  p.alpha = 0.1;
  p.iterations = 100;
  p.burn_in = 50;
  auto run = fit_lda(c, p);
  for (std::size_t k = 0; k < 2; ++k) {
    double left = run.phi[k][3] + run.phi[k][4] + run.phi[k][5];
    EXPECT_TRUE(left > 0.95 || left < 0.05);
  }
  for (int d = 0; d < 40; ++d) EXPECT_GT(*std::max_element(run.theta[d].begin(), run.theta[d].end()), 0.9);
}

TEST(FoldIn, DeterministicAndNormalized) {
  auto c = random_corpus(20, 8, 5, 10, 9);
  LdaParams p;
  p.topics = 3;
  p.iterations = 30;
  p.burn_in = 10;
  auto run = fit_lda(c, p);
  auto a = fold_in(c.sequences[0].tokens, run, 50, 4);
  EXPECT_EQ(a, fold_in(c.sequences[0].tokens, run, 50, 4));
  EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-12);
  p.topics = 1;
  EXPECT_EQ(fold_in(c.sequences[0].tokens, fit_lda(c, p), 50, 4), (std::vector<double>{1.0}));
}

TEST(Ensemble, GlobalTopicIdsAndMatrices) {
  auto c = random_corpus(25, 8, 3, 9, 5);
  EnsembleSpec spec;
  spec.topic_counts = {2, 3};
  spec.iterations = 10;
  spec.burn_in = 5;
  auto ts = run_ensemble(c, spec);
  ASSERT_EQ(ts.size(), 5u);
  EXPECT_EQ(ts.topics[3].run_id, 1u);
  EXPECT_EQ(ts.topics[3].local_index, 1u);
  EXPECT_EQ(ts.run_offset(1), 2u);
  EXPECT_EQ(ts.topic_word_matrix[3], ts.runs[1].phi[1]);
  EXPECT_EQ(ts.sequence_topic_matrix[7][4], ts.runs[1].theta[7][2]);
  EXPECT_EQ(ts.runs[1].seed, spec.seed + 1);
}

TEST(Ensemble, RandomTopicCountsWithinRange) {
  EnsembleSpec spec;
  spec.num_runs = 20;
  spec.k_min = 2;
  spec.k_max = 10;
  spec.k_seed = 3;
  auto ks = spec.resolve_topic_counts();
  ASSERT_EQ(ks.size(), 20u);
  for (auto k : ks) {
    EXPECT_GE(k, 2u);
    EXPECT_LE(k, 10u);
  }
  EXPECT_EQ(ks, spec.resolve_topic_counts());
}

TEST(Ensemble, JsonRoundTripIsExact) {
  auto c = random_corpus(12, 6, 3, 8, 8);
  EnsembleSpec spec;
  spec.topic_counts = {2, 4};
  spec.iterations = 10;
  spec.burn_in = 5;
  auto ts = run_ensemble(c, spec);
  auto back = topic_set_from_json(nlohmann::json::parse(to_json(ts).dump()));
  EXPECT_EQ(back.topic_word_matrix, ts.topic_word_matrix);
  EXPECT_EQ(back.sequence_topic_matrix, ts.sequence_topic_matrix);
  EXPECT_EQ(back.runs[1].phi, ts.runs[1].phi);
  EXPECT_EQ(fold_in_topicset(c.sequences[0].tokens, back, 20, 1), fold_in_topicset(c.sequences[0].tokens, ts, 20, 1));
}
