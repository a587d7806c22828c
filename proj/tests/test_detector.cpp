#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "seqnd/detector.hpp"
#include "seqnd/evaluation.hpp"
#include "support/oracles.hpp"

using namespace seqnd;

namespace {

std::vector<ScoredLabel> scored(const std::vector<double>& s, const std::vector<bool>& novel) {
  std::vector<ScoredLabel> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({s[i], novel[i]});
  return out;
}

struct Fixture {
  Corpus train;
  Corpus test;
  std::shared_ptr<const TopicSet> topics;
  DetectorConfig cfg;
};

Fixture small_fixture() {
  Fixture f;
  auto gen = make_block_mixture(2, 4, 2, 0.3, 0.3, 3);
  f.train = generate_synthetic_mixture(gen, 60, 0, 5, 10, 4);
  f.test = generate_synthetic_mixture(gen, 10, 10, 5, 10, 5);
  EnsembleSpec spec;
  spec.topic_counts = {2, 3};
  spec.alpha = 0.1;
  spec.iterations = 30;
  spec.burn_in = 10;
  f.topics = std::make_shared<const TopicSet>(run_ensemble(f.train, spec));
  f.cfg.embed_dim = 4;
  f.cfg.hidden_dim = 8;
  f.cfg.train.epochs = 3;
  f.cfg.train.learning_rate = 1e-2;
  f.cfg.train.seed = 17;
  f.cfg.fold_in.iterations = 20;
  return f;
}

// Run-0 topics as clusters; each later topic joins the run-0 topic it
// overlaps most.
ClusterDefinition paired_definition(const TopicSet& ts) {
  const std::size_t k = ts.runs[0].topics;
  ClusterDefinition d{"paired", k, {}};
  for (std::size_t t = 0; t < ts.size(); ++t) {
    if (t < k) {
      d.assignment.push_back(t);
      continue;
    }
    std::size_t best = 0;
    double best_dot = -1.0;
    for (std::size_t c = 0; c < k; ++c) {
      double dot = 0.0;
      for (std::size_t w = 0; w < ts.vocab_size(); ++w) dot += ts.topic_word_matrix[t][w] * ts.topic_word_matrix[c][w];
      if (dot > best_dot) best_dot = dot, best = c;
    }
    d.assignment.push_back(best);
  }
  return d;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST(Auc, WorkedExamples) {
  EXPECT_DOUBLE_EQ(auc(scored({0.9, 0.8, 0.2, 0.1}, {true, true, false, false})), 1.0);
  EXPECT_DOUBLE_EQ(auc(scored({0.9, 0.3, 0.5, 0.1}, {true, true, false, false})), 0.75);
  EXPECT_DOUBLE_EQ(auc(scored({0.5, 0.5, 0.5, 0.5}, {true, true, false, false})), 0.5);
  EXPECT_THROW(auc(scored({0.1, 0.2}, {false, false})), InvalidArgument);
}

TEST(Auc, EqualsPairCountingOnRandomScores) {
  Rng rng(5);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 2 + uniform_index(rng, 499);
    std::vector<double> s(n);
    std::vector<bool> novel(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(uniform_index(rng, 20)) / 4.0;  // coarse grid forces ties
      novel[i] = uniform01(rng) < 0.4;
    }
    novel[0] = true;
    novel[1] = false;
    EXPECT_EQ(auc(scored(s, novel)), oracle::pairwise_auc(s, novel)) << "case " << c;
  }
}

TEST(Roc, StartsAtOriginAndEndsAtOne) {
  auto roc = roc_curve(scored({3, 1, 2, 2}, {true, false, true, false}));
  EXPECT_EQ(roc.front().fpr, 0.0);
  EXPECT_EQ(roc.front().tpr, 0.0);
  EXPECT_TRUE(std::isinf(roc.front().threshold));
  EXPECT_EQ(roc.back().fpr, 1.0);
  EXPECT_EQ(roc.back().tpr, 1.0);
}

TEST(Threshold, YoudenPicksBestSeparation) {
  auto s = scored({0.9, 0.8, 0.7, 0.3, 0.2}, {true, true, false, false, false});
  EXPECT_DOUBLE_EQ(youden_threshold(s), 0.8);
  auto op = operating_point(s, 0.8);
  EXPECT_DOUBLE_EQ(op.sensitivity, 1.0);
  EXPECT_DOUBLE_EQ(op.specificity, 1.0);
  auto r = evaluate(s, {}, "m");
  EXPECT_EQ(r.threshold_policy, "youden-test");
  EXPECT_DOUBLE_EQ(r.auc, 1.0);
}

TEST(Table, Layout) {
  EvalReport a;
  a.method = "IC-LSTM";
  a.auc = 0.934;
  a.sensitivity = 0.9;
  a.specificity = 0.875;
  auto t = format_table({a});
  EXPECT_NE(t.find("Method"), std::string::npos);
  EXPECT_NE(t.find("Sens."), std::string::npos);
  EXPECT_NE(t.find("IC-LSTM  0.93   0.90   0.88"), std::string::npos) << t;
}

TEST(Split, StratifiedAndDisjoint) {
  auto gen = make_block_mixture(2, 3, 1, 1.0, 0.3, 1);
  auto c = generate_synthetic_mixture(gen, 100, 20, 3, 5, 2);
  auto sp = stratified_split(c, 0.7, 0.15, 3);
  EXPECT_EQ(sp.train.size() + sp.validation.size() + sp.test.size(), 120u);
  std::size_t novel_train = 0;
  for (auto i : sp.train) novel_train += c.sequences[i].label == Label::Novel;
  EXPECT_EQ(novel_train, 14u);
}

TEST(Detector, SingleClusterIsBitIdenticalToGlobalModel) {
  auto f = small_fixture();
  auto det = train_detector(f.train, f.topics, ClusterDefinition::single(f.topics->size()), f.cfg);
  auto global = train_global_model(f.train, f.cfg);
  ASSERT_EQ(det.k(), 1u);
  EXPECT_TRUE(det.models[0].weights == global.weights);
  for (const auto& s : f.test.sequences) {
    auto r = det.score(s.tokens);
    EXPECT_EQ(r.cluster, 0u);
    EXPECT_EQ(r.perplexity, perplexity(global, s.tokens));
  }
}

TEST(Detector, ScoreUsesOnlyTheRoutedModel) {
  auto f = small_fixture();
  auto det = train_detector(f.train, f.topics, paired_definition(*f.topics), f.cfg);
  ASSERT_EQ(det.k(), 2u);
  const auto& s = f.test.sequences[0].tokens;
  auto r = det.score(s);
  EXPECT_EQ(r.perplexity, perplexity(det.models[r.cluster], s));
  // Corrupting every other model leaves the score unchanged.
  for (std::size_t c = 0; c < det.k(); ++c)
    if (c != r.cluster) det.models[c].weights.set_zero();
  EXPECT_EQ(det.score(s).perplexity, r.perplexity);
}

TEST(Detector, ClusterSeedsAreOffsetByIndex) {
  auto f = small_fixture();
  auto det = train_detector(f.train, f.topics, paired_definition(*f.topics), f.cfg);
  for (std::size_t c = 0; c < det.k(); ++c) EXPECT_EQ(det.models[c].seed, f.cfg.train.seed + c);
}

TEST(Detector, NovelTrainingDataRejected) {
  auto f = small_fixture();
  f.train.sequences[3].label = Label::Novel;
  EXPECT_THROW(train_detector(f.train, f.topics, ClusterDefinition::single(f.topics->size()), f.cfg),
               InvalidArgument);
}

TEST(Detector, TrainingSequencesScoreBelowPerturbedOnes) {
  auto f = small_fixture();
  f.cfg.train.epochs = 15;
  auto det = train_global_model(f.train, f.cfg);
  auto gen = make_block_mixture(2, 4, 2, 0.3, 0.9, 3);
  auto novel = generate_synthetic_mixture(gen, 0, 60, 5, 10, 8);
  double normal_pp = 0.0, novel_pp = 0.0;
  for (const auto& s : f.train.sequences) normal_pp += perplexity(det, s.tokens);
  for (const auto& s : novel.sequences) novel_pp += perplexity(det, s.tokens);
  EXPECT_LT(normal_pp / 60.0, novel_pp / 60.0);
}

TEST(Detector, KMeansRouterTrainsNonEmptyClusters) {
  auto f = small_fixture();
  auto det = train_kmeans_detector(f.train, f.cfg, 2, 4, 3);
  EXPECT_GE(det.k(), 2u);
  std::size_t total = 0;
  for (auto s : det.cluster_sizes) total += s;
  EXPECT_EQ(total, f.train.size());
  auto r = det.score(f.test.sequences[0].tokens);
  EXPECT_LT(r.cluster, det.k());
}

TEST(Detector, PerClusterReportHasUndefinedAucForOneClassGroups) {
  auto f = small_fixture();
  auto det = train_detector(f.train, f.topics, paired_definition(*f.topics), f.cfg);
  NoveltyDetector global;
  global.config = f.cfg;
  global.router = TopicRouter{f.topics, ClusterDefinition::single(f.topics->size())};
  global.models.push_back(train_global_model(f.train, f.cfg));
  auto rows = per_cluster_report(det, global, f.test);
  std::size_t total = 0;
  for (const auto& r : rows) {
    total += r.size;
    if (r.size == 0) EXPECT_FALSE(r.auc.has_value());
  }
  EXPECT_EQ(total, f.test.size());
}

TEST(Bundle, RoundTripPreservesScores) {
  auto f = small_fixture();
  auto det = train_detector(f.train, f.topics, paired_definition(*f.topics), f.cfg);
  auto dir = temp_dir("seqnd_bundle_rt");
  save_bundle(det, dir.string());
  auto back = load_bundle(dir.string());
  EXPECT_EQ(back.k(), 2u);
  for (const auto& s : f.test.sequences) {
    auto a = det.score(s.tokens), b = back.score(s.tokens);
    EXPECT_EQ(a.cluster, b.cluster);
    EXPECT_EQ(a.perplexity, b.perplexity);
  }
  const auto h = bundle_hash(dir.string());
  save_bundle(back, dir.string());
  EXPECT_EQ(bundle_hash(dir.string()), h);
}

TEST(Bundle, TamperedFileRejected) {
  auto f = small_fixture();
  auto det = train_detector(f.train, f.topics, ClusterDefinition::single(f.topics->size()), f.cfg);
  auto dir = temp_dir("seqnd_bundle_tamper");
  save_bundle(det, dir.string());
  std::ofstream(dir / "cluster_definition.json", std::ios::app) << " ";
  EXPECT_THROW(load_bundle(dir.string()), InvalidArgument);
}

TEST(DetectorConfig, JsonRoundTrip) {
  DetectorConfig c;
  c.embed_dim = 7;
  c.train.learning_rate = 0.003;
  c.fold_in.seed = 99;
  auto back = detector_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(detector_config_from_json({{"train", {{"epochs", 0}}}}), InvalidArgument);
}
