#include <gtest/gtest.h>

#include "seqnd/clustering.hpp"
#include "seqnd/projection.hpp"
#include "support/oracles.hpp"

using namespace seqnd;

namespace {

Matrix random_points(std::size_t n, std::size_t dims, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(n, std::vector<double>(dims));
  for (auto& row : x)
    for (double& v : row) v = uniform_range(rng, -1.0, 1.0);
  return x;
}

// Three hand-made topics over a two-run set: run 0 has topics {0,1}, run 1 has {2}.
TopicSet tiny_topic_set() {
  LdaRun r0, r1;
  r0.run_id = 0;
  r0.topics = 2;
  r0.alpha = 0.1;
  r0.phi = {{0.5, 0.5, 0.0}, {0.0, 0.5, 0.5}};
  r0.theta = {{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}};
  r1.run_id = 1;
  r1.topics = 1;
  r1.alpha = 0.1;
  r1.phi = {{0.3, 0.3, 0.4}};
  r1.theta = {{1.0}, {1.0}, {1.0}};
  return assemble_topic_set({r0, r1}, {"a", "b", "c"});
}

}  // namespace

TEST(ClusterDefinition, JsonRoundTripAndValidation) {
  ClusterDefinition d{"g", 2, {0, 1, 1, 0}};
  auto back = cluster_definition_from_json(to_json(d), 4);
  EXPECT_EQ(back.assignment, d.assignment);
  EXPECT_EQ(back.k, 2u);
  EXPECT_EQ(back.members(), (std::vector<std::vector<std::size_t>>{{0, 3}, {1, 2}}));
}

TEST(ClusterDefinition, MissingTopicIdsListed) {
  nlohmann::json j = {{"name", "x"}, {"k", 2}, {"assignment", {{{"topic_id", 0}, {"cluster", 0}}, {{"topic_id", 2}, {"cluster", 1}}}}};
  try {
    cluster_definition_from_json(j, 5);
    FAIL();
  } catch (const IncompleteDefinition& e) {
    EXPECT_EQ(e.missing(), (std::vector<std::size_t>{1, 3, 4}));
  }
}

TEST(ClusterDefinition, EmptyClusterAndDuplicatesRejected) {
  EXPECT_THROW((ClusterDefinition{"x", 3, {0, 1, 0}}.validate(3)), IncompleteDefinition);
  nlohmann::json dup = {{"k", 1}, {"assignment", {{{"topic_id", 0}, {"cluster", 0}}, {{"topic_id", 0}, {"cluster", 0}}}}};
  EXPECT_THROW(cluster_definition_from_json(dup, 2), InvalidArgument);
}

TEST(AssignCluster, MeanProbabilityArgmax) {
  // Cluster 0 = {0}, cluster 1 = {1, 2}: means 0.4 vs (0.35+0.25)/2 = 0.3.
  ClusterDefinition d{"x", 2, {0, 1, 1}};
  auto a = assign_cluster(std::vector<double>{0.4, 0.35, 0.25}, d);
  EXPECT_EQ(a.cluster, 0u);
  EXPECT_DOUBLE_EQ(a.scores[1], 0.3);
}

TEST(AssignCluster, TiesGoToLowestIndex) {
  ClusterDefinition d{"x", 3, {2, 1, 0}};
  EXPECT_EQ(assign_cluster(std::vector<double>{0.5, 0.5, 0.5}, d).cluster, 0u);
  EXPECT_EQ(argmax_lowest({1.0, 3.0, 3.0}), 1u);
}

TEST(Partition, CoversCorpusAndRespectsDefinition) {
  auto ts = tiny_topic_set();
  Corpus c{Vocabulary({}, 1), {{"a", {0}, Label::Normal}, {"b", {1}, Label::Normal}, {"c", {2}, Label::Normal}}};
  // Topic 0 alone vs topics {1, 2}: a -> 0.9 vs 0.55, b -> 0.2 vs 0.9, c -> 0.6 vs 0.7.
  auto p = partition_corpus(c, ts, ClusterDefinition{"x", 2, {0, 1, 1}});
  EXPECT_EQ(p.subsets[0], (std::vector<std::string>{"a"}));
  EXPECT_EQ(p.subsets[1], (std::vector<std::string>{"b", "c"}));
  auto single = partition_corpus(c, ts, ClusterDefinition::single(3));
  EXPECT_EQ(single.indices[0].size(), 3u);
}

TEST(KMeans, InertiaNonIncreasingOnRandomData) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto x = random_points(20 + s % 30, 1 + s % 4, s);
    auto fit = kmeans(x, 2 + s % 5, s);
    for (std::size_t i = 1; i < fit.inertia_history.size(); ++i)
      ASSERT_LE(fit.inertia_history[i], fit.inertia_history[i - 1]) << "dataset " << s << " step " << i;
  }
}

TEST(KMeans, FindsSeparatedBlobs) {
  Matrix x;
  Rng rng(1);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i) x.push_back({c * 10.0 + uniform01(rng), uniform01(rng)});
  auto sel = select_k_by_silhouette(x, 2, 6, 4);
  EXPECT_EQ(sel.k, 3u);
  for (int c = 0; c < 3; ++c)
    for (int i = 1; i < 10; ++i) EXPECT_EQ(sel.fit.labels[c * 10 + i], sel.fit.labels[c * 10]);
}

TEST(Silhouette, MatchesQuadraticReferenceExactly) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const std::size_t n = 3 + s % 48;
    auto x = random_points(n, 1 + s % 3, 100 + s);
    Rng rng(s);
    std::vector<std::size_t> labels(n);
    const std::size_t k = 2 + s % 4;
    for (auto& l : labels) l = uniform_index(rng, k);
    labels[0] = 0;
    labels[1] = 1;
    EXPECT_EQ(silhouette_score(x, labels), oracle::silhouette(x, labels)) << "case " << s;
  }
}

TEST(Silhouette, NeedsTwoClusters) {
  EXPECT_THROW(silhouette_score({{0.0}, {1.0}}, {0, 0}), InvalidArgument);
}

TEST(Tsne, SeparatesClustersAndLowersKl) {
  Matrix x;
  Rng rng(3);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 8; ++i) x.push_back({c * 20.0 + uniform01(rng), uniform01(rng), uniform01(rng)});
  TsneParams p;
  p.perplexity = 4;
  p.iterations = 500;
  p.seed = 2;
  auto r = tsne_project(x, p);
  EXPECT_LT(r.kl_final, r.kl_initial);
  auto within = squared_distance_2d(r.coords[0], r.coords[1]);
  auto across = squared_distance_2d(r.coords[0], r.coords[8]);
  EXPECT_LT(within, across);
  EXPECT_EQ(tsne_project(x, p).coords, r.coords);
  p.perplexity = 16;
  EXPECT_THROW(tsne_project(x, p), InvalidArgument);
}

TEST(Chord, CountsTopTopicPairsAcrossRuns) {
  auto ts = tiny_topic_set();
  // Top topics: a -> {0, 2}, b -> {1, 2}, c -> {0, 2}.
  auto chord = chord_matrix(ts);
  EXPECT_EQ(chord[0][2], 2u);
  EXPECT_EQ(chord[2][0], 2u);
  EXPECT_EQ(chord[1][2], 1u);
  EXPECT_EQ(chord[0][1], 0u);
  EXPECT_EQ(chord[2][2], 0u);
  EXPECT_EQ(topic_sizes(ts), (std::vector<std::size_t>{2, 1, 3}));
}

TEST(Projection, GlyphsAndJson) {
  auto ts = tiny_topic_set();
  Vocabulary v({}, 1);  // ids 0..2 are the reserved words
  TsneParams p;
  p.iterations = 50;
  auto proj = project_topics(ts, v, p, 2, {{"<s>", "verb"}});
  ASSERT_EQ(proj.glyphs.size(), 3u);
  EXPECT_EQ(proj.glyphs[2][0].word, "</s>");
  EXPECT_DOUBLE_EQ(proj.glyphs[2][0].probability, 0.4);
  EXPECT_EQ(proj.glyphs[0][0].word_class, "unlabeled");
  EXPECT_EQ(proj.glyphs[0][1].word_class, "verb");
  auto j = to_json(proj);
  EXPECT_EQ(j["topics"].size(), 3u);
  EXPECT_EQ(j["topics"][2]["run_id"], 1);
  EXPECT_EQ(j["chord"][0][2], 2);
}
