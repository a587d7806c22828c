#pragma once

// Decompose-then-model novelty detection: sequences are routed to a cluster,
// one LSTM language model is trained per cluster on that cluster's normal
// data, and a new sequence is scored by the perplexity of its cluster's
// model alone. A single cluster is the global-model baseline.

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "seqnd/clustering.hpp"
#include "seqnd/common.hpp"
#include "seqnd/corpus.hpp"
#include "seqnd/evaluation.hpp"
#include "seqnd/files.hpp"
#include "seqnd/lda.hpp"
#include "seqnd/lstm.hpp"

namespace seqnd {

struct DetectorConfig {
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  TrainConfig train;
  FoldInConfig fold_in;
};

/// Routes through an ensemble topic set and a topic grouping.
struct TopicRouter {
  std::shared_ptr<const TopicSet> topics;
  ClusterDefinition definition;
};

/// Routes to the nearest k-means centroid of the term-frequency vector.
struct CentroidRouter {
  Matrix centroids;
};

using Router = std::variant<TopicRouter, CentroidRouter>;

/// Term frequencies (bag of words divided by length).
inline std::vector<double> term_frequencies(const std::vector<TokenId>& tokens, std::size_t vocab_size) {
  auto bag = bag_of_words(tokens, vocab_size);
  for (double& v : bag) v /= static_cast<double>(tokens.size());
  return bag;
}

struct SequenceScore {
  std::size_t cluster = 0;
  double perplexity = 0.0;
};

struct NoveltyDetector {
  Router router;
  std::vector<LstmLanguageModel> models;  // index-aligned with clusters
  DetectorConfig config;
  std::vector<std::size_t> cluster_sizes;
  std::vector<std::vector<double>> epoch_losses;

  std::size_t k() const noexcept { return models.size(); }

  std::size_t route(const std::vector<TokenId>& tokens) const {
    if (models.size() == 1) return 0;
    if (const auto* tr = std::get_if<TopicRouter>(&router))
      return assign_cluster(tokens, *tr->topics, tr->definition, config.fold_in).cluster;
    const auto& cr = std::get<CentroidRouter>(router);
    auto x = term_frequencies(tokens, models[0].vocab_size);
    std::size_t best = 0;
    double best_d = squared_distance(x, cr.centroids[0]);
    for (std::size_t c = 1; c < cr.centroids.size(); ++c) {
      double d = squared_distance(x, cr.centroids[c]);
      if (d < best_d) best_d = d, best = c;
    }
    return best;
  }

  /// Exactly one model is consulted: the one of the routed cluster.
  SequenceScore score(const std::vector<TokenId>& tokens) const {
    if (models.empty()) throw InvalidArgument("detector has no models");
    const std::size_t c = route(tokens);
    return {c, perplexity(models[c], tokens)};
  }
};

using ProgressFn = std::function<void(double)>;

/// One model per subset; cluster i uses init and shuffle seed train.seed + i.
inline std::vector<LstmLanguageModel> train_cluster_models(const Corpus& corpus,
                                                           const std::vector<std::vector<std::size_t>>& subsets,
                                                           const DetectorConfig& cfg,
                                                           std::vector<std::vector<double>>* losses = nullptr,
                                                           const ProgressFn& progress = {}) {
  for (const auto& s : corpus.sequences)
    if (s.label == Label::Novel)
      throw InvalidArgument("training data must not contain novel sequences (found '" + s.id + "')");
  for (std::size_t c = 0; c < subsets.size(); ++c)
    if (subsets[c].empty()) throw InvalidArgument("cluster " + std::to_string(c) + " received no training sequences");
  std::vector<LstmLanguageModel> models;
  const double total_epochs = static_cast<double>(subsets.size() * cfg.train.epochs);
  for (std::size_t c = 0; c < subsets.size(); ++c) {
    std::vector<std::vector<TokenId>> seqs;
    for (auto i : subsets[c]) seqs.push_back(corpus.sequences[i].tokens);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + c;
    auto model = init_model(corpus.vocabulary.size(), cfg.embed_dim, cfg.hidden_dim, tc.seed);
    auto result = train(model, seqs, tc, [&](std::size_t epoch, double) {
      if (progress) progress(static_cast<double>(c * cfg.train.epochs + epoch + 1) / total_epochs);
    });
    if (losses) losses->push_back(result.epoch_loss);
    models.push_back(std::move(model));
  }
  return models;
}

inline NoveltyDetector train_detector(const Corpus& corpus, std::shared_ptr<const TopicSet> topics,
                                      const ClusterDefinition& def, const DetectorConfig& cfg,
                                      const ProgressFn& progress = {}) {
  auto partition = partition_corpus(corpus, *topics, def);
  NoveltyDetector d;
  d.config = cfg;
  for (const auto& s : partition.indices) d.cluster_sizes.push_back(s.size());
  d.models = train_cluster_models(corpus, partition.indices, cfg, &d.epoch_losses, progress);
  d.router = TopicRouter{std::move(topics), def};
  return d;
}

/// The undecomposed baseline: one model over all training data.
inline LstmLanguageModel train_global_model(const Corpus& corpus, const DetectorConfig& cfg) {
  std::vector<std::size_t> all(corpus.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return std::move(train_cluster_models(corpus, {all}, cfg).front());
}

/// k-means over term frequencies; k picked by silhouette in [k_min, k_max]
/// unless `fixed_k` is non-zero.
inline NoveltyDetector train_kmeans_detector(const Corpus& corpus, const DetectorConfig& cfg, std::size_t k_min,
                                             std::size_t k_max, std::uint64_t seed, std::size_t fixed_k = 0) {
  Matrix x;
  for (const auto& s : corpus.sequences) x.push_back(term_frequencies(s.tokens, corpus.vocabulary.size()));
  KMeansResult fit = fixed_k ? kmeans(x, fixed_k, seed) : select_k_by_silhouette(x, k_min, k_max, seed).fit;
  std::vector<std::vector<std::size_t>> subsets(fit.centroids.size());
  for (std::size_t i = 0; i < fit.labels.size(); ++i) subsets[fit.labels[i]].push_back(i);
  // Drop clusters that ended empty; their centroids would route to untrained models.
  NoveltyDetector d;
  CentroidRouter router;
  std::vector<std::vector<std::size_t>> kept;
  for (std::size_t c = 0; c < subsets.size(); ++c)
    if (!subsets[c].empty()) {
      kept.push_back(subsets[c]);
      router.centroids.push_back(fit.centroids[c]);
    }
  d.config = cfg;
  for (const auto& s : kept) d.cluster_sizes.push_back(s.size());
  d.models = train_cluster_models(corpus, kept, cfg, &d.epoch_losses);
  d.router = std::move(router);
  return d;
}

inline std::vector<ScoredLabel> score_corpus(const NoveltyDetector& d, const Corpus& corpus,
                                             std::vector<std::size_t>* clusters = nullptr) {
  std::vector<ScoredLabel> out;
  for (const auto& s : corpus.sequences) {
    auto r = d.score(s.tokens);
    if (clusters) clusters->push_back(r.cluster);
    out.push_back({r.perplexity, s.label == Label::Novel});
  }
  return out;
}

/// Test sequences grouped by their routed cluster, AUC within each group for
/// the detector and for the global detector.
inline std::vector<ClusterRow> per_cluster_report(const NoveltyDetector& d, const NoveltyDetector& global,
                                                  const Corpus& test) {
  std::vector<std::size_t> clusters;
  auto scores = score_corpus(d, test, &clusters);
  auto global_scores = score_corpus(global, test);
  std::vector<ClusterRow> rows;
  for (std::size_t c = 0; c < d.k(); ++c) {
    std::vector<ScoredLabel> mine, theirs;
    for (std::size_t i = 0; i < clusters.size(); ++i)
      if (clusters[i] == c) {
        mine.push_back(scores[i]);
        theirs.push_back(global_scores[i]);
      }
    rows.push_back({c, mine.size(), auc_if_defined(mine), auc_if_defined(theirs)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Bundles: cluster_definition.json, topicset.json (or centroids.json),
// model_<i>.ckpt and manifest.json with seeds, config and content hashes.

inline nlohmann::json to_json(const DetectorConfig& c) {
  const auto& t = c.train;
  return {{"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"train",
           {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"epsilon", t.epsilon},
            {"clip_norm", t.clip_norm},
            {"max_seq_len", t.max_seq_len},
            {"seed", t.seed}}},
          {"fold_in", {{"iterations", c.fold_in.iterations}, {"seed", c.fold_in.seed}}}};
}

/// Missing keys keep their defaults.
inline DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    auto& o = c.train;
    o.epochs = t.value("epochs", o.epochs);
    o.batch_size = t.value("batch_size", o.batch_size);
    o.learning_rate = t.value("learning_rate", o.learning_rate);
    o.beta1 = t.value("beta1", o.beta1);
    o.beta2 = t.value("beta2", o.beta2);
    o.epsilon = t.value("epsilon", o.epsilon);
    o.clip_norm = t.value("clip_norm", o.clip_norm);
    o.max_seq_len = t.value("max_seq_len", o.max_seq_len);
    o.seed = t.value("seed", o.seed);
  }
  if (j.contains("fold_in")) {
    c.fold_in.iterations = j.at("fold_in").value("iterations", c.fold_in.iterations);
    c.fold_in.seed = j.at("fold_in").value("seed", c.fold_in.seed);
  }
  c.train.validate();
  return c;
}

inline void save_bundle(const NoveltyDetector& d, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest = {{"format", "seqnd-detector"}, {"version", 1}, {"k", d.k()}};
  manifest["config"] = to_json(d.config);
  manifest["cluster_sizes"] = d.cluster_sizes;
  nlohmann::json files = nlohmann::json::object();
  auto put = [&](const std::string& name, const std::string& content) {
    write_file_atomic((fs::path(dir) / name).string(), content);
    files[name] = sha256_hex(content);
  };
  if (const auto* tr = std::get_if<TopicRouter>(&d.router)) {
    manifest["router"] = "topics";
    put("cluster_definition.json", to_json(tr->definition).dump(2));
    put("topicset.json", to_json(*tr->topics).dump());
  } else {
    manifest["router"] = "centroids";
    put("centroids.json", nlohmann::json(std::get<CentroidRouter>(d.router).centroids).dump());
  }
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t i = 0; i < d.models.size(); ++i) {
    std::ostringstream os;
    save_checkpoint(d.models[i], os);
    put("model_" + std::to_string(i) + ".ckpt", os.str());
    seeds.push_back(d.models[i].seed);
  }
  manifest["model_seeds"] = seeds;
  manifest["files"] = files;
  write_file_atomic((fs::path(dir) / "manifest.json").string(), manifest.dump(2));
}

/// Loads a bundle, rejecting any file whose hash differs from the manifest.
inline NoveltyDetector load_bundle(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto manifest = nlohmann::json::parse(read_file((fs::path(dir) / "manifest.json").string()));
  if (manifest.value("format", "") != "seqnd-detector") throw InvalidArgument("'" + dir + "' is not a detector bundle");
  auto load = [&](const std::string& name) {
    std::string content = read_file((fs::path(dir) / name).string());
    if (sha256_hex(content) != manifest.at("files").at(name).get<std::string>())
      throw InvalidArgument("bundle file '" + name + "' does not match its manifest hash");
    return content;
  };
  NoveltyDetector d;
  d.config = detector_config_from_json(manifest.at("config"));
  d.cluster_sizes = manifest.at("cluster_sizes").get<std::vector<std::size_t>>();
  const auto k = manifest.at("k").get<std::size_t>();
  if (manifest.at("router") == "topics") {
    auto ts = std::make_shared<TopicSet>(topic_set_from_json(nlohmann::json::parse(load("topicset.json"))));
    auto def = cluster_definition_from_json(nlohmann::json::parse(load("cluster_definition.json")), ts->size());
    if (def.k != k) throw InvalidArgument("bundle cluster count disagrees with its definition");
    d.router = TopicRouter{std::move(ts), std::move(def)};
  } else {
    d.router = CentroidRouter{nlohmann::json::parse(load("centroids.json")).get<Matrix>()};
  }
  for (std::size_t i = 0; i < k; ++i) {
    std::istringstream is(load("model_" + std::to_string(i) + ".ckpt"));
    d.models.push_back(load_checkpoint(is));
  }
  return d;
}

/// Stable content hash of a bundle: hash over the manifest's file hashes.
inline std::string bundle_hash(const std::string& dir) {
  const auto manifest = nlohmann::json::parse(read_file((std::filesystem::path(dir) / "manifest.json").string()));
  return sha256_hex(manifest.at("files").dump());
}

}  // namespace seqnd
