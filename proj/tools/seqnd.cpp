// Command-line front end: every pipeline stage, runnable headlessly.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqnd/baselines.hpp"
#include "seqnd/clustering.hpp"
#include "seqnd/corpus.hpp"
#include "seqnd/detector.hpp"
#include "seqnd/evaluation.hpp"
#include "seqnd/files.hpp"
#include "seqnd/lda.hpp"
#include "seqnd/projection.hpp"
#include "seqnd/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqnd;

namespace {

json read_json(const std::string& path) {
  if (!fs::exists(path)) throw NotFound("no such file '" + path + "'");
  return json::parse(read_file(path));
}

void write_json(const std::string& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

Corpus load_corpus(const std::string& path) { return corpus_from_json(read_json(path)); }

Vocabulary bundle_vocabulary(const std::string& bundle) {
  return vocabulary_from_json(read_json((fs::path(bundle) / "vocabulary.json").string()));
}

Corpus labeled_file_corpus(const std::string& seq_path, const std::string& label_path, const Vocabulary& vocab) {
  std::vector<Label> labels;
  if (!label_path.empty()) labels = read_label_file(label_path);
  return encode_corpus(read_sequence_file(seq_path), vocab, labels);
}

std::vector<std::vector<std::string>> decode_all(const Corpus& c) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : c.sequences) out.push_back(decode(s.tokens, c.vocabulary));
  return out;
}

std::vector<Label> labels_of(const Corpus& c) {
  std::vector<Label> out;
  for (const auto& s : c.sequences) out.push_back(s.label);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seqnd: sequence novelty detection with informed clustering"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Base seed; each stage derives its own from it")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Encode a sequence file (one sequence per line) into a corpus");
  std::string in_seqs, in_labels, in_out;
  std::size_t min_freq = 1;
  ingest->add_option("--sequences", in_seqs)->required();
  ingest->add_option("--labels", in_labels, "One of normal|novel|unlabeled per line");
  ingest->add_option("--min-frequency", min_freq)->capture_default_str();
  ingest->add_option("-o,--out", in_out)->required();

  // split
  auto* spl = app.add_subcommand("split", "Label-stratified train/validation/test split of a sequence file");
  std::string sp_seqs, sp_labels, sp_dir;
  double sp_train = 0.7, sp_val = 0.15;
  spl->add_option("--sequences", sp_seqs)->required();
  spl->add_option("--labels", sp_labels)->required();
  spl->add_option("--train-fraction", sp_train)->capture_default_str();
  spl->add_option("--validation-fraction", sp_val)->capture_default_str();
  spl->add_option("--out-dir", sp_dir)->required();

  // discretize
  auto* disc = app.add_subcommand("discretize", "Bin a univariate series and cut it into labeled windows");
  std::string ds_series, ds_anoms, ds_out_seqs, ds_out_labels;
  BinConfig bins;
  disc->add_option("--series", ds_series, "One value per line")->required();
  disc->add_option("--anomalies", ds_anoms, "JSON array of anomalous point indices");
  disc->add_option("--low", bins.low)->capture_default_str();
  disc->add_option("--high", bins.high)->capture_default_str();
  disc->add_option("--bin-width", bins.bin_width)->capture_default_str();
  disc->add_option("--window", bins.window_length)->capture_default_str();
  disc->add_option("--out-sequences", ds_out_seqs)->required();
  disc->add_option("--out-labels", ds_out_labels)->required();

  // lda
  auto* lda = app.add_subcommand("lda", "Fit an LDA ensemble over a corpus");
  std::string lda_corpus, lda_out;
  EnsembleSpec spec;
  spec.num_runs = 3;
  lda->add_option("--corpus", lda_corpus)->required();
  lda->add_option("--topics", spec.topic_counts, "Explicit topic count per run");
  lda->add_option("--runs", spec.num_runs, "Runs with random topic counts")->capture_default_str();
  lda->add_option("--k-min", spec.k_min)->capture_default_str();
  lda->add_option("--k-max", spec.k_max)->capture_default_str();
  lda->add_option("--alpha", spec.alpha, "Dirichlet prior on sequence-topic; default 50/K");
  lda->add_option("--beta", spec.beta)->capture_default_str();
  lda->add_option("--iterations", spec.iterations)->capture_default_str();
  lda->add_option("--burn-in", spec.burn_in)->capture_default_str();
  lda->add_option("-o,--out", lda_out)->required();

  // project-topics
  auto* proj = app.add_subcommand("project-topics", "Emit the topic projection JSON consumed by the UI");
  std::string pj_corpus, pj_topics, pj_classes, pj_out;
  TsneParams tsne;
  std::size_t top_words = 10;
  proj->add_option("--corpus", pj_corpus)->required();
  proj->add_option("--topicset", pj_topics)->required();
  proj->add_option("--word-classes", pj_classes, "JSON object word -> class");
  proj->add_option("--perplexity", tsne.perplexity)->capture_default_str();
  proj->add_option("--iterations", tsne.iterations)->capture_default_str();
  proj->add_option("--top-words", top_words)->capture_default_str();
  proj->add_option("-o,--out", pj_out)->required();

  // cluster
  auto* cluster = app.add_subcommand("cluster", "Validate a cluster definition and partition the corpus");
  std::string cl_corpus, cl_topics, cl_def, cl_scheme = "file", cl_out;
  cluster->add_option("--corpus", cl_corpus)->required();
  cluster->add_option("--topicset", cl_topics)->required();
  cluster->add_option("--definition", cl_def, "Cluster definition JSON (scheme 'file')");
  cluster->add_option("--scheme", cl_scheme, "file | single | identity")
      ->check(CLI::IsMember({"file", "single", "identity"}))
      ->capture_default_str();
  cluster->add_option("-o,--out", cl_out, "Write the validated definition here");

  // train
  auto* trn = app.add_subcommand("train", "Train one LSTM per cluster and write a detector bundle");
  std::string tr_corpus, tr_topics, tr_def, tr_config, tr_out;
  std::string tr_router = "topics";
  std::size_t tr_k = 0, tr_kmin = 2, tr_kmax = 10;
  DetectorConfig dcfg;
  trn->add_option("--corpus", tr_corpus)->required();
  trn->add_option("--router", tr_router, "topics | global | kmeans")
      ->check(CLI::IsMember({"topics", "global", "kmeans"}))
      ->capture_default_str();
  trn->add_option("--topicset", tr_topics);
  trn->add_option("--definition", tr_def);
  trn->add_option("--kmeans-k", tr_k, "Fixed k; 0 selects k by silhouette");
  trn->add_option("--kmeans-min", tr_kmin)->capture_default_str();
  trn->add_option("--kmeans-max", tr_kmax)->capture_default_str();
  trn->add_option("--config", tr_config, "Detector config JSON; flags override it");
  auto* o_embed = trn->add_option("--embed-dim", dcfg.embed_dim);
  auto* o_hidden = trn->add_option("--hidden-dim", dcfg.hidden_dim);
  auto* o_epochs = trn->add_option("--epochs", dcfg.train.epochs);
  auto* o_lr = trn->add_option("--learning-rate", dcfg.train.learning_rate);
  auto* o_batch = trn->add_option("--batch-size", dcfg.train.batch_size);
  trn->add_option("-o,--out", tr_out, "Bundle directory")->required();

  // score
  auto* sc = app.add_subcommand("score", "Score sequences with a detector bundle");
  std::string sc_bundle, sc_seqs;
  sc->add_option("--bundle", sc_bundle)->required();
  sc->add_option("--sequences", sc_seqs)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate one or more bundles on a labeled test set");
  std::vector<std::string> ev_bundles, ev_names;
  std::string ev_seqs, ev_labels, ev_vseqs, ev_vlabels, ev_report;
  ev->add_option("--bundle", ev_bundles, "Repeatable")->required();
  ev->add_option("--name", ev_names, "Method name per bundle");
  ev->add_option("--sequences", ev_seqs)->required();
  ev->add_option("--labels", ev_labels)->required();
  ev->add_option("--val-sequences", ev_vseqs, "Validation set for the threshold");
  ev->add_option("--val-labels", ev_vlabels);
  ev->add_option("--report", ev_report, "Write EvalReport JSON (first bundle)");

  // baseline
  auto* bl = app.add_subcommand("baseline", "Classical comparators");
  bl->require_subcommand(1);
  std::string bl_train, bl_seqs, bl_labels, bl_features = "bow";
  std::size_t bl_k = 5, bl_trees = 100, bl_psi = 256, bl_patterns = 800;
  double bl_p = 2.0;
  bl->add_option("--train", bl_train, "Training sequences")->required();
  bl->add_option("--sequences", bl_seqs, "Sequences to score")->required();
  bl->add_option("--labels", bl_labels, "Labels for an evaluation table");
  auto* knn = bl->add_subcommand("knn", "kNN with a zero-padded Minkowski distance");
  knn->add_option("--k", bl_k)->capture_default_str();
  knn->add_option("--p", bl_p)->capture_default_str();
  auto* knn_lcs = bl->add_subcommand("knn-lcs", "kNN with the LCS distance");
  knn_lcs->add_option("--k", bl_k)->capture_default_str();
  auto* iso = bl->add_subcommand("isoforest", "Isolation forest over sequence features");
  iso->add_option("--features", bl_features, "bow | sp | bow-sp")
      ->check(CLI::IsMember({"bow", "sp", "bow-sp"}))
      ->capture_default_str();
  iso->add_option("--trees", bl_trees)->capture_default_str();
  iso->add_option("--subsample", bl_psi)->capture_default_str();
  iso->add_option("--patterns", bl_patterns)->capture_default_str();

  // synth
  auto* syn = app.add_subcommand("synth", "Sample a Markov-mixture corpus with perturbed novel sequences");
  std::string sy_dir;
  std::size_t sy_m = 3, sy_excl = 19, sy_shared = 3, sy_train = 600, sy_val = 0, sy_test_normal = 150,
              sy_test_novel = 150, sy_min = 10, sy_max = 25;
  double sy_conc = 0.3, sy_rate = 0.3;
  syn->add_option("--out-dir", sy_dir)->required();
  syn->add_option("--components", sy_m)->capture_default_str();
  syn->add_option("--exclusive", sy_excl)->capture_default_str();
  syn->add_option("--shared", sy_shared)->capture_default_str();
  syn->add_option("--concentration", sy_conc)->capture_default_str();
  syn->add_option("--perturbation-rate", sy_rate)->capture_default_str();
  syn->add_option("--train", sy_train)->capture_default_str();
  syn->add_option("--validation", sy_val, "Validation normals (same number of novels)")->capture_default_str();
  syn->add_option("--test-normal", sy_test_normal)->capture_default_str();
  syn->add_option("--test-novel", sy_test_novel)->capture_default_str();
  syn->add_option("--min-length", sy_min)->capture_default_str();
  syn->add_option("--max-length", sy_max)->capture_default_str();

  // serve
  auto* srv = app.add_subcommand("serve", "Run the HTTP service (port from SEQND_PORT, default 8080)");
  std::string sv_config, sv_root, sv_ui, sv_host = "127.0.0.1";
  srv->add_option("--config", sv_config, "JSON config with root, ui_dir, host");
  srv->add_option("--root", sv_root, "Store directory");
  srv->add_option("--ui", sv_ui, "Static UI bundle served at /");
  srv->add_option("--host", sv_host)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      auto raw = read_sequence_file(in_seqs);
      std::vector<Label> labels;
      if (!in_labels.empty()) labels = read_label_file(in_labels);
      auto corpus = encode_corpus(raw, build_vocabulary(raw, min_freq), labels);
      corpus.validate();
      write_json(in_out, to_json(corpus));
      std::cout << "corpus: " << corpus.size() << " sequences, " << corpus.vocabulary.size() << " vocabulary ids\n";
    } else if (*spl) {
      auto raw = read_sequence_file(sp_seqs);
      auto labels = read_label_file(sp_labels);
      auto corpus = encode_corpus(raw, build_vocabulary(raw, 1), labels);
      auto parts = stratified_split(corpus, sp_train, sp_val, seed + seeds::kSplit);
      fs::create_directories(sp_dir);
      const std::pair<const char*, const std::vector<std::size_t>*> named[] = {
          {"train", &parts.train}, {"validation", &parts.validation}, {"test", &parts.test}};
      for (const auto& [name, idx] : named) {
        std::vector<std::vector<std::string>> seqs;
        std::vector<Label> ls;
        for (auto i : *idx) {
          seqs.push_back(raw[i]);
          ls.push_back(labels[i]);
        }
        write_sequence_file((fs::path(sp_dir) / (std::string(name) + ".txt")).string(), seqs);
        write_label_file((fs::path(sp_dir) / (std::string(name) + "_labels.txt")).string(), ls);
        std::cout << name << ": " << idx->size() << "\n";
      }
    } else if (*disc) {
      auto values = read_time_series(ds_series);
      std::vector<bool> anomalous(values.size(), false);
      if (!ds_anoms.empty()) anomalous = read_anomaly_sidecar(ds_anoms, values.size());
      auto windows = windowize(discretize_time_series(values, bins), anomalous, bins.window_length);
      std::vector<std::vector<std::string>> seqs;
      std::vector<Label> labels;
      for (auto& w : windows) {
        seqs.push_back(w.tokens);
        labels.push_back(w.label);
      }
      write_sequence_file(ds_out_seqs, seqs);
      write_label_file(ds_out_labels, labels);
      std::cout << "windows: " << windows.size() << "\n";
    } else if (*lda) {
      auto corpus = load_corpus(lda_corpus);
      spec.seed = seed + seeds::kLda;
      spec.k_seed = seed + seeds::kTopicCounts;
      auto ts = run_ensemble(corpus, spec);
      write_json(lda_out, to_json(ts));
      std::cout << "topic set: " << ts.runs.size() << " runs, " << ts.size() << " topics\n";
    } else if (*proj) {
      auto corpus = load_corpus(pj_corpus);
      auto ts = topic_set_from_json(read_json(pj_topics));
      std::map<std::string, std::string> classes;
      if (!pj_classes.empty()) classes = read_json(pj_classes).get<std::map<std::string, std::string>>();
      tsne.seed = seed + seeds::kTsne;
      write_json(pj_out, to_json(project_topics(ts, corpus.vocabulary, tsne, top_words, classes)));
    } else if (*cluster) {
      auto corpus = load_corpus(cl_corpus);
      auto ts = topic_set_from_json(read_json(cl_topics));
      ClusterDefinition def;
      if (cl_scheme == "single") def = ClusterDefinition::single(ts.size());
      else if (cl_scheme == "identity") def = ClusterDefinition::identity(ts.size());
      else {
        if (cl_def.empty()) throw InvalidArgument("--definition is required with scheme 'file'");
        def = cluster_definition_from_json(read_json(cl_def), ts.size());
      }
      auto part = partition_corpus(corpus, ts, def);
      for (std::size_t c = 0; c < def.k; ++c)
        std::cout << "cluster " << c << ": " << part.indices[c].size() << " sequences\n";
      if (!cl_out.empty()) write_json(cl_out, to_json(def));
    } else if (*trn) {
      auto corpus = load_corpus(tr_corpus);
      if (!tr_config.empty()) {
        DetectorConfig file_cfg = detector_config_from_json(read_json(tr_config));
        if (!*o_embed) dcfg.embed_dim = file_cfg.embed_dim;
        if (!*o_hidden) dcfg.hidden_dim = file_cfg.hidden_dim;
        auto t = file_cfg.train;
        if (*o_epochs) t.epochs = dcfg.train.epochs;
        if (*o_lr) t.learning_rate = dcfg.train.learning_rate;
        if (*o_batch) t.batch_size = dcfg.train.batch_size;
        dcfg.train = t;
        dcfg.fold_in = file_cfg.fold_in;
      }
      dcfg.train.seed = seed + seeds::kTrain;
      dcfg.fold_in.seed = seed + seeds::kFoldIn;
      dcfg.train.validate();
      auto progress = [](double p) { std::cerr << "\rtraining " << static_cast<int>(p * 100.0) << "%" << std::flush; };
      NoveltyDetector det;
      if (tr_router == "kmeans") {
        det = train_kmeans_detector(corpus, dcfg, tr_kmin, tr_kmax, seed + seeds::kTopicCounts, tr_k);
      } else {
        if (tr_topics.empty()) throw InvalidArgument("--topicset is required for routers 'topics' and 'global'");
        auto ts = std::make_shared<const TopicSet>(topic_set_from_json(read_json(tr_topics)));
        ClusterDefinition def = ClusterDefinition::single(ts->size());
        if (tr_router == "topics") {
          if (tr_def.empty()) throw InvalidArgument("--definition is required for router 'topics'");
          def = cluster_definition_from_json(read_json(tr_def), ts->size());
        }
        det = train_detector(corpus, ts, def, dcfg, progress);
        std::cerr << "\n";
      }
      save_bundle(det, tr_out);
      write_json((fs::path(tr_out) / "vocabulary.json").string(), to_json(corpus.vocabulary));
      std::cout << "bundle " << tr_out << ": k=" << det.k() << " hash " << bundle_hash(tr_out) << "\n";
    } else if (*sc) {
      auto det = load_bundle(sc_bundle);
      auto vocab = bundle_vocabulary(sc_bundle);
      std::cout << std::setprecision(17);
      for (const auto& raw : read_sequence_file(sc_seqs)) {
        auto r = det.score(encode(raw, vocab));
        std::cout << r.cluster << "\t" << r.perplexity << "\n";
      }
    } else if (*ev) {
      std::vector<EvalReport> reports;
      for (std::size_t b = 0; b < ev_bundles.size(); ++b) {
        auto det = load_bundle(ev_bundles[b]);
        auto vocab = bundle_vocabulary(ev_bundles[b]);
        auto test = labeled_file_corpus(ev_seqs, ev_labels, vocab);
        std::vector<ScoredLabel> val;
        if (!ev_vseqs.empty()) val = score_corpus(det, labeled_file_corpus(ev_vseqs, ev_vlabels, vocab));
        std::string name = b < ev_names.size() ? ev_names[b] : fs::path(ev_bundles[b]).filename().string();
        reports.push_back(evaluate(score_corpus(det, test), val, name));
      }
      std::cout << format_table(reports);
      if (!ev_report.empty()) write_json(ev_report, to_json(reports.front()));
    } else if (*bl) {
      auto train_raw = read_sequence_file(bl_train);
      auto vocab = build_vocabulary(train_raw, 1);
      auto training = encode_corpus(train_raw, vocab);
      auto queries = labeled_file_corpus(bl_seqs, bl_labels, vocab);
      std::vector<std::vector<TokenId>> train_tokens;
      for (const auto& s : training.sequences) train_tokens.push_back(s.tokens);
      std::vector<double> scores;
      std::string method;
      if (*knn) {
        method = "kNN";
        KnnIndex index(train_tokens, bl_p);
        for (const auto& s : queries.sequences) scores.push_back(index.score(s.tokens, bl_k));
      } else if (*knn_lcs) {
        method = "kNN-LCS";
        for (const auto& s : queries.sequences) scores.push_back(knn_lcs_score(s.tokens, train_tokens, bl_k));
      } else {
        method = "iForest-" + bl_features;
        std::vector<SequentialPattern> patterns;
        if (bl_features != "bow") patterns = prefixspan_top_k(train_tokens, bl_patterns);
        auto features = [&](const std::vector<TokenId>& t) {
          if (bl_features == "bow") return bag_of_words(t, vocab.size());
          if (bl_features == "sp") return pattern_features(t, patterns);
          return bow_sp_features(t, vocab.size(), patterns);
        };
        std::vector<std::vector<double>> x;
        for (const auto& t : train_tokens) x.push_back(features(t));
        auto forest = IsolationForest::fit(x, bl_trees, bl_psi, seed);
        for (const auto& s : queries.sequences) scores.push_back(forest.score(features(s.tokens)));
      }
      if (bl_labels.empty()) {
        std::cout << std::setprecision(17);
        for (double s : scores) std::cout << s << "\n";
      } else {
        std::vector<ScoredLabel> scored;
        for (std::size_t i = 0; i < scores.size(); ++i)
          scored.push_back({scores[i], queries.sequences[i].label == Label::Novel});
        std::cout << format_table({evaluate(scored, {}, method)});
      }
    } else if (*syn) {
      fs::create_directories(sy_dir);
      auto gen = make_block_mixture(sy_m, sy_excl, sy_shared, sy_conc, sy_rate, seed);
      auto train = generate_synthetic_mixture(gen, sy_train, 0, sy_min, sy_max, seed + 1);
      auto test = generate_synthetic_mixture(gen, sy_test_normal, sy_test_novel, sy_min, sy_max, seed + 2);
      auto dir = fs::path(sy_dir);
      write_sequence_file((dir / "train.txt").string(), decode_all(train));
      write_label_file((dir / "train_labels.txt").string(), labels_of(train));
      write_sequence_file((dir / "test.txt").string(), decode_all(test));
      write_label_file((dir / "test_labels.txt").string(), labels_of(test));
      if (sy_val > 0) {
        auto val = generate_synthetic_mixture(gen, sy_val, sy_val, sy_min, sy_max, seed + 3);
        write_sequence_file((dir / "validation.txt").string(), decode_all(val));
        write_label_file((dir / "validation_labels.txt").string(), labels_of(val));
      }
      std::cout << "wrote " << sy_dir << "\n";
    } else if (*srv) {
      ServiceOptions opts;
      if (!sv_config.empty()) {
        auto cfg = read_json(sv_config);
        opts.root = cfg.value("root", opts.root);
        opts.ui_dir = cfg.value("ui_dir", opts.ui_dir);
        opts.fold_in_iterations = cfg.value("fold_in_iterations", opts.fold_in_iterations);
        if (srv->count("--host") == 0) sv_host = cfg.value("host", sv_host);
      }
      if (!sv_root.empty()) opts.root = sv_root;
      if (!sv_ui.empty()) opts.ui_dir = sv_ui;
      int port = 8080;
      if (const char* p = std::getenv("SEQND_PORT")) port = std::stoi(p);
      Service service(opts);
      std::cerr << "listening on " << sv_host << ":" << port << "\n";
      if (!service.listen(sv_host, port)) throw Error("cannot listen on port " + std::to_string(port));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
