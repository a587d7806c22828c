#pragma once

// HTTP/JSON service over a directory-backed project store.
//
// Layout under the store root:
//   projects/<id>/project.json        manifest (seed, hashes, definitions, detectors)
//   projects/<id>/corpus.json
//   projects/<id>/topicset.json
//   projects/<id>/projection.json
//   projects/<id>/clusters/<def>.json
//   detectors/<id>/                   detector bundle + detector.json
//   jobs/<id>.json                    job log
//
// Seeds derive from the project seed S: LDA runs S+1000+r, random topic
// counts S+2000, t-SNE S+3000, LSTM training S+4000+cluster, fold-in S+5000.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "seqnd/clustering.hpp"
#include "seqnd/corpus.hpp"
#include "seqnd/detector.hpp"
#include "seqnd/evaluation.hpp"
#include "seqnd/files.hpp"
#include "seqnd/lda.hpp"
#include "seqnd/projection.hpp"

// After Eigen: resolv.h defines a `_res` macro that collides with Eigen parameter names.
#include <httplib.h>

namespace seqnd {

using nlohmann::json;

namespace seeds {
inline constexpr std::uint64_t kLda = 1000;
inline constexpr std::uint64_t kTopicCounts = 2000;
inline constexpr std::uint64_t kTsne = 3000;
inline constexpr std::uint64_t kTrain = 4000;
inline constexpr std::uint64_t kFoldIn = 5000;
inline constexpr std::uint64_t kSplit = 6000;
}  // namespace seeds

/// A sequence given either as a whitespace-separated string or a token array.
inline std::vector<std::string> sequence_from_json(const json& j) {
  if (j.is_string()) return split_whitespace(j.get<std::string>());
  if (j.is_array()) return j.get<std::vector<std::string>>();
  throw InvalidArgument("a sequence must be a string or an array of tokens");
}

inline std::vector<std::vector<std::string>> sequences_from_json(const json& j) {
  if (!j.is_array()) throw InvalidArgument("'sequences' must be an array");
  std::vector<std::vector<std::string>> out;
  for (const auto& s : j) {
    out.push_back(sequence_from_json(s));
    if (out.back().empty()) throw InvalidArgument("sequence " + std::to_string(out.size() - 1) + " is empty");
  }
  return out;
}

inline std::vector<Label> labels_from_json(const json& j) {
  std::vector<Label> out;
  for (const auto& l : j) out.push_back(parse_label(l.get<std::string>()));
  return out;
}

enum class JobState { Queued, Running, Done, Failed };

inline std::string to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    default: return "failed";
  }
}

struct Job {
  std::string id;
  std::string project_id;
  std::string kind;  // lda_ensemble | train_detector | evaluate | baseline
  JobState state = JobState::Queued;
  double progress = 0.0;
  json result;
  std::string error;
};

inline json to_json(const Job& j) {
  return {{"id", j.id},         {"project_id", j.project_id}, {"kind", j.kind},
          {"state", to_string(j.state)}, {"progress", j.progress},    {"result", j.result},
          {"error", j.error}};
}

/// Persistent projects, cluster definitions and detector bundles.
class ProjectStore {
public:
  explicit ProjectStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "projects");
    std::filesystem::create_directories(root_ / "detectors");
    std::filesystem::create_directories(root_ / "jobs");
  }

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path project_dir(const std::string& id) const { return root_ / "projects" / id; }
  std::filesystem::path detector_dir(const std::string& id) const { return root_ / "detectors" / id; }

  /// Content-addressed: the same payload yields the same id.
  std::string create_project(const json& body) {
    if (!body.is_object() || !body.contains("sequences")) throw InvalidArgument("body needs 'sequences'");
    auto raw = sequences_from_json(body.at("sequences"));
    if (raw.empty()) throw InvalidArgument("empty corpus");
    std::vector<Label> labels;
    if (body.contains("labels")) labels = labels_from_json(body.at("labels"));
    const auto min_freq = body.value("min_frequency", std::size_t{1});
    const auto seed = body.value("seed", std::uint64_t{0});
    auto vocab = build_vocabulary(raw, min_freq);
    auto corpus = encode_corpus(raw, vocab, labels);
    corpus.validate();

    const std::string id = sha256_hex(body.dump()).substr(0, 16);
    std::lock_guard lock(mutex_);
    const auto dir = project_dir(id);
    if (std::filesystem::exists(dir / "project.json")) return id;
    std::filesystem::create_directories(dir / "clusters");
    const std::string corpus_text = seqnd::to_json(corpus).dump();
    write_file_atomic((dir / "corpus.json").string(), corpus_text);
    json manifest = {{"id", id},
                     {"seed", seed},
                     {"corpus_hash", sha256_hex(corpus_text)},
                     {"topicset_hash", nullptr},
                     {"definitions", json::array()},
                     {"detectors", json::array()},
                     {"jobs", json::array()}};
    write_file_atomic((dir / "project.json").string(), manifest.dump(2));
    return id;
  }

  json manifest(const std::string& id) const {
    const auto path = project_dir(id) / "project.json";
    if (!std::filesystem::exists(path)) throw NotFound("unknown project '" + id + "'");
    return json::parse(read_file(path.string()));
  }

  void update_manifest(const std::string& id, const std::function<void(json&)>& edit) {
    std::lock_guard lock(mutex_);
    auto m = manifest(id);
    edit(m);
    write_file_atomic((project_dir(id) / "project.json").string(), m.dump(2));
  }

  Corpus corpus(const std::string& id) const {
    manifest(id);
    return corpus_from_json(json::parse(read_file((project_dir(id) / "corpus.json").string())));
  }

  std::shared_ptr<const TopicSet> topic_set(const std::string& id) const {
    const auto path = project_dir(id) / "topicset.json";
    manifest(id);
    if (!std::filesystem::exists(path)) throw NotFound("project '" + id + "' has no topics yet");
    return std::make_shared<TopicSet>(topic_set_from_json(json::parse(read_file(path.string()))));
  }

  void save_topics(const std::string& id, const TopicSet& ts, const TopicProjection& projection) {
    const auto dir = project_dir(id);
    const std::string text = seqnd::to_json(ts).dump();
    {
      std::lock_guard lock(mutex_);
      write_file_atomic((dir / "topicset.json").string(), text);
      write_file_atomic((dir / "projection.json").string(), seqnd::to_json(projection).dump());
    }
    update_manifest(id, [&](json& m) { m["topicset_hash"] = sha256_hex(text); });
  }

  std::string projection(const std::string& id) const {
    const auto path = project_dir(id) / "projection.json";
    manifest(id);
    if (!std::filesystem::exists(path)) throw NotFound("project '" + id + "' has no topics yet");
    return read_file(path.string());
  }

  /// Validates against the project's topic set; the id hashes the definition.
  std::string add_definition(const std::string& id, const json& body) {
    auto ts = topic_set(id);
    auto def = cluster_definition_from_json(body, ts->size());
    const std::string text = seqnd::to_json(def).dump(2);
    const std::string def_id = sha256_hex(text).substr(0, 16);
    {
      std::lock_guard lock(mutex_);
      write_file_atomic((project_dir(id) / "clusters" / (def_id + ".json")).string(), text);
    }
    update_manifest(id, [&](json& m) {
      auto& defs = m["definitions"];
      if (std::find(defs.begin(), defs.end(), def_id) == defs.end()) defs.push_back(def_id);
    });
    return def_id;
  }

  ClusterDefinition definition(const std::string& id, const std::string& def_id, std::size_t topic_count) const {
    const auto path = project_dir(id) / "clusters" / (def_id + ".json");
    if (!std::filesystem::exists(path)) throw NotFound("unknown cluster definition '" + def_id + "'");
    return cluster_definition_from_json(json::parse(read_file(path.string())), topic_count);
  }

  std::string detector_project(const std::string& det_id) const {
    const auto path = detector_dir(det_id) / "detector.json";
    if (!std::filesystem::exists(path)) throw NotFound("unknown detector '" + det_id + "'");
    return json::parse(read_file(path.string())).at("project_id").get<std::string>();
  }

  std::shared_ptr<const NoveltyDetector> detector(const std::string& det_id) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = detectors_.find(det_id); it != detectors_.end()) return it->second;
    }
    detector_project(det_id);
    auto d = std::make_shared<const NoveltyDetector>(load_bundle(detector_dir(det_id).string()));
    std::lock_guard lock(mutex_);
    return detectors_.emplace(det_id, std::move(d)).first->second;
  }

  void persist_job(const Job& job) {
    std::lock_guard lock(mutex_);
    write_file_atomic((root_ / "jobs" / (job.id + ".json")).string(), seqnd::to_json(job).dump(2));
  }

private:
  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const NoveltyDetector>> detectors_;
};

/// Runs jobs one at a time on a background thread.
class JobRunner {
public:
  explicit JobRunner(ProjectStore& store) : store_(store), worker_([this] { loop(); }) {}

  ~JobRunner() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  using Task = std::function<json(const std::function<void(double)>&)>;

  std::string submit(const std::string& project_id, const std::string& kind, Task task) {
    std::lock_guard lock(mutex_);
    Job job;
    job.id = "job-" + std::to_string(++counter_) + "-" + sha256_hex(project_id + kind + std::to_string(counter_)).substr(0, 8);
    job.project_id = project_id;
    job.kind = kind;
    jobs_[job.id] = job;
    store_.persist_job(job);
    queue_.emplace_back(job.id, std::move(task));
    cv_.notify_all();
    return job.id;
  }

  Job get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it != jobs_.end()) return it->second;
    const auto path = store_.root() / "jobs" / (id + ".json");
    if (!std::filesystem::exists(path)) throw NotFound("unknown job '" + id + "'");
    auto j = json::parse(read_file(path.string()));
    Job job;
    job.id = id;
    job.project_id = j.value("project_id", "");
    job.kind = j.value("kind", "");
    const auto st = j.value("state", "failed");
    // A job that was not terminal when logged died with the previous process.
    job.state = st == "done" ? JobState::Done : JobState::Failed;
    job.error = j.value("error", "");
    if (st != "done" && job.error.empty()) job.error = "interrupted by a service restart";
    job.progress = j.value("progress", 0.0);
    job.result = j.value("result", json());
    return job;
  }

  /// Blocks until the job reaches a terminal state.
  Job wait(const std::string& id) const {
    std::unique_lock lock(mutex_);
    done_cv_.wait(lock, [&] {
      auto s = jobs_.at(id).state;
      return s == JobState::Done || s == JobState::Failed;
    });
    return jobs_.at(id);
  }

private:
  void loop() {
    for (;;) {
      std::pair<std::string, Task> next;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
        if (stop_ && queue_.empty()) return;
        next = std::move(queue_.front());
        queue_.pop_front();
        jobs_[next.first].state = JobState::Running;
      }
      Job finished;
      try {
        json result = next.second([&](double p) {
          std::lock_guard lock(mutex_);
          jobs_[next.first].progress = p;
        });
        std::lock_guard lock(mutex_);
        auto& job = jobs_[next.first];
        job.result = std::move(result);
        job.progress = 1.0;
        job.state = JobState::Done;
        finished = job;
      } catch (const std::exception& e) {
        std::lock_guard lock(mutex_);
        auto& job = jobs_[next.first];
        job.error = e.what();
        job.state = JobState::Failed;
        finished = job;
      }
      store_.persist_job(finished);
      store_.update_manifest(finished.project_id, [&](json& m) { m["jobs"].push_back(finished.id); });
      done_cv_.notify_all();
    }
  }

  ProjectStore& store_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  mutable std::condition_variable done_cv_;
  std::deque<std::pair<std::string, Task>> queue_;
  std::map<std::string, Job> jobs_;
  std::uint64_t counter_ = 0;
  bool stop_ = false;
  std::thread worker_;
};

struct ServiceOptions {
  std::string root = "seqnd-data";
  std::string ui_dir;  // served at "/" when set
  std::size_t fold_in_iterations = 100;
};

/// The HTTP API. Library operations run behind each endpoint unchanged, so
/// any result equals the direct library call on the same inputs.
class Service {
public:
  explicit Service(ServiceOptions opts) : opts_(std::move(opts)), store_(opts_.root), jobs_(store_) { routes(); }

  httplib::Server& server() { return server_; }
  ProjectStore& store() { return store_; }
  JobRunner& jobs() { return jobs_; }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
  bool serve_bound() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

  // Direct handlers (also used by the HTTP routes).

  std::string submit_lda(const std::string& pid, const json& body) {
    const auto m = store_.manifest(pid);
    const auto project_seed = m.at("seed").get<std::uint64_t>();
    EnsembleSpec spec;
    if (body.contains("topic_counts")) spec.topic_counts = body.at("topic_counts").get<std::vector<std::size_t>>();
    spec.num_runs = body.value("num_runs", std::size_t{3});
    spec.k_min = body.value("k_min", std::size_t{2});
    spec.k_max = body.value("k_max", std::size_t{10});
    spec.k_seed = body.value("k_seed", project_seed + seeds::kTopicCounts);
    spec.alpha = body.value("alpha", -1.0);
    spec.beta = body.value("beta", 0.01);
    spec.iterations = body.value("iterations", std::size_t{200});
    spec.burn_in = body.value("burn_in", std::min<std::size_t>(100, spec.iterations));
    spec.seed = body.value("seed", project_seed + seeds::kLda);
    spec.resolve_topic_counts();  // validate before queueing
    TsneParams tsne;
    tsne.perplexity = body.value("tsne_perplexity", 5.0);
    tsne.iterations = body.value("tsne_iterations", std::size_t{1000});
    tsne.seed = body.value("tsne_seed", project_seed + seeds::kTsne);
    const auto top_words = body.value("top_words", std::size_t{10});
    std::map<std::string, std::string> classes;
    if (body.contains("word_classes")) classes = body.at("word_classes").get<std::map<std::string, std::string>>();
    return jobs_.submit(pid, "lda_ensemble", [=, this](const auto& progress) {
      auto corpus = store_.corpus(pid);
      auto ts = run_ensemble(corpus, spec);
      progress(0.8);
      auto projection = project_topics(ts, corpus.vocabulary, tsne, top_words, classes);
      store_.save_topics(pid, ts, projection);
      return json{{"topics", ts.size()}, {"runs", ts.runs.size()}};
    });
  }

  std::string submit_train(const std::string& pid, const json& body) {
    const auto m = store_.manifest(pid);
    const auto project_seed = m.at("seed").get<std::uint64_t>();
    const auto def_id = body.at("definition_id").get<std::string>();
    auto ts = store_.topic_set(pid);
    auto def = store_.definition(pid, def_id, ts->size());
    json cfg_json = body.value("config", json::object());
    if (!cfg_json.contains("train") || !cfg_json["train"].contains("seed"))
      cfg_json["train"]["seed"] = project_seed + seeds::kTrain;
    if (!cfg_json.contains("fold_in") || !cfg_json["fold_in"].contains("seed"))
      cfg_json["fold_in"]["seed"] = project_seed + seeds::kFoldIn;
    if (!cfg_json["fold_in"].contains("iterations")) cfg_json["fold_in"]["iterations"] = opts_.fold_in_iterations;
    auto cfg = detector_config_from_json(cfg_json);
    const std::string det_id =
        sha256_hex(m.at("topicset_hash").dump() + def_id + seqnd::to_json(cfg).dump()).substr(0, 16);
    return jobs_.submit(pid, "train_detector", [=, this](const auto& progress) {
      const auto dir = store_.detector_dir(det_id);
      if (!std::filesystem::exists(dir / "detector.json")) {
        auto corpus = store_.corpus(pid);
        auto det = train_detector(corpus, ts, def, cfg, progress);
        save_bundle(det, dir.string());
        json meta = {{"project_id", pid},
                     {"definition_id", def_id},
                     {"topicset_hash", m.at("topicset_hash")},
                     {"bundle_hash", bundle_hash(dir.string())}};
        write_file_atomic((dir / "detector.json").string(), meta.dump(2));
        store_.update_manifest(pid, [&](json& pm) {
          auto& dets = pm["detectors"];
          if (std::find(dets.begin(), dets.end(), det_id) == dets.end()) dets.push_back(det_id);
        });
      }
      return json{{"detector_id", det_id}};
    });
  }

  json score(const std::string& det_id, const json& body) {
    auto det = store_.detector(det_id);
    const auto vocab = store_.corpus(store_.detector_project(det_id)).vocabulary;
    json out = json::array();
    for (const auto& raw : sequences_from_json(body.at("sequences"))) {
      auto r = det->score(encode(raw, vocab));
      out.push_back({{"cluster", r.cluster}, {"perplexity", r.perplexity}});
    }
    return {{"scores", out}};
  }

  json evaluate_detector(const std::string& det_id, const json& body) {
    auto det = store_.detector(det_id);
    const auto vocab = store_.corpus(store_.detector_project(det_id)).vocabulary;
    auto scored = [&](const json& part) {
      auto raw = sequences_from_json(part.at("sequences"));
      auto labels = labels_from_json(part.at("labels"));
      return score_corpus(*det, encode_corpus(raw, vocab, labels));
    };
    std::vector<ScoredLabel> validation;
    if (body.contains("validation")) validation = scored(body.at("validation"));
    auto report = evaluate(scored(body), validation, body.value("method", std::string("IC-LSTM")));
    return seqnd::to_json(report);
  }

private:
  template <class F>
  void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const IncompleteDefinition& e) {
      reply(res, 409, {{"error", e.what()}, {"missing_topic_ids", e.missing()}});
    } catch (const NotFound& e) {
      reply(res, 404, {{"error", e.what()}});
    } catch (const InvalidArgument& e) {
      reply(res, 422, {{"error", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 422, {{"error", std::string("malformed JSON: ") + e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void routes() {
    auto& s = server_;
    s.Post("/projects", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, {{"id", store_.create_project(json::parse(req.body))}}); });
    });
    s.Get(R"(/projects/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, store_.manifest(req.matches[1])); });
    });
    s.Post(R"(/projects/([^/]+)/lda)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto body = req.body.empty() ? json::object() : json::parse(req.body);
        reply(res, 202, {{"job_id", submit_lda(req.matches[1], body)}});
      });
    });
    s.Get(R"(/projects/([^/]+)/topics)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { res.set_content(store_.projection(req.matches[1]), "application/json"); });
    });
    s.Get(R"(/projects/([^/]+)/topicset)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, seqnd::to_json(*store_.topic_set(req.matches[1]))); });
    });
    s.Post(R"(/projects/([^/]+)/clusters)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, {{"id", store_.add_definition(req.matches[1], json::parse(req.body))}}); });
    });
    s.Post(R"(/projects/([^/]+)/train)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 202, {{"job_id", submit_train(req.matches[1], json::parse(req.body))}}); });
    });
    s.Post(R"(/detectors/([^/]+)/score)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, score(req.matches[1], json::parse(req.body))); });
    });
    s.Post(R"(/detectors/([^/]+)/evaluate)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, evaluate_detector(req.matches[1], json::parse(req.body))); });
    });
    s.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, seqnd::to_json(jobs_.get(req.matches[1]))); });
    });
    if (!opts_.ui_dir.empty()) s.set_mount_point("/", opts_.ui_dir);
  }

  ServiceOptions opts_;
  ProjectStore store_;
  JobRunner jobs_;
  httplib::Server server_;
};

}  // namespace seqnd
