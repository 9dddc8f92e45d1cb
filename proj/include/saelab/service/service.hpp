#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "saelab/corpus/activation_cache.hpp"
#include "saelab/corpus/corpus.hpp"
#include "saelab/corpus/metadata_store.hpp"
#include "saelab/diagnostics/diagnostics.hpp"
#include "saelab/model/workspace.hpp"
#include "saelab/steering/steering.hpp"
#include "saelab/version.hpp"

namespace saelab {

// ---------------------------------------------------------------- job queue

enum class JobKind { scan, sweep, cache };
enum class JobState { queued, running, done, failed };

inline std::string to_string(JobKind k) {
  switch (k) {
    case JobKind::scan: return "scan";
    case JobKind::sweep: return "sweep";
    case JobKind::cache: return "cache";
  }
  return "?";
}

inline std::string to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "?";
}

struct JobRecord {
  std::string id;
  JobKind kind = JobKind::scan;
  JobState state = JobState::queued;
  double progress = 0.0;
  std::size_t sequence = 0;
  nlohmann::json request;
  nlohmann::json result;  // null until done
  nlohmann::json error;   // null unless failed
  std::vector<JobState> transitions{JobState::queued};
};

inline nlohmann::json to_json(const JobRecord& j) {
  nlohmann::json out{{"id", j.id},
                     {"kind", to_string(j.kind)},
                     {"state", to_string(j.state)},
                     {"progress", j.progress},
                     {"sequence", j.sequence},
                     {"request", j.request},
                     {"error", j.error}};
  out["result"] = j.state == JobState::done ? nlohmann::json("/jobs/" + j.id + "/result") : nlohmann::json(nullptr);
  return out;
}

inline nlohmann::json error_body(std::string_view code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

inline nlohmann::json error_body(const Error& e) {
  auto j = error_body(code_name(e.code()), e.what());
  if (const auto* pe = dynamic_cast<const ProviderError*>(&e)) {
    j["error"]["attempts"] = pe->attempts();
    j["error"]["http_status"] = pe->http_status() ? nlohmann::json(*pe->http_status()) : nlohmann::json(nullptr);
  }
  return j;
}

// One worker, first in first out. The worker runs `task` with a progress
// callback; the task's return value becomes the job result.
class JobQueue {
 public:
  using Progress = std::function<void(double)>;
  using Task = std::function<nlohmann::json(const Progress&)>;

  JobQueue() : worker_([this] { run(); }) {}

  ~JobQueue() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  std::string submit(JobKind kind, nlohmann::json request, Task task) {
    std::lock_guard lock(mu_);
    JobRecord rec;
    rec.sequence = ++counter_;
    char id[32];
    std::snprintf(id, sizeof id, "job-%06zu", rec.sequence);
    rec.id = id;
    rec.kind = kind;
    rec.request = std::move(request);
    jobs_[rec.id] = rec;
    pending_.push_back({rec.id, std::move(task)});
    cv_.notify_all();
    return rec.id;
  }

  std::optional<JobRecord> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t pending() const {
    std::lock_guard lock(mu_);
    return pending_.size();
  }

  // Blocks until every submitted job has reached a terminal state.
  void drain() {
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [&] { return pending_.empty() && !busy_; });
  }

 private:
  void set(const std::string& id, const std::function<void(JobRecord&)>& f) {
    std::lock_guard lock(mu_);
    f(jobs_.at(id));
  }

  void run() {
    for (;;) {
      std::pair<std::string, Task> next;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !pending_.empty(); });
        if (pending_.empty()) return;
        next = std::move(pending_.front());
        pending_.pop_front();
        busy_ = true;
        auto& rec = jobs_.at(next.first);
        rec.state = JobState::running;
        rec.transitions.push_back(JobState::running);
      }
      const auto& id = next.first;
      try {
        auto result = next.second([&](double p) { set(id, [p](JobRecord& r) { r.progress = std::clamp(p, 0.0, 1.0); }); });
        set(id, [&](JobRecord& r) {
          r.result = std::move(result);
          r.progress = 1.0;
          r.state = JobState::done;
          r.transitions.push_back(JobState::done);
        });
      } catch (const Error& e) {
        set(id, [&](JobRecord& r) {
          r.error = error_body(e)["error"];
          r.state = JobState::failed;
          r.transitions.push_back(JobState::failed);
        });
      } catch (const std::exception& e) {
        set(id, [&](JobRecord& r) {
          r.error = error_body("internal_error", e.what())["error"];
          r.state = JobState::failed;
          r.transitions.push_back(JobState::failed);
        });
      }
      {
        std::lock_guard lock(mu_);
        busy_ = false;
      }
      idle_cv_.notify_all();
    }
  }

  mutable std::mutex mu_;
  std::condition_variable cv_, idle_cv_;
  std::map<std::string, JobRecord> jobs_;
  std::deque<std::pair<std::string, Task>> pending_;
  std::size_t counter_ = 0;
  bool stopping_ = false;
  bool busy_ = false;
  std::thread worker_;  // last: starts after the other members exist
};

// ------------------------------------------------------------------ service

struct ServiceOptions {
  std::chrono::milliseconds busy_budget{2000};  // wait for the model before answering 409
  std::size_t default_page_size = 50;
  std::size_t max_page_size = 500;
  bool persist_store = true;  // save the metadata store after scans
};

inline int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::busy:
    case ErrorCode::stale_cache: return 409;
    case ErrorCode::precondition:
    case ErrorCode::spec:
    case ErrorCode::suite:
    case ErrorCode::config:
    case ErrorCode::query:
    case ErrorCode::hook:
    case ErrorCode::shape:
    case ErrorCode::corpus:
    case ErrorCode::insufficient_data: return 422;
    case ErrorCode::format:
    case ErrorCode::import:
    case ErrorCode::ingest: return 400;
    case ErrorCode::backend:
    case ErrorCode::provider: return 503;
    default: return 500;
  }
}

class Service {
 public:
  Service(Workspace workspace, MetadataStore store, ServiceOptions options = {})
      : ws_(std::move(workspace)), store_(std::move(store)), options_(options) {
    register_corpus(make_corpus(named(demo::corpus_texts()), "bundled demo corpus"), "demo");
    routes();
  }

  ~Service() { stop(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Returns the corpus id; `alias` is an extra lookup name.
  std::string register_corpus(Corpus corpus, const std::string& alias = {}) {
    std::lock_guard lock(corpora_mu_);
    auto shared = std::make_shared<const Corpus>(std::move(corpus));
    corpora_[shared->id] = shared;
    if (!alias.empty()) corpora_[alias] = shared;
    return shared->id;
  }

  // Binds to an ephemeral port and serves on a background thread.
  int start_background(const std::string& host = "127.0.0.1") {
    const int port = server_.bind_to_any_port(host);
    if (port < 0) throw Error(ErrorCode::io, "cannot bind to " + host);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  // Blocking.
  void listen(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw Error(ErrorCode::io, "cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  JobQueue& jobs() noexcept { return jobs_; }
  const Workspace& workspace() const noexcept { return ws_; }

  // Holding the returned lock makes synchronous model endpoints answer 409
  // once the busy budget runs out.
  std::unique_lock<std::timed_mutex> lock_model() { return std::unique_lock(model_mu_); }

  nlohmann::json version() const {
    nlohmann::json saes = nlohmann::json::object();
    for (const auto& [layer, sae] : ws_.saes) saes[std::to_string(layer)] = sae->digest();
    const auto& h = ws_.model->handle();
    return {{"version", kVersion},
            {"model_id", h.model_id},
            {"backend", to_string(h.backend)},
            {"n_layers", h.n_layers},
            {"d_model", h.d_model},
            {"model_digest", ws_.model->weights_digest()},
            {"sae_digests", saes},
            {"schemas",
             {kHighlightSchema, kSpecificitySchema, kContextSchema, kConfusionSchema, kScanSchema, kSweepSchema,
              kCacheSchema, kStoreSchema}}};
  }

 private:
  static std::vector<std::pair<std::string, std::string>> named(const std::vector<std::string>& texts) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& t : texts) out.emplace_back("", t);
    return out;
  }

  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <class F>
  auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        reply(res, http_status_for(e.code()), error_body(e));
      } catch (const nlohmann::json::exception& e) {
        reply(res, 400, error_body(code_name(ErrorCode::format), std::string("bad request body: ") + e.what()));
      } catch (const std::exception& e) {
        reply(res, 500, error_body("internal_error", e.what()));
      }
    };
  }

  static nlohmann::json body_of(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::format, "request body must be a JSON object");
    return j;
  }

  std::unique_lock<std::timed_mutex> acquire_model() {
    std::unique_lock lock(model_mu_, std::defer_lock);
    if (!lock.try_lock_for(options_.busy_budget))
      throw Error(ErrorCode::busy, "model is busy; retry later (" + std::to_string(jobs_.pending()) + " jobs queued)");
    return lock;
  }

  std::shared_ptr<const Corpus> corpus(const std::string& id) const {
    std::lock_guard lock(corpora_mu_);
    auto it = corpora_.find(id);
    if (it == corpora_.end()) throw Error(ErrorCode::not_found, "unknown corpus '" + id + "'");
    return it->second;
  }

  FeatureId feature_of(const nlohmann::json& b) const {
    if (b.contains("feature") && b["feature"].is_string()) return FeatureId::parse(b["feature"].get<std::string>());
    return FeatureId{b.at("layer").get<int>(), b.at("feature").get<int>()};
  }

  SteeringSpec spec_of(const nlohmann::json& b) {
    SteeringSpec s;
    s.feature = feature_of(b);
    s.coefficient = b.value("coefficient", 0.0);
    s.scale_mode = parse_scale_mode(b.value("scale_mode", to_string(s.scale_mode)));
    s.splice_mode = parse_splice_mode(b.value("splice_mode", to_string(s.splice_mode)));
    s.apply_to_prompt = b.value("apply_to_prompt", s.apply_to_prompt);
    if (b.contains("reference_max")) {
      s.reference_max = b["reference_max"].get<double>();
    } else if (s.scale_mode == ScaleMode::max_activation) {
      std::lock_guard lock(store_mu_);
      if (auto r = store_.get(s.feature); r && r->max_activation) s.reference_max = *r->max_activation;
    }
    return s;
  }

  static GenerationConfig config_of(const nlohmann::json& b) {
    GenerationConfig c;
    if (b.contains("config")) c = b["config"].get<GenerationConfig>();
    c.validate();
    return c;
  }

  static std::string prompt_of(const nlohmann::json& b) {
    if (!b.contains("prompt") || !b["prompt"].is_string())
      throw Error(ErrorCode::precondition, "request needs a string \"prompt\"");
    return b["prompt"].get<std::string>();
  }

  nlohmann::json record_json(const FeatureRecord& r) const {
    auto j = to_json(r);
    if (auto interp = store_.interpretation(r.feature)) j["interpretation"] = *interp;
    return j;
  }

  void routes() {
    server_.Get("/version", guarded([this](const httplib::Request&, httplib::Response& res) { reply(res, 200, version()); }));

    server_.Get("/features", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string query = req.has_param("query") ? req.get_param_value("query") : "";
      std::size_t page = req.has_param("page") ? std::stoul(req.get_param_value("page")) : 0;
      std::size_t size = req.has_param("page_size") ? std::stoul(req.get_param_value("page_size")) : options_.default_page_size;
      if (size == 0 || size > options_.max_page_size)
        throw Error(ErrorCode::query, "page_size must be in [1, " + std::to_string(options_.max_page_size) + "]");
      std::vector<FeatureRecord> hits;
      nlohmann::json out{{"query", query}, {"page", page}, {"page_size", size}};
      nlohmann::json items = nlohmann::json::array();
      {
        std::lock_guard lock(store_mu_);
        hits = query.empty() ? store_.all() : store_.search(query);
        for (std::size_t i = page * size; i < hits.size() && i < (page + 1) * size; ++i) items.push_back(record_json(hits[i]));
      }
      out["total"] = hits.size();
      out["features"] = std::move(items);
      reply(res, 200, out);
    }));

    server_.Get(R"(/features/(-?\d+)/(-?\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const FeatureId id{std::stoi(req.matches[1]), std::stoi(req.matches[2])};
      std::lock_guard lock(store_mu_);
      if (auto r = store_.get(id)) return reply(res, 200, record_json(*r));
      auto it = ws_.saes.find(id.layer);
      if (it == ws_.saes.end() || id.index < 0 || id.index >= it->second->n_features())
        throw Error(ErrorCode::not_found, "unknown feature " + id.str());
      FeatureRecord bare;
      bare.feature = id;
      reply(res, 200, record_json(bare));
    }));

    server_.Post("/activations", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto b = body_of(req);
      const std::string text = b.value("text", "");
      if (text.empty()) throw Error(ErrorCode::precondition, "text must be non-empty");
      const int layer = b.at("layer").get<int>();
      const auto& sae = ws_.sae(layer);
      auto lock = acquire_model();
      if (b.contains("feature") && !b["feature"].is_null()) {
        const FeatureId f = feature_of(b);
        return reply(res, 200, to_json(activation_highlight(*ws_.model, sae, text, f)));
      }
      // No feature: the strongest features per token.
      const std::size_t top = b.value("top_k", std::size_t{5});
      const HookPoint hook = sae.hook();
      auto trace = forward_with_capture(*ws_.model, text, std::span<const HookPoint>(&hook, 1));
      nlohmann::json rows = nlohmann::json::array();
      const auto& residuals = trace.residuals.at(layer);
      for (std::size_t p = 0; p < trace.tokens.size(); ++p) {
        const Vector f = sae.encode_dense(residuals[p]);
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < f.size(); ++i)
          if (f[i] > 0.0) idx.push_back(i);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t c) { return f[a] > f[c]; });
        if (idx.size() > top) idx.resize(top);
        nlohmann::json feats = nlohmann::json::array();
        for (auto i : idx) feats.push_back({{"feature", FeatureId{layer, static_cast<int>(i)}.str()}, {"activation", f[i]}});
        rows.push_back({{"token", trace.tokens[p].text}, {"bos", trace.tokens[p].is_bos}, {"features", feats}});
      }
      reply(res, 200, {{"text", text}, {"layer", layer}, {"rows", rows}});
    }));

    server_.Post("/steer", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto b = body_of(req);
      const auto prompt = prompt_of(b);
      const auto spec = spec_of(b);
      const auto config = config_of(b);
      const auto& sae = ws_.sae(spec.feature.layer);
      auto lock = acquire_model();
      const auto g = steer_generate(*ws_.model, sae, prompt, spec, config);
      auto j = to_json(g);
      j["seed"] = config.seed;
      j["identical_to_baseline"] = g.steered_text == g.baseline_text;
      reply(res, 200, j);
    }));

    server_.Post("/sweep", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto b = body_of(req);
      const auto prompt = prompt_of(b);
      const auto spec = spec_of(b);
      const auto config = config_of(b);
      const auto coefficients = b.at("coefficients").get<std::vector<double>>();
      if (coefficients.empty()) throw Error(ErrorCode::precondition, "coefficients must be non-empty");
      const auto lexicon = b.value("lexicon", std::vector<std::string>{});
      const auto sae = ws_.saes.count(spec.feature.layer) ? ws_.saes.at(spec.feature.layer) : nullptr;
      if (!sae) throw Error(ErrorCode::not_found, "no SAE loaded for layer " + std::to_string(spec.feature.layer));
      spec.validate(*sae);
      nlohmann::json echo = b;
      echo["spec"] = spec;
      echo["config"] = config;
      const auto id = jobs_.submit(JobKind::sweep, echo, [=, this](const JobQueue::Progress& progress) {
        std::unique_lock lock(model_mu_);
        const auto result = sweep(*ws_.model, *sae, prompt, spec, coefficients, config,
                                  [&](std::size_t k, std::size_t n) { progress(static_cast<double>(k) / static_cast<double>(n)); });
        nlohmann::json gens = nlohmann::json::array();
        for (const auto& g : result.entries) gens.push_back(to_json(g));
        return nlohmann::json{{"report", to_json(sweep_quality(*ws_.model, result, lexicon))},
                              {"generations", gens},
                              {"spec", spec},
                              {"config", config},
                              {"seed", config.seed}};
      });
      reply(res, 202, {{"job_id", id}, {"kind", "sweep"}});
    }));

    server_.Post("/corpora", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto b = body_of(req);
      std::vector<std::pair<std::string, std::string>> docs;
      for (const auto& d : b.at("documents")) {
        if (d.is_string()) docs.emplace_back("", d.get<std::string>());
        else docs.emplace_back(d.value("id", ""), d.at("text").get<std::string>());
      }
      auto c = make_corpus(docs, b.value("provenance", "uploaded"));
      if (c.empty()) throw Error(ErrorCode::corpus, "corpus has no non-empty documents");
      const auto warnings = c.warnings;
      const auto n = c.size();
      const auto id = register_corpus(std::move(c), b.value("alias", ""));
      reply(res, 201, {{"corpus_id", id}, {"documents", n}, {"warnings", warnings}});
    }));

    server_.Post("/scans", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto b = body_of(req);
      const std::string kind = b.value("kind", "density");
      if (kind != "density" && kind != "bos" && kind != "both")
        throw Error(ErrorCode::precondition, "scan kind must be density, bos or both");
      const auto corp = corpus(b.value("corpus_id", "demo"));
      std::vector<int> layers = b.value("layers", ws_.layers());
      for (int l : layers) (void)ws_.sae(l);
      const auto features = b.value("features", std::vector<int>{});
      ScanThresholds thresholds;
      {
        std::lock_guard lock(store_mu_);
        thresholds = store_.thresholds();
      }
      if (b.contains("thresholds")) {
        thresholds.hyperactive = b["thresholds"].value("hyperactive", thresholds.hyperactive);
        thresholds.bos_ratio = b["thresholds"].value("bos_ratio", thresholds.bos_ratio);
      }
      const bool use_cache = b.value("use_cache", false);
      nlohmann::json echo = b;
      echo["corpus_id"] = corp->id;
      echo["layers"] = layers;
      const auto id = jobs_.submit(JobKind::scan, echo, [=, this](const JobQueue::Progress& progress) {
        std::unique_lock lock(model_mu_);
        nlohmann::json reports = nlohmann::json::array();
        for (std::size_t k = 0; k < layers.size(); ++k) {
          const auto& sae = ws_.sae(layers[k]);
          ScanReport report;
          if (use_cache) {
            const HookPoint hook = sae.hook();
            auto cache = cache_activations(*ws_.model, &sae, *corp, std::span<const HookPoint>(&hook, 1),
                                           ws_.config.effective_cache_dir());
            report = scan_features(sae, corp->id, corp->size(), cached_residuals(cache, sae.layer()), features, thresholds);
          } else {
            report = density_scan(*ws_.model, sae, *corp, features, thresholds);
          }
          {
            std::lock_guard slock(store_mu_);
            for (const auto& row : report.rows) store_.set_stats(row.feature, row.stats);
            if (options_.persist_store && !store_.path().empty()) store_.save();
          }
          reports.push_back(to_json(report));
          progress(static_cast<double>(k + 1) / static_cast<double>(layers.size()));
        }
        return nlohmann::json{{"kind", kind}, {"corpus_id", corp->id}, {"reports", reports}};
      });
      reply(res, 202, {{"job_id", id}, {"kind", "scan"}});
    }));

    server_.Post("/cache", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto b = body_of(req);
      const auto corp = corpus(b.value("corpus_id", "demo"));
      std::vector<int> layers = b.value("layers", ws_.layers());
      std::vector<HookPoint> hooks;
      for (int l : layers) hooks.push_back(ws_.model->handle().hook(l));
      nlohmann::json echo = b;
      echo["corpus_id"] = corp->id;
      echo["layers"] = layers;
      const auto id = jobs_.submit(JobKind::cache, echo, [=, this](const JobQueue::Progress&) {
        std::unique_lock lock(model_mu_);
        const SparseAutoencoder* sae = layers.size() == 1 && ws_.saes.count(layers[0]) ? ws_.saes.at(layers[0]).get() : nullptr;
        auto cache = cache_activations(*ws_.model, sae, *corp, hooks, ws_.config.effective_cache_dir());
        return nlohmann::json{{"directory", cache.directory().string()}, {"layers", cache.layers()}, {"corpus_id", corp->id}};
      });
      reply(res, 202, {{"job_id", id}, {"kind", "cache"}});
    }));

    server_.Get(R"(/jobs/([\w-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto rec = jobs_.get(req.matches[1]);
      if (!rec) throw Error(ErrorCode::not_found, "unknown job '" + std::string(req.matches[1]) + "'");
      reply(res, 200, to_json(*rec));
    }));

    server_.Get(R"(/jobs/([\w-]+)/result)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto rec = jobs_.get(req.matches[1]);
      if (!rec) throw Error(ErrorCode::not_found, "unknown job '" + std::string(req.matches[1]) + "'");
      if (rec->state == JobState::failed) return reply(res, 500, nlohmann::json{{"error", rec->error}});
      if (rec->state != JobState::done)
        throw Error(ErrorCode::busy, "job " + rec->id + " is " + to_string(rec->state));
      reply(res, 200, rec->result);
    }));
  }

  Workspace ws_;
  MetadataStore store_;
  ServiceOptions options_;
  mutable std::mutex store_mu_;
  mutable std::mutex corpora_mu_;
  std::map<std::string, std::shared_ptr<const Corpus>> corpora_;
  std::timed_mutex model_mu_;
  httplib::Server server_;
  std::thread thread_;
  JobQueue jobs_;  // declared last so its worker stops before the rest is destroyed
};

}  // namespace saelab
