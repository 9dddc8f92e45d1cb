#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "saelab/autointerp/autointerp.hpp"
#include "saelab/autointerp/http_provider.hpp"
#include "saelab/corpus/activation_cache.hpp"
#include "saelab/corpus/corpus.hpp"
#include "saelab/corpus/metadata_store.hpp"
#include "saelab/diagnostics/diagnostics.hpp"
#include "saelab/diagnostics/probe_suite.hpp"
#include "saelab/model/workspace.hpp"
#include "saelab/report/report.hpp"
#include "saelab/sae/checkpoint.hpp"
#include "saelab/sae/training.hpp"
#include "saelab/service/service.hpp"
#include "saelab/steering/steering.hpp"
#include "saelab/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace saelab;

namespace {

struct Globals {
  std::string config;
  std::string store;
};

WorkspaceConfig workspace_config(const Globals& g) {
  return g.config.empty() ? WorkspaceConfig{} : load_workspace_config(g.config);
}

fs::path store_path(const Globals& g) {
  if (!g.store.empty()) return g.store;
  return workspace_config(g).store;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void emit(const std::string& content, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << content;
    if (!content.empty() && content.back() != '\n') std::cout << '\n';
    return;
  }
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorCode::io, "cannot write " + out);
  f << content;
}

void emit(const json& j, const std::string& out) { emit(j.dump(2) + "\n", out); }

// Accepts a corpus document written by `ingest` or a raw text file.
Corpus load_corpus(const std::string& path, const std::string& format) {
  if (path == "demo") return make_corpus([] {
      std::vector<std::pair<std::string, std::string>> d;
      for (const auto& t : demo::corpus_texts()) d.emplace_back("", t);
      return d;
    }(), "bundled demo corpus");
  if (format.empty() && fs::path(path).extension() == ".json") {
    try {
      return json::parse(read_file(path)).get<Corpus>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ingest, path + ": " + e.what());
    }
  }
  return ingest_corpus(path, parse_corpus_format(format.empty() ? "plain-text" : format));
}

// "18", "17,18", "0..31".
std::vector<int> parse_layers(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      if (auto dots = part.find(".."); dots != std::string::npos) {
        const int a = std::stoi(part.substr(0, dots)), b = std::stoi(part.substr(dots + 2));
        for (int l = a; l <= b; ++l) out.push_back(l);
      } else if (!part.empty()) {
        out.push_back(std::stoi(part));
      }
    } catch (const std::exception&) {
      throw Error(ErrorCode::config, "bad layer list '" + s + "'");
    }
  }
  return out;
}

std::vector<double> parse_coefficients(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (part.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw Error(ErrorCode::spec, "bad coefficient '" + part + "'");
    }
  }
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    const auto a = part.find_first_not_of(' ');
    const auto b = part.find_last_not_of(' ');
    if (a != std::string::npos) out.push_back(part.substr(a, b - a + 1));
  }
  return out;
}

struct SteerArgs {
  std::string feature, prompt = "My favorite drink is", scale_mode = "current-activation", splice_mode = "delta-add";
  double coefficient = 0.0;
  double reference_max = 0.0;
  bool prompt_only_generation = false;
  GenerationConfig config;
};

void add_steer_options(CLI::App* cmd, SteerArgs& a) {
  cmd->add_option("--feature", a.feature, "Feature as LAYER/INDEX")->required();
  cmd->add_option("--prompt", a.prompt, "Prompt text");
  cmd->add_option("--scale-mode", a.scale_mode, "current-activation | max-activation | unit");
  cmd->add_option("--splice-mode", a.splice_mode, "delta-add | full-splice");
  cmd->add_option("--reference-max", a.reference_max, "Stored maximum activation for max-activation mode");
  cmd->add_flag("--generation-only", a.prompt_only_generation, "Do not intervene on prompt positions");
  cmd->add_option("--temperature", a.config.temperature);
  cmd->add_option("--max-new-tokens", a.config.max_new_tokens);
  cmd->add_option("--frequency-penalty", a.config.frequency_penalty);
  cmd->add_option("--seed", a.config.seed);
  cmd->add_option("--strength-multiplier", a.config.strength_multiplier);
}

SteeringSpec steering_spec(const SteerArgs& a, const MetadataStore* store) {
  SteeringSpec s;
  s.feature = FeatureId::parse(a.feature);
  s.coefficient = a.coefficient;
  s.scale_mode = parse_scale_mode(a.scale_mode);
  s.splice_mode = parse_splice_mode(a.splice_mode);
  s.reference_max = a.reference_max;
  s.apply_to_prompt = !a.prompt_only_generation;
  if (s.scale_mode == ScaleMode::max_activation && s.reference_max == 0.0 && store)
    if (auto r = store->get(s.feature); r && r->max_activation) s.reference_max = *r->max_activation;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-autoencoder feature analysis and steering toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Workspace config (JSON)");
  app.add_option("--store", g.store, "Metadata store file (overrides the config)");

  std::function<void()> action;

  // version
  auto* version = app.add_subcommand("version", "Print tool, model and SAE versions");
  version->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      json saes = json::object();
      for (const auto& [l, sae] : ws.saes) saes[std::to_string(l)] = sae->digest();
      emit(json{{"version", kVersion},
                {"model_id", ws.model->handle().model_id},
                {"model_digest", ws.model->weights_digest()},
                {"sae_digests", saes}},
           "");
    };
  });

  // ingest
  std::string ingest_path, ingest_format = "plain-text", ingest_out;
  auto* ingest = app.add_subcommand("ingest", "Read a text corpus into a corpus document");
  ingest->add_option("path", ingest_path, "Input file")->required();
  ingest->add_option("--format", ingest_format, "plain-text | one-doc-per-line | json-lines");
  ingest->add_option("--out", ingest_out, "Output corpus JSON");
  ingest->callback([&] {
    action = [&] {
      const auto c = ingest_corpus(ingest_path, parse_corpus_format(ingest_format));
      for (const auto& w : c.warnings) std::cerr << "warning: " << w << "\n";
      emit(json(c), ingest_out);
      std::cerr << "corpus " << c.id << ": " << c.size() << " documents\n";
    };
  });

  // cache
  std::string cache_corpus, cache_format, cache_layers = "18";
  auto* cache = app.add_subcommand("cache", "Compute and store residual activations for a corpus");
  cache->add_option("--corpus", cache_corpus, "Corpus JSON, text file, or 'demo'")->required();
  cache->add_option("--corpus-format", cache_format);
  cache->add_option("--layers", cache_layers, "Layers, e.g. 18 or 0..31");
  cache->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      const auto corpus = load_corpus(cache_corpus, cache_format);
      std::vector<HookPoint> hooks;
      const auto layers = parse_layers(cache_layers);
      for (int l : layers) hooks.push_back(ws.model->handle().hook(l));
      const SparseAutoencoder* sae = layers.size() == 1 && ws.saes.count(layers[0]) ? ws.saes.at(layers[0]).get() : nullptr;
      const auto before = ws.model->forward_passes();
      auto c = cache_activations(*ws.model, sae, corpus, hooks, ws.config.effective_cache_dir());
      emit(json{{"directory", c.directory().string()},
                {"corpus_id", corpus.id},
                {"layers", c.layers()},
                {"forward_passes", ws.model->forward_passes() - before}},
           "");
    };
  });

  // search
  std::string search_query;
  auto* search = app.add_subcommand("search", "Search feature descriptions (substring, or /regex/)");
  search->add_option("query", search_query)->required();
  search->callback([&] {
    action = [&] {
      MetadataStore store(store_path(g));
      json out = json::array();
      for (const auto& r : store.search(search_query)) out.push_back(to_json(r));
      emit(out, "");
    };
  });

  // import-descriptions
  std::string import_path, import_source = "imported";
  bool import_export = false;
  auto* import = app.add_subcommand("import-descriptions", "Import json-lines feature descriptions into the store");
  import->add_option("path", import_path, "json-lines file ('-' for stdin)")->required();
  import->add_option("--source", import_source, "Source label for rows without one");
  import->add_flag("--export", import_export, "Print the store's json-lines export afterwards");
  import->callback([&] {
    action = [&] {
      MetadataStore store(store_path(g));
      const auto result = store.import_transaction(
          [&] { return import_path == "-" ? std::string(std::istreambuf_iterator<char>(std::cin), {}) : read_file(import_path); },
          {}, import_source);
      store.save();
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
      std::cerr << "imported " << result.imported << ", unchanged " << result.unchanged << ", skipped " << result.skipped
                << "\n";
      if (import_export) std::cout << store.export_jsonl();
    };
  });

  // steer
  SteerArgs steer_args;
  std::string steer_out;
  bool steer_logits = false;
  auto* steer = app.add_subcommand("steer", "Generate with and without a feature intervention");
  add_steer_options(steer, steer_args);
  steer->add_option("--coeff", steer_args.coefficient, "Steering coefficient")->required();
  steer->add_option("--out", steer_out);
  steer->add_flag("--logits", steer_logits, "Include per-step logits");
  steer->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      MetadataStore store(store_path(g));
      const auto spec = steering_spec(steer_args, &store);
      const auto r = steer_generate(*ws.model, ws.sae(spec.feature.layer), steer_args.prompt, spec, steer_args.config);
      emit(to_json(r, steer_logits), steer_out);
    };
  });

  // sweep
  SteerArgs sweep_args;
  std::string sweep_coeffs = "-2,0,2,5,10", sweep_lexicon, sweep_out;
  auto* sweep_cmd = app.add_subcommand("sweep", "Steer across coefficients and score output quality");
  add_steer_options(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--coeffs", sweep_coeffs, "Comma-separated coefficients");
  sweep_cmd->add_option("--lexicon", sweep_lexicon, "Comma-separated concept words");
  sweep_cmd->add_option("--out", sweep_out, "Sweep report JSON");
  sweep_cmd->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      MetadataStore store(store_path(g));
      const auto spec = steering_spec(sweep_args, &store);
      const auto coeffs = parse_coefficients(sweep_coeffs);
      const auto result = sweep(*ws.model, ws.sae(spec.feature.layer), sweep_args.prompt, spec, coeffs, sweep_args.config,
                                [](std::size_t k, std::size_t n) { std::cerr << "sweep " << k << "/" << n << "\n"; });
      emit(to_json(sweep_quality(*ws.model, result, split_words(sweep_lexicon))), sweep_out);
    };
  });

  // scan
  bool scan_density = false, scan_bos = false, scan_use_cache = false, scan_record = false;
  std::string scan_corpus, scan_format, scan_layers = "18", scan_out;
  ScanThresholds scan_thresholds;
  auto* scan = app.add_subcommand("scan", "Activation density and begin-of-text anomaly scans");
  scan->add_flag("--density", scan_density);
  scan->add_flag("--bos", scan_bos);
  scan->add_option("--corpus", scan_corpus, "Corpus JSON, text file, or 'demo'")->required();
  scan->add_option("--corpus-format", scan_format);
  scan->add_option("--layers", scan_layers);
  scan->add_option("--hyperactive", scan_thresholds.hyperactive, "Density threshold");
  scan->add_option("--bos-ratio", scan_thresholds.bos_ratio, "Begin-of-text to in-text ratio threshold");
  scan->add_flag("--use-cache", scan_use_cache, "Read residuals through the activation cache");
  scan->add_flag("--record", scan_record, "Store the statistics in the metadata store");
  scan->add_option("--out", scan_out, "Scan JSON (one report per layer)");
  scan->callback([&] {
    action = [&] {
      if (!scan_density && !scan_bos) scan_density = scan_bos = true;
      auto ws = open_workspace(workspace_config(g));
      const auto corpus = load_corpus(scan_corpus, scan_format);
      std::optional<MetadataStore> store;
      if (scan_record) store.emplace(store_path(g));
      json reports = json::array();
      for (int l : parse_layers(scan_layers)) {
        const auto& sae = ws.sae(l);
        ScanReport r;
        if (scan_use_cache) {
          const HookPoint hook = sae.hook();
          auto c = cache_activations(*ws.model, &sae, corpus, std::span<const HookPoint>(&hook, 1),
                                     ws.config.effective_cache_dir());
          r = scan_features(sae, corpus.id, corpus.size(), cached_residuals(c, l), {}, scan_thresholds);
        } else {
          r = density_scan(*ws.model, sae, corpus, {}, scan_thresholds);
        }
        if (store)
          for (const auto& row : r.rows) store->set_stats(row.feature, row.stats);
        auto j = to_json(r);
        j["kinds"] = json::array();
        if (scan_density) j["kinds"].push_back("density");
        if (scan_bos) j["kinds"].push_back("bos");
        reports.push_back(j);
      }
      if (store) store->save();
      emit(reports.size() == 1 ? reports[0] : reports, scan_out);
    };
  });

  // confusion
  std::string confusion_suite, confusion_agg = "max", confusion_out;
  auto* confusion = app.add_subcommand("confusion", "Feature-by-category similarity matrix from term sets");
  confusion->add_option("--suite", confusion_suite, "Term-set suite; categories are named by feature id")->required();
  confusion->add_option("--aggregation", confusion_agg, "max | mean over a term's tokens");
  confusion->add_option("--out", confusion_out);
  confusion->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      MetadataStore store(store_path(g));
      const auto sets = term_sets_from_suite(load_suite(confusion_suite));
      if (sets.empty()) throw Error(ErrorCode::suite, "suite has no categories");
      const auto agg = confusion_agg == "mean" ? TermAggregation::mean : TermAggregation::max;
      auto m = similarity_confusion(*ws.model, ws.sae(sets.front().feature.layer), sets, agg);
      m.descriptions.clear();
      for (const auto& f : m.features) {
        auto r = store.get(f);
        m.descriptions.push_back(r && !r->descriptions.empty() ? r->descriptions.begin()->second.text : "");
      }
      for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
      emit(to_json(m), confusion_out);
    };
  });

  // specificity
  std::string spec_feature, spec_suite, spec_out;
  auto* specificity = app.add_subcommand("specificity", "Activation statistics over graded probe categories 0-3");
  specificity->add_option("--feature", spec_feature)->required();
  specificity->add_option("--suite", spec_suite)->required();
  specificity->add_option("--out", spec_out);
  specificity->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      const auto f = FeatureId::parse(spec_feature);
      emit(to_json(specificity_score(*ws.model, ws.sae(f.layer), f, load_suite(spec_suite))), spec_out);
    };
  });

  // context
  std::string ctx_feature, ctx_probes, ctx_out;
  auto* context = app.add_subcommand("context", "Per-token activations over probe sentences");
  context->add_option("--feature", ctx_feature)->required();
  context->add_option("--probes", ctx_probes)->required();
  context->add_option("--out", ctx_out);
  context->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      const auto f = FeatureId::parse(ctx_feature);
      emit(to_json(context_probe(*ws.model, ws.sae(f.layer), f, load_suite(ctx_probes).all_items())), ctx_out);
    };
  });

  // highlight
  std::string hl_feature, hl_text, hl_file, hl_out;
  auto* highlight = app.add_subcommand("highlight", "Token-level activations of one feature over a text");
  highlight->add_option("--feature", hl_feature)->required();
  auto* hl_text_opt = highlight->add_option("--text", hl_text);
  highlight->add_option("--file", hl_file)->excludes(hl_text_opt);
  highlight->add_option("--out", hl_out);
  highlight->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      const auto f = FeatureId::parse(hl_feature);
      const std::string text = hl_file.empty() ? hl_text : read_file(hl_file);
      emit(to_json(activation_highlight(*ws.model, ws.sae(f.layer), text, f)), hl_out);
    };
  });

  // interp
  std::string interp_feature, interp_corpus, interp_format, interp_heldout, interp_provider = "stub", interp_out;
  std::size_t interp_k = 5;
  bool interp_score = false, interp_spearman = false;
  auto* interp = app.add_subcommand("interp", "Describe a feature from top-activating snippets");
  interp->add_option("--feature", interp_feature)->required();
  interp->add_option("--corpus", interp_corpus, "Evidence corpus")->required();
  interp->add_option("--corpus-format", interp_format);
  interp->add_option("--heldout", interp_heldout, "Scoring corpus (defaults to evidence-free documents of --corpus)");
  interp->add_option("--provider", interp_provider, "stub | http (configured under \"provider\")");
  interp->add_option("--k", interp_k, "Evidence snippets");
  interp->add_flag("--score", interp_score);
  interp->add_flag("--spearman", interp_spearman, "Rank correlation instead of Pearson");
  interp->add_option("--out", interp_out);
  interp->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      const auto f = FeatureId::parse(interp_feature);
      const auto& sae = ws.sae(f.layer);
      std::unique_ptr<InterpretationProvider> provider;
      if (interp_provider == "stub") {
        provider = std::make_unique<StubProvider>(StubProvider::echo());
      } else if (interp_provider == "http") {
        if (ws.config.provider.is_null()) throw Error(ErrorCode::config, "no \"provider\" section in the workspace config");
        provider = std::make_unique<HttpProvider>(provider_config_from_json(ws.config.provider));
      } else {
        throw Error(ErrorCode::config, "unknown provider '" + interp_provider + "'");
      }
      const auto corpus = load_corpus(interp_corpus, interp_format);
      const auto evidence = collect_evidence(*ws.model, sae, f, corpus, interp_k);
      for (const auto& w : evidence.warnings) std::cerr << "warning: " << w << "\n";
      auto record = describe_feature(evidence, *provider);
      if (interp_score) {
        std::vector<std::string> used;
        for (const auto& s : evidence.snippets) used.push_back(s.doc_id);
        Corpus heldout;
        if (!interp_heldout.empty()) {
          heldout = load_corpus(interp_heldout, interp_format);
        } else {
          std::vector<std::pair<std::string, std::string>> rest;
          for (const auto& d : corpus.documents)
            if (std::find(used.begin(), used.end(), d.id) == used.end()) rest.emplace_back(d.id, d.text);
          heldout = make_corpus(rest, "heldout remainder of " + corpus.id);
        }
        const auto kind = interp_spearman ? CorrelationKind::spearman : CorrelationKind::pearson;
        const auto score = score_interpretation(*ws.model, sae, f, record.description, heldout, *provider, used, kind);
        record.scored = true;
        record.score = score.score;
        record.statistic = score.statistic;
      }
      MetadataStore store(store_path(g));
      store.put_interpretation(f, to_json(record));
      store.upsert_description(f, record.provider_id, record.description);
      store.save();
      emit(to_json(record), interp_out);
    };
  });

  // report
  std::string report_in, report_out, report_format = "html";
  auto* report = app.add_subcommand("report", "Render a diagnostics JSON document");
  report->add_option("--in", report_in, "Report JSON")->required();
  report->add_option("--out", report_out, "Output path")->required();
  report->add_option("--format", report_format, "html | markdown | csv | json");
  report->callback([&] {
    action = [&] {
      RenderSpec spec;
      spec.format = parse_report_format(report_format);
      spec.series_prefix = fs::path(report_out).stem().string();
      json j;
      try {
        j = json::parse(read_file(report_in));
      } catch (const json::exception& e) {
        throw Error(ErrorCode::render, report_in + ": " + e.what());
      }
      write_document(render_report_json(j, spec), report_out);
    };
  });

  // serve
  int serve_port = 8080;
  std::string serve_host = "127.0.0.1", serve_seed;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--port", serve_port);
  serve->add_option("--host", serve_host);
  serve->add_option("--seed-descriptions", serve_seed, "json-lines descriptions imported at start-up");
  serve->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      MetadataStore store(store_path(g));
      for (const auto& [id, text] : demo::descriptions()) store.upsert_description(id, "demo", text);
      if (!serve_seed.empty()) {
        std::ifstream in(serve_seed);
        if (!in) throw Error(ErrorCode::io, "cannot read " + serve_seed);
        store.import_jsonl(in, {}, "seed");
      }
      Service service(std::move(ws), std::move(store));
      std::cerr << "listening on http://" << serve_host << ":" << serve_port << "\n";
      service.listen(serve_host, serve_port);
    };
  });

  // train
  std::string train_corpus, train_format, train_out;
  int train_layer = demo::kLayer, train_features = 64;
  SaeTrainingConfig train_cfg;
  auto* train = app.add_subcommand("train", "Train an SAE on cached residuals of a corpus");
  train->add_option("--corpus", train_corpus)->required();
  train->add_option("--corpus-format", train_format);
  train->add_option("--layer", train_layer);
  train->add_option("--features", train_features);
  train->add_option("--l1", train_cfg.l1_coefficient);
  train->add_option("--lr", train_cfg.learning_rate);
  train->add_option("--batch-size", train_cfg.batch_size);
  train->add_option("--steps", train_cfg.steps);
  train->add_option("--seed", train_cfg.seed);
  train->add_option("--out", train_out, "Archive path (.safetensors)")->required();
  train->callback([&] {
    action = [&] {
      auto ws = open_workspace(workspace_config(g));
      const auto corpus = load_corpus(train_corpus, train_format);
      const HookPoint hook = ws.model->handle().hook(train_layer);
      auto c = cache_activations(*ws.model, nullptr, corpus, std::span<const HookPoint>(&hook, 1),
                                 ws.config.effective_cache_dir());
      const auto data = c.dataset(train_layer);
      const auto result = train_sae(data, ws.model->handle().d_model, train_features, train_layer, train_cfg);
      save_sae(result.sae, train_out);
      emit(json{{"archive", train_out},
                {"tokens", data.rows()},
                {"final_loss", result.loss_history.empty() ? 0.0 : result.loss_history.back()},
                {"mean_l0", mean_l0(result.sae, data)}},
           "");
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (action) action();
  } catch (const Error& e) {
    std::cerr << "error: " << code_name(e.code()) << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
