// Runs every primary acceptance criterion and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <thread>

#include "httplib.h"
#include "saelab/autointerp/autointerp.hpp"
#include "saelab/corpus/activation_cache.hpp"
#include "saelab/corpus/metadata_store.hpp"
#include "saelab/diagnostics/diagnostics.hpp"
#include "saelab/diagnostics/probe_suite.hpp"
#include "saelab/sae/checkpoint.hpp"
#include "saelab/service/service.hpp"
#include "saelab/steering/steering.hpp"
#include "support.hpp"

using namespace saelab;
using namespace saelab::fixtures;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<std::pair<std::string, std::string>> demo_docs() {
  std::vector<std::pair<std::string, std::string>> docs;
  for (const auto& t : demo::corpus_texts()) docs.emplace_back("", t);
  return docs;
}

// ------------------------------------------------------------------ no-op

Outcome check_noop_steering() {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  std::vector<std::string> words;
  for (const auto& t : demo::corpus_texts()) {
    std::stringstream in(t);
    for (std::string x; in >> x;) words.push_back(x);
  }
  Gen g(2024);
  int identical = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::string prompt;
    for (int k = g.integer(1, 6); k > 0; --k)
      prompt += (prompt.empty() ? "" : " ") + words[static_cast<std::size_t>(g.integer(0, static_cast<int>(words.size()) - 1))];
    SteeringSpec s;
    s.feature = {demo::kLayer, g.integer(0, sae.n_features() - 1)};
    s.scale_mode = static_cast<ScaleMode>(g.integer(0, 2));
    s.splice_mode = static_cast<SpliceMode>(g.integer(0, 1));
    s.reference_max = g.uniform(0.5, 5.0);
    s.apply_to_prompt = g.coin();
    s.coefficient = 0.0;
    GenerationConfig c;
    c.max_new_tokens = 20;
    c.seed = static_cast<std::uint64_t>(trial);
    c.strength_multiplier = g.uniform(0.5, 3.0);
    const auto r = steer_generate(*w.model, sae, prompt, s, c);
    identical += r.steered_text == r.baseline_text && r.steered_tokens == r.baseline_tokens &&
                 r.steered_logits == r.baseline_logits && !r.breakdown;
  }
  return {identical == 20, std::to_string(identical) + "/20 triples bit-identical"};
}

// -------------------------------------------------------- gradient check

Outcome check_gradient_check() {
  Gen g(2);
  double worst = 0.0;
  const double h = 1e-6;
  for (auto [d, n] : std::vector<std::pair<int, int>>{{2, 4}, {3, 5}, {4, 8}, {6, 12}, {8, 16}}) {
    for (int trial = 0; trial < 3; ++trial) {
      auto sae = random_sae(g, 0, d, n);
      const auto batch = g.matrix(static_cast<std::size_t>(g.integer(1, 6)), static_cast<std::size_t>(d));
      const double lambda = g.uniform(0.0, 0.5);
      const auto lg = loss_and_gradients(sae, batch, lambda);
      auto probe = [&](std::span<double> params, std::span<const double> analytic) {
        for (std::size_t i = 0; i < params.size(); ++i) {
          const double keep = params[i];
          params[i] = keep + h;
          const double up = loss_value(sae, batch, lambda);
          params[i] = keep - h;
          const double down = loss_value(sae, batch, lambda);
          params[i] = keep;
          const double numeric = (up - down) / (2 * h);
          worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6}));
        }
      };
      probe(sae.mutable_w_enc().data(), lg.grad.w_enc.data());
      probe(sae.mutable_b_enc(), lg.grad.b_enc);
      probe(sae.mutable_w_dec().data(), lg.grad.w_dec.data());
      probe(sae.mutable_b_dec(), lg.grad.b_dec);
    }
  }
  return {worst < 1e-4, "max relative error " + num(worst) + " (< 1e-4)"};
}

// ------------------------------------------------------- superposition

// Cosines computed here, independently of the library's metric.
double oracle_mmcs(const Matrix& learned, const Matrix& truth) {
  double total = 0.0;
  for (std::size_t t = 0; t < truth.rows(); ++t) {
    double best = -1.0;
    for (std::size_t l = 0; l < learned.rows(); ++l) {
      double dot = 0, nl = 0, nt = 0;
      for (std::size_t k = 0; k < truth.cols(); ++k) {
        dot += learned(l, k) * truth(t, k);
        nl += learned(l, k) * learned(l, k);
        nt += truth(t, k) * truth(t, k);
      }
      best = std::max(best, dot / std::sqrt(nl * nt));
    }
    total += best;
  }
  return total / static_cast<double>(truth.rows());
}

Outcome check_superposition() {
  const auto truth = random_dictionary(50, 20, 2024);
  const auto data = superposition_dataset(truth, 20000, 3.0, 7);
  SaeTrainingConfig c;
  c.l1_coefficient = 0.03;
  c.learning_rate = 1e-3;
  c.batch_size = 64;
  c.steps = 5000;
  c.decay_fraction = 1.0;
  c.seed = 1;
  const auto r = train_sae(data, 20, 100, 0, c);
  const double ours = oracle_mmcs(r.sae.w_dec(), truth);
  const double lib = mean_max_cosine_similarity(r.sae.w_dec(), truth);
  return {ours >= 0.8 && std::abs(ours - lib) < 1e-9,
          "mmcs " + num(ours) + " (library " + num(lib) + ", >= 0.8)"};
}

// ---------------------------------------------------------------- scans

Outcome check_scans() {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  const auto corpus = make_corpus(demo_docs());
  const auto report = density_scan(*w.model, sae, corpus);

  // Independent per-token loop over fresh sessions.
  std::vector<FeatureStats> oracle(static_cast<std::size_t>(sae.n_features()));
  std::size_t text_tokens = 0;
  for (const auto& doc : corpus.documents) {
    const auto ids = token_ids(w.model->tokenize(doc.text));
    auto session = w.model->start_session({});
    for (auto id : ids) session->append(id, 0, true);
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const auto& h = session->residual(sae.layer(), p);
      if (p > 0) ++text_tokens;
      for (int i = 0; i < sae.n_features(); ++i) {
        double pre = 0.0;
        for (std::size_t k = 0; k < h.size(); ++k) pre += sae.w_enc()(static_cast<std::size_t>(i), k) * h[k];
        pre += sae.b_enc()[static_cast<std::size_t>(i)];
        const double a = pre > 0.0 ? pre : 0.0;
        auto& s = oracle[static_cast<std::size_t>(i)];
        if (p == 0) {
          s.bos_activation = std::max(s.bos_activation, a);
        } else {
          s.max_in_text_activation = std::max(s.max_in_text_activation, a);
          if (a > 0.0) ++s.active_tokens;
        }
      }
    }
  }
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    const auto& s = report.rows[i].stats;
    const double density = static_cast<double>(oracle[i].active_tokens) / static_cast<double>(text_tokens);
    mismatches += s.active_tokens != oracle[i].active_tokens || s.total_tokens != text_tokens || s.density != density ||
                  s.bos_activation != oracle[i].bos_activation ||
                  s.max_in_text_activation != oracle[i].max_in_text_activation;
  }

  // Fixture: feature 0 reads coordinate 0, which carries `bos` at BOS and at most `text` afterwards.
  Matrix enc(3, 2), dec(3, 2);
  enc(0, 0) = enc(1, 1) = 1.0;
  enc(2, 1) = -1.0;
  dec(0, 0) = dec(1, 1) = dec(2, 1) = 1.0;
  const SparseAutoencoder fixture_sae(0, enc, Vector{0.0, 0.0, 0.0}, dec, Vector{0.0, 0.0});
  auto flagged = [&](double bos, double text) {
    ResidualSource src = [&](std::size_t) {
      std::vector<Vector> r = {{bos, 0.0}};
      for (int p = 1; p <= 4; ++p) r.push_back({text * p / 4.0, 0.5});
      return r;
    };
    const auto rep = scan_features(fixture_sae, "fixture", 3, src);
    const auto flags = rep.flags(rep.rows[0]);
    return std::find(flags.begin(), flags.end(), FeatureFlag::bos_anomalous) != flags.end();
  };
  const bool anomalous = flagged(20.0, 2.0) && flagged(300.0, 3.0);
  const bool uniform = !flagged(2.0, 1.0) && !flagged(1.0, 1.0);
  return {corpus.size() == 10 && mismatches == 0 && anomalous && uniform,
          std::to_string(mismatches) + " mismatching features over " + std::to_string(corpus.size()) +
              " docs; ratio 10 flagged " + (anomalous ? "yes" : "no") + "; ratio 2 unflagged " + (uniform ? "yes" : "no")};
}

// ------------------------------------------------------------ confusion

Outcome check_confusion() {
  // Orthonormal concepts, three words each, no mixing.
  SyntheticModelSpec spec;
  spec.model_id = "disjoint";
  spec.dictionary = demo::orthonormal_rows(5, 8, 77);
  spec.n_layers = 2;
  spec.mix = {0.0, 0.0};
  spec.positional_scale = 0.0;
  spec.bos_loadings = {{4, 1.0}};
  std::vector<FeatureTerms> sets;
  for (int c = 0; c < 4; ++c) {
    FeatureTerms t{FeatureId{1, c}, "cat" + std::to_string(c), {}};
    for (int k = 0; k < 3; ++k) {
      const std::string word = "w" + std::to_string(c) + "_" + std::to_string(k);
      spec.vocabulary.push_back({word, {{c, 0.5 + 0.25 * k}}});
      t.terms.push_back(word);
    }
    sets.push_back(t);
  }
  SyntheticModel model(spec);
  Matrix enc(10, 8), dec(10, 8);
  Vector bias(10, -100.0);
  for (std::size_t c = 0; c < 4; ++c) {
    auto u = spec.dictionary.row(c);
    std::copy(u.begin(), u.end(), enc.row(c).begin());
    std::copy(u.begin(), u.end(), dec.row(c).begin());
    bias[c] = -0.05;
  }
  for (std::size_t r = 4; r < 10; ++r) dec(r, r % 8) = 1.0;
  const SparseAutoencoder sae(1, enc, bias, dec, Vector(8, 0.0));

  const auto m = similarity_confusion(model, sae, sets);
  bool diagonal = true;
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t c = 0; c < 4; ++c)
      diagonal = diagonal && (f == c ? m.values[f][c] > 0.0 : m.values[f][c] == 0.0);

  Gen g(10);
  double perm_dev = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = sets;
    for (auto& s : shuffled) std::shuffle(s.terms.begin(), s.terms.end(), g.rng);
    const auto p = similarity_confusion(model, sae, shuffled);
    for (std::size_t f = 0; f < 4; ++f)
      for (std::size_t c = 0; c < 4; ++c) perm_dev = std::max(perm_dev, std::abs(p.values[f][c] - m.values[f][c]));
  }

  // Overlapping features on the demo world; scale the coffee encoder row.
  const auto w = demo::make_world();
  const auto& demo_sae = *w.saes.at(demo::kLayer);
  const std::vector<FeatureTerms> overlap = {
      {{demo::kLayer, demo::kCoffee}, "coffee", {"coffee", "espresso", "café"}},
      {{demo::kLayer, demo::kPlace}, "place", {"café", "shop", "street"}},
      {{demo::kLayer, demo::kMorning}, "morning", {"morning", "routine"}}};
  const auto base = similarity_confusion(*w.model, demo_sae, overlap);
  double scale_dev = 0.0;
  for (double k : {0.25, 3.0, 17.0}) {
    SparseAutoencoder scaled = demo_sae;
    for (auto& x : scaled.mutable_w_enc().row(demo::kCoffee)) x *= k;
    scaled.mutable_b_enc()[demo::kCoffee] *= k;
    const auto s = similarity_confusion(*w.model, scaled, overlap);
    for (std::size_t c = 0; c < 3; ++c) scale_dev = std::max(scale_dev, std::abs(s.values[0][c] - base.values[0][c]));
  }
  return {diagonal && perm_dev < 1e-12 && scale_dev < 1e-12,
          std::string("diagonal ") + (diagonal ? "exact" : "violated") + "; permutation deviation " + num(perm_dev) +
              "; scaling deviation " + num(scale_dev)};
}

// ---------------------------------------------------------- specificity

Outcome check_specificity() {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  // Coffee loading per level: 0, 0.2, 0.7, 1.0.
  const std::vector<std::vector<std::string>> level_words = {
      {"museum", "quantum", "street", "painting"}, {"ucc"}, {"app"}, {"coffee", "espresso", "latte", "crema"}};
  const std::vector<std::string> filler = {"the", "is", "and", "with", "about", "in"};
  Gen g(12);
  int monotone = 0;
  const int trials = 10;
  for (int trial = 0; trial < trials; ++trial) {
    ProbeSuite suite;
    for (std::size_t level = 0; level < 4; ++level) {
      ProbeCategory cat{std::to_string(level), {}};
      for (int s = 0; s < 4; ++s) {
        std::string sentence;
        for (int k = g.integer(3, 8); k > 0; --k) {
          const auto& pool = g.coin() ? level_words[level] : filler;
          sentence += (sentence.empty() ? "" : " ") + pool[static_cast<std::size_t>(g.integer(0, static_cast<int>(pool.size()) - 1))];
        }
        cat.items.push_back(sentence + " " + level_words[level][0]);
      }
      suite.categories.push_back(cat);
    }
    const auto r = specificity_score(*w.model, sae, {demo::kLayer, demo::kCoffee}, suite);
    bool ok = true;
    for (std::size_t c = 1; c < 4; ++c)
      ok = ok && r.categories[c].max > r.categories[c - 1].max &&
           r.categories[c].mean_nonzero > r.categories[c - 1].mean_nonzero;
    monotone += ok;
  }
  return {monotone == trials, std::to_string(monotone) + "/" + std::to_string(trials) + " suites strictly increasing"};
}

// ---------------------------------------------------------- attribution

Outcome check_attribution_vs_ablation() {
  Gen g(7);
  double linear_dev = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto spec = tiny_spec(static_cast<std::uint64_t>(20 + trial), 8, 12, 4, 0.0, g.uniform(0.0, 0.5));
    SyntheticModel m(spec);
    const int layer = g.integer(0, 3);
    const auto sae = planted_tiny_sae(spec, layer);
    const FeatureId f{layer, g.integer(0, 11)};
    const auto target = static_cast<TokenId>(g.integer(SyntheticModel::kFirstOrdinary, m.handle().vocab_size - 1));
    const auto attr = attribution(m, sae, g.prompt(2, 6), f, target);
    const auto delta = ablation_logit_delta(m, sae, token_ids(attr.tokens), f.index, target);
    for (std::size_t p = 0; p < delta.size(); ++p) linear_dev = std::max(linear_dev, std::abs(attr.attribution[p] + delta[p]));
  }
  auto ratio_error = [](double scale) {
    auto spec = tiny_spec(31, 8, 12, 3, 0.5, 0.2);
    spec.vocabulary.push_back({"probe", {{2, scale}}});
    SyntheticModel m(spec);
    const auto sae = planted_tiny_sae(spec, 0, 24, 0.0);
    const auto attr = attribution(m, sae, "alpha probe", {0, 2}, SyntheticModel::kFirstOrdinary);
    const auto delta = ablation_logit_delta(m, sae, token_ids(attr.tokens), 2, SyntheticModel::kFirstOrdinary);
    const std::size_t last = delta.size() - 1;
    return std::abs(attr.attribution[last] / -delta[last] - 1.0);
  };
  const double big = ratio_error(2.0), small = ratio_error(0.02);
  return {linear_dev <= 1e-9 && small < big && small < 0.05,
          "linear max deviation " + num(linear_dev) + "; nonlinear |ratio-1| " + num(big) + " -> " + num(small)};
}

// ----------------------------------------------------------- autointerp

Outcome check_autointerp() {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  std::vector<std::pair<std::string, std::string>> docs;
  const std::vector<std::string> texts = {"coffee coffee and espresso", "a cup of tea", "the latte was hot",
                                          "quantum physics", "I drank app and ucc", "espresso, ristretto, crema"};
  for (std::size_t i = 0; i < texts.size(); ++i) docs.emplace_back("h" + std::to_string(i), texts[i]);
  const auto heldout = make_corpus(docs);
  const FeatureId f{demo::kLayer, demo::kCoffee};
  auto echo = StubProvider::echo();
  auto negated = StubProvider::negated();
  auto constant = StubProvider::constant(0.5);
  const auto a = score_interpretation(*w.model, sae, f, "coffee", heldout, echo).score;
  const auto b = score_interpretation(*w.model, sae, f, "coffee", heldout, negated).score;
  const auto c = score_interpretation(*w.model, sae, f, "coffee", heldout, constant).score;
  auto show = [](const std::optional<double>& v) { return v ? num(*v) : std::string("undefined"); };
  return {a == 1.0 && b == -1.0 && !c.has_value(),
          "echo " + show(a) + ", negated " + show(b) + ", constant " + show(c)};
}

// ---------------------------------------------------------- persistence

Outcome check_persistence() {
  TempDir dir("saelab-accept");
  Gen g(3);
  const auto sae = random_sae(g, 2, 8, 20);
  save_sae(sae, dir / "s.safetensors");
  const auto back = load_sae(dir / "s.safetensors", 2);
  double sae_dev = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto x = g.vector(8);
    sae_dev = std::max(sae_dev, max_abs_diff(back.encode_dense(x), sae.encode_dense(x)));
    sae_dev = std::max(sae_dev, max_abs_diff(back.decode_dense(back.encode_dense(x)), sae.decode_dense(sae.encode_dense(x))));
  }

  const auto w = demo::make_world();
  const auto& demo_sae = *w.saes.at(demo::kLayer);
  const auto corpus = make_corpus(demo_docs());
  const HookPoint hook{demo::kLayer};
  cache_activations(*w.model, &demo_sae, corpus, std::span<const HookPoint>(&hook, 1), dir / "cache");
  const auto passes = w.model->forward_passes();
  const auto hit = cache_activations(*w.model, &demo_sae, corpus, std::span<const HookPoint>(&hook, 1), dir / "cache");
  const bool no_recompute = w.model->forward_passes() == passes;
  std::size_t cache_mismatch = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto cached = hit.residuals(i, demo::kLayer);
    const auto fresh = forward_with_capture(*w.model, corpus.documents[i].text, std::span<const HookPoint>(&hook, 1))
                           .residuals.at(demo::kLayer);
    // The cache stores float32; recomputation is rounded the same way.
    for (std::size_t p = 0; p < fresh.size(); ++p)
      for (std::size_t k = 0; k < fresh[p].size(); ++k)
        cache_mismatch += cached[p][k] != static_cast<double>(static_cast<float>(fresh[p][k]));
  }

  const auto original = read_text(fixture("published_features.jsonl"));
  MetadataStore store;
  std::istringstream in(original);
  store.import_jsonl(in);
  const bool bytes_equal = store.export_jsonl() == original;
  return {sae_dev <= 1e-9 && no_recompute && cache_mismatch == 0 && bytes_equal,
          "SAE max deviation " + num(sae_dev) + "; cache hit " + (no_recompute ? "without" : "WITH") +
              " recomputation, " + std::to_string(cache_mismatch) + " differing values; descriptions " +
              (bytes_equal ? "byte-identical" : "differ")};
}

// -------------------------------------------------------------- service

Outcome check_service() {
  TempDir dir("saelab-accept-svc");
  WorkspaceConfig config;
  config.cache_dir = dir / "cache";
  config.store = dir / "store.json";
  MetadataStore store(config.store);
  for (const auto& [id, text] : demo::descriptions()) store.upsert_description(id, "planted", text);
  store.set_max_activation({demo::kLayer, demo::kCoffee}, 1.0);
  Service svc(open_workspace(config), std::move(store));
  httplib::Client client("127.0.0.1", svc.start_background());
  client.set_read_timeout(60, 0);
  auto call = [&](const std::string& method, const std::string& path, const json& body = {}) -> std::pair<int, json> {
    auto r = method == "GET" ? client.Get(path) : client.Post(path, body.dump(), "application/json");
    if (!r) return {0, json()};
    return {r->status, json::parse(r->body)};
  };
  auto wait = [&](const std::string& id) {
    for (int i = 0; i < 12000; ++i) {
      auto [st, j] = call("GET", "/jobs/" + id);
      if (st != 200 || j["state"] == "done" || j["state"] == "failed") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return json();
  };

  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  const std::string coffee = FeatureId(demo::kLayer, demo::kCoffee).str();
  auto [ss, search] = call("GET", "/features?query=coffee");
  check(ss == 200 && search["total"].get<int>() >= 1 && search["features"][0]["feature"] == coffee, "search");

  json steer{{"prompt", "I went to the museum and saw"}, {"feature", coffee}, {"scale_mode", "max-activation"},
             {"config", {{"max_new_tokens", 30}}}};
  steer["coefficient"] = 0.0;
  auto [zs, zero] = call("POST", "/steer", steer);
  check(zs == 200 && zero["identical_to_baseline"] == true && zero["steered_tokens"] == zero["baseline_tokens"],
        "steer c=0");
  steer["coefficient"] = 5.0;
  auto [ps, pos] = call("POST", "/steer", steer);
  const auto lex = demo::lexicon(demo::kCoffee);
  check(ps == 200 && pos["identical_to_baseline"] == false &&
            count_words(pos["steered_text"].get<std::string>(), lex) > count_words(pos["baseline_text"].get<std::string>(), lex),
        "steer c>0");

  json sweep_body = steer;
  sweep_body["coefficients"] = {0.0, 5.0};
  sweep_body["lexicon"] = lex;
  auto [ws, sweep_job] = call("POST", "/sweep", sweep_body);
  bool sweep_ok = ws == 202;
  if (sweep_ok) {
    const auto job = wait(sweep_job["job_id"]);
    auto [rs, result] = call("GET", "/jobs/" + sweep_job["job_id"].get<std::string>() + "/result");
    sweep_ok = job["state"] == "done" && rs == 200 && result["report"]["entries"].size() == 2 &&
               result["report"]["entries"][0]["text"] == zero["steered_text"] &&
               result["report"]["entries"][1]["text"] == pos["steered_text"];
  }
  check(sweep_ok, "sweep job");

  auto [cs, scan_job] = call("POST", "/scans", {{"corpus_id", "demo"}, {"kind", "both"}});
  bool scan_ok = cs == 202;
  if (scan_ok) {
    const auto job = wait(scan_job["job_id"]);
    auto [rs, result] = call("GET", "/jobs/" + scan_job["job_id"].get<std::string>() + "/result");
    auto [bs, bos] = call("GET", "/features/18/" + std::to_string(demo::kBosFeature));
    scan_ok = job["state"] == "done" && rs == 200 &&
              result["reports"][0]["features"].size() == static_cast<std::size_t>(demo::kSaeFeatures) && bs == 200 &&
              bos["flags"] == json::array({"bos-anomalous"});
  }
  check(scan_ok, "scan job");
  check(call("GET", "/features/18/9999").first == 404, "404 mapping");

  std::string detail = "search, steer c=0, steer c>0, sweep job, scan job";
  if (!failures.empty()) {
    detail = "failed:";
    for (const auto& f : failures) detail += " " + f;
  }
  return {failures.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"no-op steering", 10, check_noop_steering},
      {"SAE gradient check", 30, check_gradient_check},
      {"superposition recovery", 300, check_superposition},
      {"density/BOS scans equal brute force", 30, check_scans},
      {"confusion-matrix properties", 30, check_confusion},
      {"specificity monotonicity", 30, check_specificity},
      {"attribution vs ablation", 60, check_attribution_vs_ablation},
      {"autointerp scoring", 5, check_autointerp},
      {"persistence round trips", 60, check_persistence},
      {"end-to-end service", 120, check_service},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s  %s: %s [%.2fs of %.0fs]%s\n", pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), secs,
                c.budget_seconds, in_time ? "" : " over budget");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed;
}
