#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "saelab/corpus/activation_cache.hpp"
#include "saelab/corpus/corpus.hpp"
#include "saelab/corpus/metadata_store.hpp"
#include "saelab/diagnostics/probe_suite.hpp"
#include "saelab/model/language_model.hpp"
#include "saelab/sae/sparse_autoencoder.hpp"
#include "saelab/stats.hpp"
#include "saelab/steering/steering.hpp"

namespace saelab {

inline constexpr const char* kHighlightSchema = "saelab.highlight/1";
inline constexpr const char* kSpecificitySchema = "saelab.specificity/1";
inline constexpr const char* kContextSchema = "saelab.context/1";
inline constexpr const char* kConfusionSchema = "saelab.confusion/1";
inline constexpr const char* kScanSchema = "saelab.scan/1";
inline constexpr const char* kSweepSchema = "saelab.sweep/1";

namespace detail {

inline void check_feature(const SparseAutoencoder& sae, const FeatureId& f) {
  if (f.layer != sae.layer())
    throw Error(ErrorCode::spec, "feature " + f.str() + " is not in the SAE's layer " + std::to_string(sae.layer()));
  sae.check_index(f.index);
}

}  // namespace detail

struct TokenActivations {
  std::vector<Token> tokens;
  std::vector<double> activations;  // one per token, begin-of-text included
};

inline TokenActivations token_activations(const LanguageModel& model, const SparseAutoencoder& sae, std::string_view text,
                                          int feature) {
  const HookPoint hook = sae.hook();
  auto trace = forward_with_capture(model, text, std::span<const HookPoint>(&hook, 1));
  TokenActivations out;
  out.tokens = std::move(trace.tokens);
  for (const auto& h : trace.residuals.at(hook.layer)) out.activations.push_back(sae.activation(h, feature));
  return out;
}

// Forward pass at the SAE's hook with the per-token sparse feature map filled
// in (strictly positive entries only).
inline ActivationTrace trace_with_features(const LanguageModel& model, const SparseAutoencoder& sae, std::string_view text) {
  const HookPoint hook = sae.hook();
  auto trace = forward_with_capture(model, text, std::span<const HookPoint>(&hook, 1));
  for (const auto& h : trace.residuals.at(hook.layer)) {
    std::map<FeatureId, double> m;
    for (const auto& [i, a] : sae.encode(h)) m[FeatureId{hook.layer, i}] = a;
    trace.feature_activations.push_back(std::move(m));
  }
  return trace;
}

// ---------------------------------------------------------------- highlight

struct HighlightRow {
  std::string token;
  TextSpan span;
  double activation = 0.0;
  double opacity = 0.0;
  bool is_bos = false;
};

struct HighlightResult {
  FeatureId feature;
  std::string text;
  std::vector<HighlightRow> rows;  // first row is begin-of-text, opacity 0
  double bos_activation = 0.0;
  double max_activation = 0.0;  // over non-BOS tokens
};

inline HighlightResult highlight_from(const FeatureId& feature, std::string_view text, const TokenActivations& ta) {
  HighlightResult r;
  r.feature = feature;
  r.text = std::string(text);
  for (std::size_t p = 0; p < ta.tokens.size(); ++p) {
    if (ta.tokens[p].is_bos) r.bos_activation = std::max(r.bos_activation, ta.activations[p]);
    else r.max_activation = std::max(r.max_activation, ta.activations[p]);
  }
  for (std::size_t p = 0; p < ta.tokens.size(); ++p) {
    HighlightRow row{ta.tokens[p].text, ta.tokens[p].span, ta.activations[p], 0.0, ta.tokens[p].is_bos};
    if (!row.is_bos && r.max_activation > 0.0) row.opacity = row.activation / r.max_activation;
    r.rows.push_back(std::move(row));
  }
  return r;
}

inline HighlightResult activation_highlight(const LanguageModel& model, const SparseAutoencoder& sae, std::string_view text,
                                            const FeatureId& feature) {
  if (text.empty()) throw Error(ErrorCode::precondition, "highlight text must be non-empty");
  detail::check_feature(sae, feature);
  return highlight_from(feature, text, token_activations(model, sae, text, feature.index));
}

inline nlohmann::json to_json(const HighlightResult& r) {
  nlohmann::json j{{"schema", kHighlightSchema},
                   {"feature", r.feature.str()},
                   {"text", r.text},
                   {"bos_activation", r.bos_activation},
                   {"max_activation", r.max_activation}};
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"token", row.token},
                    {"begin", row.span.begin},
                    {"end", row.span.end},
                    {"activation", row.activation},
                    {"opacity", row.opacity},
                    {"bos", row.is_bos}});
  return j;
}

inline HighlightResult highlight_from_json(const nlohmann::json& j) {
  HighlightResult r;
  r.feature = FeatureId::parse(j.at("feature").get<std::string>());
  r.text = j.value("text", "");
  r.bos_activation = j.value("bos_activation", 0.0);
  r.max_activation = j.value("max_activation", 0.0);
  for (const auto& row : j.at("rows"))
    r.rows.push_back(HighlightRow{row.at("token").get<std::string>(),
                                  {row.at("begin").get<std::size_t>(), row.at("end").get<std::size_t>()},
                                  row.at("activation").get<double>(), row.at("opacity").get<double>(),
                                  row.value("bos", false)});
  return r;
}

// -------------------------------------------------------------- specificity

struct CategoryStats {
  std::string name;
  double max = 0.0;
  double mean_nonzero = 0.0;
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t nonzero = 0;
};

struct SpecificityReport {
  FeatureId feature;
  std::vector<CategoryStats> categories;  // "0".."3" in order
};

inline const std::vector<std::string>& specificity_levels() {
  static const std::vector<std::string> levels = {"0", "1", "2", "3"};
  return levels;
}

// Statistics over every non-BOS token of every sentence in each category.
inline SpecificityReport specificity_score(const LanguageModel& model, const SparseAutoencoder& sae, const FeatureId& feature,
                                           const ProbeSuite& suite) {
  detail::check_feature(sae, feature);
  if (suite.categories.size() != specificity_levels().size())
    throw Error(ErrorCode::suite, "specificity suites need exactly the categories [0] [1] [2] [3]");
  SpecificityReport report;
  report.feature = feature;
  for (const auto& level : specificity_levels()) {
    const auto* cat = suite.find(level);
    if (!cat) throw Error(ErrorCode::suite, "specificity suite is missing category [" + level + "]");
    if (cat->items.empty()) throw Error(ErrorCode::suite, "specificity category [" + level + "] is empty");
    CategoryStats s;
    s.name = level;
    double sum = 0.0;
    for (const auto& sentence : cat->items) {
      ++s.sentences;
      const auto ta = token_activations(model, sae, sentence, feature.index);
      for (std::size_t p = 0; p < ta.tokens.size(); ++p) {
        if (ta.tokens[p].is_bos) continue;
        ++s.tokens;
        const double a = ta.activations[p];
        s.max = std::max(s.max, a);
        if (a > 0.0) {
          ++s.nonzero;
          sum += a;
        }
      }
    }
    s.mean_nonzero = s.nonzero ? sum / static_cast<double>(s.nonzero) : 0.0;
    report.categories.push_back(s);
  }
  return report;
}

inline nlohmann::json to_json(const SpecificityReport& r) {
  nlohmann::json j{{"schema", kSpecificitySchema}, {"feature", r.feature.str()}};
  auto& cats = j["categories"] = nlohmann::json::array();
  for (const auto& c : r.categories)
    cats.push_back({{"category", c.name},
                    {"max", c.max},
                    {"mean_nonzero", c.mean_nonzero},
                    {"sentences", c.sentences},
                    {"tokens", c.tokens},
                    {"nonzero", c.nonzero}});
  return j;
}

// ------------------------------------------------------------ context probe

struct ContextRow {
  std::string probe;
  std::vector<Token> tokens;
  std::vector<double> activations;
};

struct ContextTable {
  FeatureId feature;
  std::vector<ContextRow> rows;  // input order
};

inline ContextTable context_probe(const LanguageModel& model, const SparseAutoencoder& sae, const FeatureId& feature,
                                  const std::vector<std::string>& probes) {
  if (probes.empty()) throw Error(ErrorCode::suite, "probe list is empty");
  detail::check_feature(sae, feature);
  ContextTable t;
  t.feature = feature;
  for (const auto& probe : probes) {
    auto ta = token_activations(model, sae, probe, feature.index);
    t.rows.push_back(ContextRow{probe, std::move(ta.tokens), std::move(ta.activations)});
  }
  return t;
}

inline nlohmann::json to_json(const ContextTable& t) {
  nlohmann::json j{{"schema", kContextSchema}, {"feature", t.feature.str()}};
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json toks = nlohmann::json::array();
    for (std::size_t p = 0; p < r.tokens.size(); ++p)
      toks.push_back({{"token", r.tokens[p].text}, {"activation", r.activations[p]}, {"bos", r.tokens[p].is_bos}});
    rows.push_back({{"probe", r.probe}, {"tokens", toks}});
  }
  return j;
}

// ----------------------------------------------------------- confusion matrix

enum class TermAggregation { max, mean };

struct FeatureTerms {
  FeatureId feature;
  std::string category;  // term-set id
  std::vector<std::string> terms;
};

struct ConfusionMatrix {
  std::vector<FeatureId> features;
  std::vector<std::string> categories;
  std::vector<std::string> descriptions;  // optional, one per feature
  std::vector<std::vector<double>> values;  // [feature][category]
  // Normalization trace.
  std::vector<std::string> terms;                 // all terms, category-major
  std::vector<std::size_t> term_category;         // category index of each term
  std::vector<std::vector<double>> raw;           // step 1: [feature][term]
  std::vector<double> feature_max;                // step 2 divisors
  std::vector<double> category_max;               // step 3 divisors
  std::vector<std::string> warnings;
};

inline double term_activation(const TokenActivations& ta, TermAggregation agg) {
  double best = 0.0, sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < ta.tokens.size(); ++p) {
    if (ta.tokens[p].is_bos) continue;
    best = std::max(best, ta.activations[p]);
    sum += ta.activations[p];
    ++n;
  }
  if (agg == TermAggregation::max) return best;
  return n ? sum / static_cast<double>(n) : 0.0;
}

// Builds the matrix from a raw [feature][term] table:
//   A1[f][t] = A[f][t] / max_t A[f][t]
//   A2[f][t] = A1[f][t] / max_{f', t' in cat(t)} A1[f'][t']
//   values[f][c] = sum_{t in c} A2[f][t]
inline ConfusionMatrix confusion_from_raw(std::vector<FeatureId> features, std::vector<std::string> categories,
                                          std::vector<std::string> terms, std::vector<std::size_t> term_category,
                                          std::vector<std::vector<double>> raw) {
  ConfusionMatrix m;
  m.features = std::move(features);
  m.categories = std::move(categories);
  m.terms = std::move(terms);
  m.term_category = std::move(term_category);
  m.raw = std::move(raw);
  const std::size_t F = m.features.size(), C = m.categories.size(), T = m.terms.size();
  std::vector<std::vector<double>> a(F, std::vector<double>(T, 0.0));
  m.feature_max.assign(F, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < T; ++t) m.feature_max[f] = std::max(m.feature_max[f], m.raw[f][t]);
    if (m.feature_max[f] > 0.0)
      for (std::size_t t = 0; t < T; ++t) a[f][t] = m.raw[f][t] / m.feature_max[f];
  }
  m.category_max.assign(C, 0.0);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) {
      auto& cm = m.category_max[m.term_category[t]];
      cm = std::max(cm, a[f][t]);
    }
  m.values.assign(F, std::vector<double>(C, 0.0));
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) {
      const auto c = m.term_category[t];
      if (m.category_max[c] > 0.0) m.values[f][c] += a[f][t] / m.category_max[c];
    }
  bool any = false;
  for (double v : m.feature_max) any = any || v > 0.0;
  if (!any) m.warnings.push_back("every feature is zero on every term; matrix is all zeros");
  return m;
}

inline ConfusionMatrix similarity_confusion(const LanguageModel& model, const SparseAutoencoder& sae,
                                            const std::vector<FeatureTerms>& sets,
                                            TermAggregation agg = TermAggregation::max) {
  std::vector<FeatureId> features;
  std::vector<std::string> categories, terms;
  std::vector<std::size_t> term_category;
  for (std::size_t c = 0; c < sets.size(); ++c) {
    detail::check_feature(sae, sets[c].feature);
    if (sets[c].terms.empty())
      throw Error(ErrorCode::suite, "feature " + sets[c].feature.str() + " has an empty term set");
    features.push_back(sets[c].feature);
    categories.push_back(sets[c].category);
    for (const auto& t : sets[c].terms) {
      terms.push_back(t);
      term_category.push_back(c);
    }
  }
  std::vector<std::vector<double>> raw(features.size(), std::vector<double>(terms.size(), 0.0));
  const HookPoint hook = sae.hook();
  for (std::size_t t = 0; t < terms.size(); ++t) {
    auto trace = forward_with_capture(model, terms[t], std::span<const HookPoint>(&hook, 1));
    const auto& res = trace.residuals.at(hook.layer);
    for (std::size_t f = 0; f < features.size(); ++f) {
      TokenActivations ta{trace.tokens, {}};
      for (const auto& h : res) ta.activations.push_back(sae.activation(h, features[f].index));
      raw[f][t] = term_activation(ta, agg);
    }
  }
  return confusion_from_raw(std::move(features), std::move(categories), std::move(terms), std::move(term_category),
                            std::move(raw));
}

// Term sets from a suite whose category names are feature ids.
inline std::vector<FeatureTerms> term_sets_from_suite(const ProbeSuite& suite) {
  std::vector<FeatureTerms> out;
  for (const auto& c : suite.categories) out.push_back(FeatureTerms{FeatureId::parse(c.name), c.name, c.items});
  return out;
}

inline nlohmann::json to_json(const ConfusionMatrix& m) {
  nlohmann::json j{{"schema", kConfusionSchema}};
  j["features"] = nlohmann::json::array();
  for (const auto& f : m.features) j["features"].push_back(f.str());
  j["descriptions"] = m.descriptions;
  j["categories"] = m.categories;
  j["values"] = m.values;
  j["trace"] = {{"terms", m.terms},
                {"term_category", m.term_category},
                {"raw", m.raw},
                {"feature_max", m.feature_max},
                {"category_max", m.category_max}};
  j["warnings"] = m.warnings;
  return j;
}

inline ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
  ConfusionMatrix m;
  for (const auto& f : j.at("features")) m.features.push_back(FeatureId::parse(f.get<std::string>()));
  m.categories = j.at("categories").get<std::vector<std::string>>();
  m.values = j.at("values").get<std::vector<std::vector<double>>>();
  if (j.contains("descriptions")) m.descriptions = j["descriptions"].get<std::vector<std::string>>();
  if (j.contains("trace")) {
    const auto& t = j["trace"];
    m.terms = t.value("terms", std::vector<std::string>{});
    m.term_category = t.value("term_category", std::vector<std::size_t>{});
    m.raw = t.value("raw", std::vector<std::vector<double>>{});
    m.feature_max = t.value("feature_max", std::vector<double>{});
    m.category_max = t.value("category_max", std::vector<double>{});
  }
  m.warnings = j.value("warnings", std::vector<std::string>{});
  if (m.values.size() != m.features.size()) throw Error(ErrorCode::format, "confusion values need one row per feature");
  for (const auto& row : m.values)
    if (row.size() != m.categories.size()) throw Error(ErrorCode::format, "confusion rows need one value per category");
  return m;
}

// ------------------------------------------------------------------- scans

struct ScanRow {
  FeatureId feature;
  FeatureStats stats;
};

struct ScanReport {
  std::string corpus_id;
  ScanThresholds thresholds;
  std::vector<ScanRow> rows;

  std::vector<FeatureFlag> flags(const ScanRow& row) const { return derive_flags(row.stats, thresholds); }
};

// Residuals of document `i` at the SAE's layer, begin-of-text first.
using ResidualSource = std::function<std::vector<Vector>(std::size_t)>;

inline ResidualSource model_residuals(const LanguageModel& model, const Corpus& corpus, int layer) {
  return [&model, &corpus, layer](std::size_t i) {
    const HookPoint hook{layer};
    auto trace = forward_with_capture(model, corpus.documents[i].text, std::span<const HookPoint>(&hook, 1));
    return std::move(trace.residuals.at(layer));
  };
}

inline ResidualSource cached_residuals(const ActivationCache& cache, int layer) {
  return [&cache, layer](std::size_t i) { return cache.residuals(i, layer); };
}

// Density counts non-BOS tokens with activation > 0. The BOS activation is
// the max over each document's first position; the in-text max covers the
// rest.
inline ScanReport scan_features(const SparseAutoencoder& sae, const std::string& corpus_id, std::size_t n_documents,
                                const ResidualSource& residuals, std::vector<int> features = {},
                                ScanThresholds thresholds = {}) {
  if (n_documents == 0) throw Error(ErrorCode::corpus, "cannot scan an empty corpus");
  if (features.empty())
    for (int i = 0; i < sae.n_features(); ++i) features.push_back(i);
  for (int i : features) sae.check_index(i);
  ScanReport report;
  report.corpus_id = corpus_id;
  report.thresholds = thresholds;
  for (int i : features) report.rows.push_back(ScanRow{FeatureId{sae.layer(), i}, FeatureStats{}});
  std::size_t text_tokens = 0;
  for (std::size_t doc = 0; doc < n_documents; ++doc) {
    const auto res = residuals(doc);
    for (std::size_t p = 0; p < res.size(); ++p) {
      const Vector f = sae.encode_dense(res[p]);
      if (p > 0) ++text_tokens;
      for (auto& row : report.rows) {
        const double a = f[static_cast<std::size_t>(row.feature.index)];
        if (p == 0) {
          row.stats.bos_activation = std::max(row.stats.bos_activation, a);
        } else {
          row.stats.max_in_text_activation = std::max(row.stats.max_in_text_activation, a);
          if (a > 0.0) ++row.stats.active_tokens;
        }
      }
    }
  }
  if (text_tokens == 0) throw Error(ErrorCode::corpus, "corpus has no tokens besides begin-of-text");
  for (auto& row : report.rows) {
    row.stats.total_tokens = text_tokens;
    row.stats.density = static_cast<double>(row.stats.active_tokens) / static_cast<double>(text_tokens);
    row.stats.corpus_id = corpus_id;
  }
  return report;
}

inline ScanReport density_scan(const LanguageModel& model, const SparseAutoencoder& sae, const Corpus& corpus,
                               std::vector<int> features = {}, ScanThresholds thresholds = {}) {
  return scan_features(sae, corpus.id, corpus.size(), model_residuals(model, corpus, sae.layer()), std::move(features),
                       thresholds);
}

// Same statistics as density_scan; kept as its own entry point because the
// BOS anomaly is reported as a separate class.
inline ScanReport bos_anomaly_scan(const LanguageModel& model, const SparseAutoencoder& sae, const Corpus& corpus,
                                   std::vector<int> features = {}, ScanThresholds thresholds = {}) {
  return density_scan(model, sae, corpus, std::move(features), thresholds);
}

inline nlohmann::json to_json(const ScanReport& r) {
  nlohmann::json j{{"schema", kScanSchema},
                   {"corpus_id", r.corpus_id},
                   {"thresholds", {{"hyperactive", r.thresholds.hyperactive}, {"bos_ratio", r.thresholds.bos_ratio}}}};
  auto& rows = j["features"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json flags = nlohmann::json::array();
    for (auto f : r.flags(row)) flags.push_back(to_string(f));
    rows.push_back({{"feature", row.feature.str()},
                    {"active_tokens", row.stats.active_tokens},
                    {"total_tokens", row.stats.total_tokens},
                    {"density", row.stats.density},
                    {"bos_activation", row.stats.bos_activation},
                    {"max_in_text_activation", row.stats.max_in_text_activation},
                    {"flags", flags}});
  }
  return j;
}

// Flags in the document are ignored; they are recomputed from the numbers.
inline ScanReport scan_from_json(const nlohmann::json& j) {
  ScanReport r;
  r.corpus_id = j.value("corpus_id", "");
  if (j.contains("thresholds")) {
    r.thresholds.hyperactive = j["thresholds"].value("hyperactive", r.thresholds.hyperactive);
    r.thresholds.bos_ratio = j["thresholds"].value("bos_ratio", r.thresholds.bos_ratio);
  }
  for (const auto& f : j.at("features")) {
    ScanRow row;
    row.feature = FeatureId::parse(f.at("feature").get<std::string>());
    row.stats.active_tokens = f.value("active_tokens", std::size_t{0});
    row.stats.total_tokens = f.value("total_tokens", std::size_t{0});
    row.stats.density = f.at("density").get<double>();
    row.stats.bos_activation = f.value("bos_activation", 0.0);
    row.stats.max_in_text_activation = f.value("max_in_text_activation", 0.0);
    row.stats.corpus_id = r.corpus_id;
    r.rows.push_back(row);
  }
  return r;
}

// ------------------------------------------------------------ sweep quality

// 1 - distinct/total over token trigrams; 0 when there are fewer than three
// tokens.
inline double repetition_score(std::span<const TokenId> tokens) {
  if (tokens.size() < 3) return 0.0;
  std::set<std::array<TokenId, 3>> distinct;
  for (std::size_t i = 0; i + 2 < tokens.size(); ++i) distinct.insert({tokens[i], tokens[i + 1], tokens[i + 2]});
  return 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(tokens.size() - 2);
}

inline std::vector<TokenId> text_tokens(const LanguageModel& model, std::string_view text) {
  std::vector<TokenId> out;
  for (const auto& t : model.tokenize(text))
    if (!t.is_bos) out.push_back(t.id);
  return out;
}

inline double repetition_score(const LanguageModel& model, std::string_view text) {
  return repetition_score(text_tokens(model, text));
}

inline double distinct_token_ratio(std::span<const TokenId> tokens) {
  if (tokens.empty()) return 0.0;
  std::set<TokenId> distinct(tokens.begin(), tokens.end());
  return static_cast<double>(distinct.size()) / static_cast<double>(tokens.size());
}

namespace detail {

inline bool word_char(unsigned char c) { return std::isalnum(c) || c == '_'; }

inline std::string fold(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

// Case-folded (ASCII) occurrences of every lexicon term, counted only where
// the match is not flanked by ASCII word characters.
inline std::size_t lexicon_hits(std::string_view text, const std::vector<std::string>& lexicon) {
  const std::string hay = detail::fold(text);
  std::set<std::string> needles;
  for (const auto& term : lexicon) needles.insert(detail::fold(term));
  std::size_t hits = 0;
  for (const auto& needle : needles) {
    if (needle.empty()) continue;
    for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
      const bool left_ok = pos == 0 || !detail::word_char(static_cast<unsigned char>(hay[pos - 1])) ||
                           !detail::word_char(static_cast<unsigned char>(needle.front()));
      const std::size_t end = pos + needle.size();
      const bool right_ok = end >= hay.size() || !detail::word_char(static_cast<unsigned char>(hay[end])) ||
                            !detail::word_char(static_cast<unsigned char>(needle.back()));
      if (left_ok && right_ok) ++hits;
    }
  }
  return hits;
}

// exp of the mean negative log-likelihood of `completion` given `prompt`
// under the model with no interventions.
inline double self_perplexity(const LanguageModel& model, std::string_view prompt, std::span<const TokenId> completion) {
  if (completion.empty()) return 1.0;
  auto ids = token_ids(model.tokenize(prompt));
  const std::size_t start = ids.size();
  ids.insert(ids.end(), completion.begin(), completion.end());
  const auto run = run_tokens(model, ids);
  double nll = 0.0;
  for (std::size_t p = start; p < ids.size(); ++p) nll -= log_probability(run.logits[p - 1], ids[p]);
  return std::exp(nll / static_cast<double>(completion.size()));
}

struct SweepThresholds {
  double repetition = 0.5;
  double perplexity_ratio = 5.0;
};

struct SweepQualityEntry {
  double coefficient = 0.0;
  double repetition = 0.0;
  double distinct_ratio = 0.0;
  double self_perplexity = 0.0;
  std::size_t concept_hits = 0;
  long long concept_shift = 0;
  bool numeric_breakdown = false;
  bool breakdown = false;
  std::string text;
};

struct SweepQualityReport {
  std::string prompt;
  FeatureId feature;
  SteeringSpec spec;  // coefficient of the first entry; modes shared by all
  GenerationConfig config;
  std::vector<std::string> lexicon;
  SweepThresholds thresholds;
  SweepQualityEntry baseline;
  std::vector<SweepQualityEntry> entries;
};

inline SweepQualityReport sweep_quality(const LanguageModel& model, std::span<const SteeredGeneration> generations,
                                        const std::vector<std::string>& lexicon, SweepThresholds thresholds = {}) {
  if (generations.empty()) throw Error(ErrorCode::report, "sweep has no entries and therefore no baseline");
  SweepQualityReport r;
  const auto& first = generations.front();
  r.prompt = first.prompt;
  r.feature = first.spec.feature;
  r.spec = first.spec;
  r.config = first.config;
  r.lexicon = lexicon;
  r.thresholds = thresholds;
  for (const auto& g : generations)
    if (g.baseline_text != first.baseline_text || g.prompt != first.prompt)
      throw Error(ErrorCode::report, "sweep entries do not share one baseline");

  auto measure = [&](const std::string& text, double coefficient) {
    SweepQualityEntry e;
    e.coefficient = coefficient;
    e.text = text;
    const auto toks = text_tokens(model, text);
    e.repetition = repetition_score(toks);
    e.distinct_ratio = distinct_token_ratio(toks);
    e.self_perplexity = self_perplexity(model, r.prompt, toks);
    e.concept_hits = lexicon_hits(text, lexicon);
    return e;
  };
  r.baseline = measure(first.baseline_text, 0.0);
  for (const auto& g : generations) {
    auto e = measure(g.steered_text, g.spec.coefficient);
    e.concept_shift = static_cast<long long>(e.concept_hits) - static_cast<long long>(r.baseline.concept_hits);
    e.numeric_breakdown = g.breakdown.has_value();
    e.breakdown = e.numeric_breakdown || e.repetition > thresholds.repetition ||
                  e.self_perplexity > thresholds.perplexity_ratio * r.baseline.self_perplexity;
    r.entries.push_back(std::move(e));
  }
  return r;
}

inline SweepQualityReport sweep_quality(const LanguageModel& model, const SweepResult& sweep,
                                        const std::vector<std::string>& lexicon, SweepThresholds thresholds = {}) {
  return sweep_quality(model, std::span<const SteeredGeneration>(sweep.entries), lexicon, thresholds);
}

inline nlohmann::json to_json(const SweepQualityEntry& e) {
  return {{"coefficient", e.coefficient},   {"repetition", e.repetition},
          {"distinct_ratio", e.distinct_ratio}, {"self_perplexity", e.self_perplexity},
          {"concept_hits", e.concept_hits}, {"concept_shift", e.concept_shift},
          {"numeric_breakdown", e.numeric_breakdown}, {"breakdown", e.breakdown},
          {"text", e.text}};
}

inline SweepQualityEntry sweep_entry_from_json(const nlohmann::json& j) {
  SweepQualityEntry e;
  e.coefficient = j.at("coefficient").get<double>();
  e.repetition = j.at("repetition").get<double>();
  e.distinct_ratio = j.at("distinct_ratio").get<double>();
  e.self_perplexity = j.at("self_perplexity").get<double>();
  e.concept_hits = j.at("concept_hits").get<std::size_t>();
  e.concept_shift = j.at("concept_shift").get<long long>();
  e.numeric_breakdown = j.value("numeric_breakdown", false);
  e.breakdown = j.value("breakdown", false);
  e.text = j.value("text", "");
  return e;
}

inline nlohmann::json to_json(const SweepQualityReport& r) {
  nlohmann::json j{{"schema", kSweepSchema},
                   {"prompt", r.prompt},
                   {"feature", r.feature.str()},
                   {"spec", r.spec},
                   {"config", r.config},
                   {"lexicon", r.lexicon},
                   {"thresholds", {{"repetition", r.thresholds.repetition}, {"perplexity_ratio", r.thresholds.perplexity_ratio}}},
                   {"baseline", to_json(r.baseline)}};
  auto& entries = j["entries"] = nlohmann::json::array();
  for (const auto& e : r.entries) entries.push_back(to_json(e));
  return j;
}

inline SweepQualityReport sweep_from_json(const nlohmann::json& j) {
  SweepQualityReport r;
  r.prompt = j.value("prompt", "");
  r.feature = FeatureId::parse(j.at("feature").get<std::string>());
  if (j.contains("spec")) r.spec = j["spec"].get<SteeringSpec>();
  if (j.contains("config")) r.config = j["config"].get<GenerationConfig>();
  r.lexicon = j.value("lexicon", std::vector<std::string>{});
  if (j.contains("thresholds")) {
    r.thresholds.repetition = j["thresholds"].value("repetition", r.thresholds.repetition);
    r.thresholds.perplexity_ratio = j["thresholds"].value("perplexity_ratio", r.thresholds.perplexity_ratio);
  }
  r.baseline = sweep_entry_from_json(j.at("baseline"));
  for (const auto& e : j.at("entries")) r.entries.push_back(sweep_entry_from_json(e));
  return r;
}

// ------------------------------------------------------ representation test

struct RepresentationVerdict {
  bool coactivation = false;
  bool manipulation = false;
  double positive_mean_max = 0.0;
  double negative_mean_max = 0.0;
  long long concept_shift = 0;
  SteeredGeneration generation;
};

// Coactivation: mean per-probe max activation on [positive] probes exceeds
// `margin` times that on [negative] probes. Manipulation: steering moves the
// lexicon count in the direction of the coefficient's sign.
inline RepresentationVerdict representation_test(const LanguageModel& model, const SparseAutoencoder& sae,
                                                 const FeatureId& feature, const ProbeSuite& suite,
                                                 const SteeringSpec& spec, const std::vector<std::string>& lexicon,
                                                 const std::string& prompt, const GenerationConfig& config = {},
                                                 double margin = 5.0) {
  const auto* pos = suite.find("positive");
  const auto* neg = suite.find("negative");
  if (!pos || pos->items.empty()) throw Error(ErrorCode::suite, "representation test needs [positive] probes");
  if (!neg || neg->items.empty()) throw Error(ErrorCode::suite, "representation test needs [negative] probes");
  if (lexicon.empty()) throw Error(ErrorCode::suite, "representation test needs a non-empty lexicon");
  detail::check_feature(sae, feature);
  if (!(spec.feature == feature)) throw Error(ErrorCode::spec, "steering spec targets a different feature");

  auto mean_max = [&](const ProbeCategory& cat) {
    double total = 0.0;
    for (const auto& probe : cat.items) {
      const auto ta = token_activations(model, sae, probe, feature.index);
      double best = 0.0;
      for (std::size_t p = 0; p < ta.tokens.size(); ++p)
        if (!ta.tokens[p].is_bos) best = std::max(best, ta.activations[p]);
      total += best;
    }
    return total / static_cast<double>(cat.items.size());
  };
  RepresentationVerdict v;
  v.positive_mean_max = mean_max(*pos);
  v.negative_mean_max = mean_max(*neg);
  v.coactivation = v.positive_mean_max > margin * v.negative_mean_max;
  v.generation = steer_generate(model, sae, prompt, spec, config);
  v.concept_shift = static_cast<long long>(lexicon_hits(v.generation.steered_text, lexicon)) -
                    static_cast<long long>(lexicon_hits(v.generation.baseline_text, lexicon));
  v.manipulation = (spec.coefficient > 0 && v.concept_shift > 0) || (spec.coefficient < 0 && v.concept_shift < 0);
  return v;
}

// ----------------------------------------------- attribution vs ablation

struct AttributionAblation {
  std::vector<double> attribution;     // per position
  std::vector<double> ablation_effect;  // baseline - ablated target logit
  std::optional<double> correlation;
};

inline AttributionAblation attribution_vs_ablation(const LanguageModel& model, const SparseAutoencoder& sae,
                                                   std::string_view text, const FeatureId& feature, TokenId target) {
  AttributionAblation out;
  const auto attr = attribution(model, sae, text, feature, target);
  const auto ids = token_ids(attr.tokens);
  const auto delta = ablation_logit_delta(model, sae, ids, feature.index, target);
  out.attribution = attr.attribution;
  for (double d : delta) out.ablation_effect.push_back(-d);
  out.correlation = pearson(out.attribution, out.ablation_effect);
  return out;
}

}  // namespace saelab
