#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "saelab/corpus/corpus.hpp"
#include "saelab/diagnostics/diagnostics.hpp"
#include "saelab/model/language_model.hpp"
#include "saelab/sae/sparse_autoencoder.hpp"
#include "saelab/stats.hpp"

namespace saelab {

inline constexpr std::size_t kSnippetWindow = 32;
inline constexpr const char* kDescribeTemplateId = "saelab-describe/1";
inline constexpr const char* kPredictTemplateId = "saelab-predict/1";

struct Snippet {
  std::string doc_id;
  std::size_t start = 0;  // token position of the first window token
  std::size_t peak = 0;   // index of the peak inside the window
  std::vector<std::string> tokens;
  std::vector<double> activations;
  double max_activation = 0.0;

  std::string text() const {
    std::string out;
    for (const auto& t : tokens) out += t;
    return out;
  }
};

inline nlohmann::json to_json(const Snippet& s) {
  return {{"doc_id", s.doc_id},     {"start", s.start},
          {"peak", s.peak},         {"tokens", s.tokens},
          {"activations", s.activations}, {"max_activation", s.max_activation}};
}

inline Snippet snippet_from_json(const nlohmann::json& j) {
  Snippet s;
  s.doc_id = j.at("doc_id").get<std::string>();
  s.start = j.value("start", std::size_t{0});
  s.peak = j.value("peak", std::size_t{0});
  s.tokens = j.at("tokens").get<std::vector<std::string>>();
  s.activations = j.at("activations").get<std::vector<double>>();
  s.max_activation = j.at("max_activation").get<double>();
  return s;
}

// Window of up to `window` non-BOS tokens centred on the document's peak
// token (first occurrence on ties).
inline Snippet document_snippet(const std::string& doc_id, const TokenActivations& ta, std::size_t window = kSnippetWindow) {
  Snippet s;
  s.doc_id = doc_id;
  const std::size_t first = (!ta.tokens.empty() && ta.tokens[0].is_bos) ? 1 : 0;
  const std::size_t n = ta.tokens.size();
  if (n <= first) return s;
  std::size_t peak = first;
  for (std::size_t p = first; p < n; ++p)
    if (ta.activations[p] > ta.activations[peak]) peak = p;
  std::size_t start = peak >= first + window / 2 ? peak - window / 2 : first;
  if (start + window > n) start = n > window + first ? n - window : first;
  const std::size_t end = std::min(n, start + window);
  s.start = start;
  s.peak = peak - start;
  for (std::size_t p = start; p < end; ++p) {
    s.tokens.push_back(ta.tokens[p].text);
    s.activations.push_back(ta.activations[p]);
  }
  s.max_activation = ta.activations[peak];
  return s;
}

struct Evidence {
  FeatureId feature;
  std::vector<Snippet> snippets;
  std::vector<std::string> warnings;
};

// Top-k documents by peak activation, one snippet each. Ties keep corpus
// order. Documents whose peak is not positive never appear.
inline Evidence collect_evidence(const LanguageModel& model, const SparseAutoencoder& sae, const FeatureId& feature,
                                 const Corpus& corpus, std::size_t k, std::size_t window = kSnippetWindow) {
  if (k < 1) throw Error(ErrorCode::precondition, "k must be at least 1");
  if (corpus.empty()) throw Error(ErrorCode::corpus, "evidence corpus is empty");
  detail::check_feature(sae, feature);
  std::vector<Snippet> all;
  for (const auto& doc : corpus.documents) {
    auto s = document_snippet(doc.id, token_activations(model, sae, doc.text, feature.index), window);
    if (s.max_activation > 0.0) all.push_back(std::move(s));
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Snippet& a, const Snippet& b) { return a.max_activation > b.max_activation; });
  Evidence ev;
  ev.feature = feature;
  if (all.size() > k) all.resize(k);
  ev.snippets = std::move(all);
  if (ev.snippets.empty()) ev.warnings.push_back("feature " + feature.str() + " never activates on corpus " + corpus.id);
  return ev;
}

// The describer sees each snippet with active tokens marked as [[token]](a).
inline std::string format_evidence(const std::vector<Snippet>& snippets) {
  std::string out;
  char num[32];
  for (std::size_t i = 0; i < snippets.size(); ++i) {
    std::snprintf(num, sizeof num, "%.2f", snippets[i].max_activation);
    out += "Snippet " + std::to_string(i + 1) + " (max " + num + "): ";
    for (std::size_t t = 0; t < snippets[i].tokens.size(); ++t) {
      const double a = snippets[i].activations[t];
      if (a > 0.0) {
        std::snprintf(num, sizeof num, "%.2f", a);
        out += "[[" + snippets[i].tokens[t] + "]](" + num + ")";
      } else {
        out += snippets[i].tokens[t];
      }
    }
    out += "\n";
  }
  return out;
}

inline std::string describe_prompt(const std::vector<Snippet>& snippets) {
  return "Below are text snippets on which one feature of a language model's internal representation is active.\n"
         "Active tokens are written as [[token]](activation).\n"
         "Reply with a single line that describes what the feature responds to.\n\n" +
         format_evidence(snippets);
}

inline std::string predict_prompt(const std::string& description, const std::vector<Snippet>& snippets) {
  std::string out = "A feature of a language model is described as: " + description +
                    "\nFor each snippet below, reply with one number per line between 0 and 10 giving how strongly "
                    "the feature activates on it.\n\n";
  for (std::size_t i = 0; i < snippets.size(); ++i) out += std::to_string(i + 1) + ": " + snippets[i].text() + "\n";
  return out;
}

class InterpretationProvider {
 public:
  virtual ~InterpretationProvider() = default;
  virtual std::string id() const = 0;
  virtual std::string scorer_kind() const = 0;  // "external" or "stub"
  virtual std::string describe(const std::string& prompt, const std::vector<Snippet>& evidence) = 0;
  // One predicted activation level per snippet. The snippets are passed so
  // offline stubs can derive predictions; external providers only see the
  // prompt text.
  virtual std::vector<double> predict(const std::string& prompt, const std::string& description,
                                      const std::vector<Snippet>& snippets) = 0;
};

// Offline provider: a fixed description and a caller-supplied predictor.
class StubProvider final : public InterpretationProvider {
 public:
  using Predictor = std::function<double(const Snippet&)>;

  static constexpr const char* kCanned = "stub description: tokens on which this feature is active";

  explicit StubProvider(Predictor predictor = nullptr, std::string canned = kCanned)
      : predictor_(std::move(predictor)), canned_(std::move(canned)) {}

  static StubProvider echo() {
    return StubProvider([](const Snippet& s) { return s.max_activation; });
  }
  static StubProvider negated() {
    return StubProvider([](const Snippet& s) { return -s.max_activation; });
  }
  static StubProvider constant(double v) {
    return StubProvider([v](const Snippet&) { return v; });
  }

  std::string id() const override { return "stub"; }
  std::string scorer_kind() const override { return "stub"; }
  std::size_t calls() const noexcept { return calls_; }

  std::string describe(const std::string&, const std::vector<Snippet>&) override {
    ++calls_;
    return canned_;
  }

  std::vector<double> predict(const std::string&, const std::string&, const std::vector<Snippet>& snippets) override {
    ++calls_;
    if (!predictor_) throw ProviderError("stub provider has no predictor", 1, std::nullopt);
    std::vector<double> out;
    for (const auto& s : snippets) out.push_back(predictor_(s));
    return out;
  }

 private:
  Predictor predictor_;
  std::string canned_;
  std::size_t calls_ = 0;
};

struct InterpretationRecord {
  FeatureId feature;
  std::string description;
  std::vector<Snippet> evidence;
  bool scored = false;
  std::optional<double> score;  // nullopt after scoring means undefined
  std::string statistic = "pearson";
  std::string scorer;
  std::string template_id = kDescribeTemplateId;
  std::string provider_id;
};

inline nlohmann::json to_json(const InterpretationRecord& r) {
  nlohmann::json j{{"schema", "saelab.interpretation/1"},
                   {"feature", r.feature.str()},
                   {"description", r.description},
                   {"scorer", r.scorer},
                   {"template_id", r.template_id},
                   {"template_origin", "original to this tool"},
                   {"provider_id", r.provider_id},
                   {"statistic", r.statistic}};
  j["evidence"] = nlohmann::json::array();
  for (const auto& s : r.evidence) j["evidence"].push_back(to_json(s));
  if (!r.scored) j["score_state"] = "unscored";
  else if (r.score) j["score_state"] = "defined";
  else j["score_state"] = "undefined";
  j["score"] = r.score ? nlohmann::json(*r.score) : nlohmann::json(nullptr);
  return j;
}

inline InterpretationRecord interpretation_from_json(const nlohmann::json& j) {
  InterpretationRecord r;
  r.feature = FeatureId::parse(j.at("feature").get<std::string>());
  r.description = j.at("description").get<std::string>();
  r.scorer = j.value("scorer", "");
  r.template_id = j.value("template_id", kDescribeTemplateId);
  r.provider_id = j.value("provider_id", "");
  r.statistic = j.value("statistic", "pearson");
  for (const auto& s : j.value("evidence", nlohmann::json::array())) r.evidence.push_back(snippet_from_json(s));
  const auto state = j.value("score_state", "unscored");
  r.scored = state != "unscored";
  if (state == "defined") r.score = j.at("score").get<double>();
  return r;
}

inline InterpretationRecord describe_feature(const Evidence& evidence, InterpretationProvider& provider) {
  if (evidence.snippets.empty())
    throw Error(ErrorCode::precondition, "cannot describe feature " + evidence.feature.str() + " without evidence");
  InterpretationRecord r;
  r.feature = evidence.feature;
  r.evidence = evidence.snippets;
  std::string text = provider.describe(describe_prompt(evidence.snippets), evidence.snippets);
  if (auto nl = text.find('\n'); nl != std::string::npos) text.resize(nl);
  r.description = text;
  r.scorer = provider.scorer_kind();
  r.provider_id = provider.id();
  return r;
}

enum class CorrelationKind { pearson, spearman };

struct ScoreResult {
  std::optional<double> score;  // nullopt: undefined (a constant series)
  std::vector<double> actual;
  std::vector<double> predicted;
  std::vector<Snippet> snippets;
  std::string statistic;
};

// Every heldout document contributes one snippet; the provider predicts its
// activation level from the description alone.
inline ScoreResult score_interpretation(const LanguageModel& model, const SparseAutoencoder& sae, const FeatureId& feature,
                                        const std::string& description, const Corpus& heldout,
                                        InterpretationProvider& provider,
                                        const std::vector<std::string>& evidence_doc_ids = {},
                                        CorrelationKind kind = CorrelationKind::pearson) {
  detail::check_feature(sae, feature);
  const std::set<std::string> used(evidence_doc_ids.begin(), evidence_doc_ids.end());
  for (const auto& d : heldout.documents)
    if (used.contains(d.id))
      throw Error(ErrorCode::precondition, "heldout document " + d.id + " was also used as evidence");
  if (heldout.size() < 3)
    throw Error(ErrorCode::insufficient_data, "scoring needs at least 3 heldout snippets, got " + std::to_string(heldout.size()));
  ScoreResult out;
  out.statistic = kind == CorrelationKind::pearson ? "pearson" : "spearman";
  for (const auto& doc : heldout.documents) {
    auto s = document_snippet(doc.id, token_activations(model, sae, doc.text, feature.index));
    out.actual.push_back(s.max_activation);
    out.snippets.push_back(std::move(s));
  }
  out.predicted = provider.predict(predict_prompt(description, out.snippets), description, out.snippets);
  if (out.predicted.size() != out.actual.size())
    throw ProviderError("provider returned " + std::to_string(out.predicted.size()) + " predictions for " +
                            std::to_string(out.actual.size()) + " snippets",
                        1, std::nullopt);
  out.score = kind == CorrelationKind::pearson ? pearson(out.actual, out.predicted) : spearman(out.actual, out.predicted);
  return out;
}

}  // namespace saelab
