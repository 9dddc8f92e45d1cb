#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "saelab/error.hpp"
#include "saelab/feature_id.hpp"
#include "saelab/model/language_model.hpp"
#include "saelab/sae/sparse_autoencoder.hpp"

namespace saelab {

enum class ScaleMode { current_activation, max_activation, unit };
enum class SpliceMode { delta_add, full_splice };

inline std::string to_string(ScaleMode m) {
  switch (m) {
    case ScaleMode::current_activation: return "current-activation";
    case ScaleMode::max_activation: return "max-activation";
    case ScaleMode::unit: return "unit";
  }
  return "?";
}

inline std::string to_string(SpliceMode m) { return m == SpliceMode::delta_add ? "delta-add" : "full-splice"; }

inline ScaleMode parse_scale_mode(const std::string& s) {
  if (s == "current-activation") return ScaleMode::current_activation;
  if (s == "max-activation") return ScaleMode::max_activation;
  if (s == "unit") return ScaleMode::unit;
  throw Error(ErrorCode::spec, "unknown scale mode '" + s + "'");
}

inline SpliceMode parse_splice_mode(const std::string& s) {
  if (s == "delta-add") return SpliceMode::delta_add;
  if (s == "full-splice") return SpliceMode::full_splice;
  throw Error(ErrorCode::spec, "unknown splice mode '" + s + "'");
}

struct SteeringSpec {
  FeatureId feature;
  double coefficient = 0.0;
  ScaleMode scale_mode = ScaleMode::current_activation;
  SpliceMode splice_mode = SpliceMode::delta_add;
  double reference_max = 0.0;  // alpha_max, required in max-activation mode
  bool apply_to_prompt = true;

  void validate(const SparseAutoencoder& sae) const {
    if (feature.layer != sae.layer())
      throw Error(ErrorCode::spec, "feature " + feature.str() + " is not in the SAE's layer " + std::to_string(sae.layer()));
    if (feature.index < 0 || feature.index >= sae.n_features())
      throw Error(ErrorCode::spec, "feature " + feature.str() + " outside the SAE's " +
                                       std::to_string(sae.n_features()) + " features");
    if (!std::isfinite(coefficient)) throw Error(ErrorCode::spec, "steering coefficient must be finite");
    if (scale_mode == ScaleMode::max_activation && !(reference_max > 0.0))
      throw Error(ErrorCode::spec, "max-activation mode requires reference_max > 0");
  }

  friend bool operator==(const SteeringSpec&, const SteeringSpec&) = default;
};

inline void to_json(nlohmann::json& j, const SteeringSpec& s) {
  j = nlohmann::json{{"feature", s.feature.str()},
                     {"coefficient", s.coefficient},
                     {"scale_mode", to_string(s.scale_mode)},
                     {"splice_mode", to_string(s.splice_mode)},
                     {"reference_max", s.reference_max},
                     {"apply_to_prompt", s.apply_to_prompt}};
}

inline void from_json(const nlohmann::json& j, SteeringSpec& s) {
  s.feature = FeatureId::parse(j.at("feature").get<std::string>());
  s.coefficient = j.value("coefficient", 0.0);
  s.scale_mode = parse_scale_mode(j.value("scale_mode", std::string("current-activation")));
  s.splice_mode = parse_splice_mode(j.value("splice_mode", std::string("delta-add")));
  s.reference_max = j.value("reference_max", 0.0);
  s.apply_to_prompt = j.value("apply_to_prompt", true);
}

// alpha for the spec's scale mode given the feature's current activation.
inline double steering_scale(const SteeringSpec& spec, double current_activation) {
  switch (spec.scale_mode) {
    case ScaleMode::current_activation: return current_activation;
    case ScaleMode::max_activation: return spec.reference_max;
    case ScaleMode::unit: return 1.0;
  }
  return 0.0;
}

// c * alpha * d_i
inline Vector steering_delta(const SparseAutoencoder& sae, const SteeringSpec& spec, double current_activation) {
  spec.validate(sae);
  const double k = spec.coefficient * steering_scale(spec, current_activation);
  auto row = sae.w_dec().row(static_cast<std::size_t>(spec.feature.index));
  Vector delta(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) delta[i] = k * row[i];
  return delta;
}

// Routes h through the SAE, lets `edit` change the dense activations, and
// splices the edited reconstruction back with the error term preserved:
//   h' = decode(f') + (h - decode(f)) = h + (decode(f') - decode(f)).
// Computing it in the second form means an unedited f returns h exactly.
inline Vector splice(const SparseAutoencoder& sae, std::span<const double> h,
                     const std::function<void(Vector&)>& edit) {
  const Vector f = sae.encode_dense(h);
  Vector edited = f;
  edit(edited);
  Vector out(h.begin(), h.end());
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double change = edited[i] - f[i];
    if (change != 0.0) axpy(change, sae.w_dec().row(i), out);
  }
  return out;
}

// Per-position record of the steered feature's activation before the edit.
struct ActivationLog {
  std::vector<double> values;  // indexed by sequence position

  void record(std::size_t position, double a) {
    if (values.size() <= position) values.resize(position + 1, 0.0);
    values[position] = a;
  }
};

// The intervention realizing `spec`; the effective coefficient is the spec's
// coefficient times the generation strength multiplier.
inline Intervention make_steering_intervention(const SparseAutoencoder& sae, SteeringSpec spec, double strength_multiplier = 1.0,
                                               std::shared_ptr<ActivationLog> log = nullptr) {
  spec.validate(sae);
  spec.coefficient *= strength_multiplier;
  const int i = spec.feature.index;
  Intervention iv;
  iv.hook = sae.hook();
  iv.apply_to_prompt = spec.apply_to_prompt;
  iv.fn = [&sae, spec, i, log](const InterventionContext& ctx, std::span<const double> h) -> Vector {
    const double a = sae.activation(h, i);
    if (log) log->record(ctx.position, a);
    if (spec.splice_mode == SpliceMode::delta_add) {
      Vector out(h.begin(), h.end());
      const double k = spec.coefficient * steering_scale(spec, a);
      if (k != 0.0) axpy(k, sae.w_dec().row(static_cast<std::size_t>(i)), out);
      return out;
    }
    const double alpha = steering_scale(spec, a);
    return splice(sae, h, [&](Vector& f) { f[static_cast<std::size_t>(i)] += spec.coefficient * alpha; });
  };
  return iv;
}

struct Breakdown {
  std::size_t step = 0;
  std::string message;
};

struct SteeredGeneration {
  std::string prompt;
  std::string baseline_text;
  std::string steered_text;
  SteeringSpec spec;
  GenerationConfig config;
  double effective_coefficient = 0.0;
  std::size_t prompt_tokens = 0;
  std::vector<double> feature_activations;  // steered run, per position, pre-edit
  std::vector<TokenId> baseline_tokens;
  std::vector<TokenId> steered_tokens;
  std::vector<Vector> baseline_logits;
  std::vector<Vector> steered_logits;
  std::optional<Breakdown> breakdown;
};

inline nlohmann::json to_json(const SteeredGeneration& g, bool include_logits = false) {
  nlohmann::json j{{"prompt", g.prompt},
                   {"baseline_text", g.baseline_text},
                   {"steered_text", g.steered_text},
                   {"spec", g.spec},
                   {"config", g.config},
                   {"effective_coefficient", g.effective_coefficient},
                   {"prompt_tokens", g.prompt_tokens},
                   {"feature_activations", g.feature_activations},
                   {"baseline_tokens", g.baseline_tokens},
                   {"steered_tokens", g.steered_tokens}};
  j["breakdown"] = g.breakdown ? nlohmann::json{{"step", g.breakdown->step}, {"message", g.breakdown->message}}
                               : nlohmann::json(nullptr);
  if (include_logits) {
    j["baseline_logits"] = g.baseline_logits;
    j["steered_logits"] = g.steered_logits;
  }
  return j;
}

namespace detail {

inline void check_sae_for_model(const LanguageModel& model, const SparseAutoencoder& sae) {
  model.handle().validate(sae.hook());
  if (sae.d_model() != model.handle().d_model)
    throw Error(ErrorCode::shape, "SAE d_model " + std::to_string(sae.d_model()) + " does not match model d_model " +
                                      std::to_string(model.handle().d_model));
}

inline void run_steered(const LanguageModel& model, const SparseAutoencoder& sae, SteeredGeneration& g) {
  auto log = std::make_shared<ActivationLog>();
  g.effective_coefficient = g.spec.coefficient * g.config.strength_multiplier;
  try {
    auto r = generate(model, g.prompt, g.config, {make_steering_intervention(sae, g.spec, g.config.strength_multiplier, log)});
    g.steered_text = std::move(r.text);
    g.steered_tokens = std::move(r.generated);
    g.steered_logits = std::move(r.step_logits);
  } catch (const GenerationBreakdown& e) {
    g.steered_text = e.partial_text();
    g.breakdown = Breakdown{e.step(), e.what()};
  }
  g.feature_activations = std::move(log->values);
}

}  // namespace detail

struct BaselineRun {
  std::string text;
  std::vector<TokenId> tokens;
  std::vector<Vector> logits;
  std::size_t prompt_tokens = 0;
};

inline BaselineRun baseline_generate(const LanguageModel& model, std::string_view prompt, const GenerationConfig& config) {
  auto r = generate(model, prompt, config);
  return BaselineRun{std::move(r.text), std::move(r.generated), std::move(r.step_logits),
                     r.trace.tokens.size() - static_cast<std::size_t>(config.max_new_tokens)};
}

// Baseline and steered runs share the config, including the seed. A
// non-finite residual ends the steered run; the partial text is kept and the
// breakdown is recorded instead of thrown.
inline SteeredGeneration steer_generate(const LanguageModel& model, const SparseAutoencoder& sae, std::string_view prompt,
                                        const SteeringSpec& spec, const GenerationConfig& config,
                                        const BaselineRun* shared_baseline = nullptr) {
  detail::check_sae_for_model(model, sae);
  spec.validate(sae);
  config.validate();
  SteeredGeneration g;
  g.prompt = std::string(prompt);
  g.spec = spec;
  g.config = config;
  BaselineRun own;
  if (!shared_baseline) {
    own = baseline_generate(model, prompt, config);
    shared_baseline = &own;
  }
  g.baseline_text = shared_baseline->text;
  g.baseline_tokens = shared_baseline->tokens;
  g.baseline_logits = shared_baseline->logits;
  g.prompt_tokens = shared_baseline->prompt_tokens;
  detail::run_steered(model, sae, g);
  return g;
}

struct SweepResult {
  std::string prompt;
  FeatureId feature;
  GenerationConfig config;
  BaselineRun baseline;
  std::vector<SteeredGeneration> entries;  // input order
};

// One steered run per coefficient against a single shared baseline.
inline SweepResult sweep(const LanguageModel& model, const SparseAutoencoder& sae, std::string_view prompt,
                         const SteeringSpec& base_spec, std::span<const double> coefficients, const GenerationConfig& config,
                         const std::function<void(std::size_t, std::size_t)>& progress = {}) {
  for (double c : coefficients)
    if (!std::isfinite(c)) throw Error(ErrorCode::spec, "sweep coefficients must be finite");
  detail::check_sae_for_model(model, sae);
  SweepResult result;
  result.prompt = std::string(prompt);
  result.feature = base_spec.feature;
  result.config = config;
  result.baseline = baseline_generate(model, prompt, config);
  for (std::size_t k = 0; k < coefficients.size(); ++k) {
    SteeringSpec spec = base_spec;
    spec.coefficient = coefficients[k];
    result.entries.push_back(steer_generate(model, sae, prompt, spec, config, &result.baseline));
    if (progress) progress(k + 1, coefficients.size());
  }
  return result;
}

// Log-probability changes of the realized next token when feature i is
// forced to zero at every position (error term preserved).
struct AblationRecord {
  FeatureId feature;
  std::vector<Token> tokens;
  std::vector<double> activations;        // feature activation per position
  std::vector<double> baseline_logprob;   // per predicted position p: log P(tokens[p+1])
  std::vector<double> ablated_logprob;
  std::vector<double> delta;              // ablated - baseline
};

inline Intervention make_ablation_intervention(const SparseAutoencoder& sae, std::vector<int> features) {
  Intervention iv;
  iv.hook = sae.hook();
  iv.fn = [&sae, features = std::move(features)](const InterventionContext&, std::span<const double> h) {
    return splice(sae, h, [&](Vector& f) {
      for (int i : features) f[static_cast<std::size_t>(i)] = 0.0;
    });
  };
  return iv;
}

inline Intervention make_ablate_all_intervention(const SparseAutoencoder& sae) {
  Intervention iv;
  iv.hook = sae.hook();
  iv.fn = [&sae](const InterventionContext&, std::span<const double> h) {
    return splice(sae, h, [](Vector& f) { std::fill(f.begin(), f.end(), 0.0); });
  };
  return iv;
}

inline AblationRecord ablate_feature(const LanguageModel& model, const SparseAutoencoder& sae, std::string_view text,
                                     const FeatureId& feature) {
  detail::check_sae_for_model(model, sae);
  if (feature.layer != sae.layer()) throw Error(ErrorCode::spec, "feature is not in the SAE's layer");
  sae.check_index(feature.index);
  AblationRecord rec;
  rec.feature = feature;
  rec.tokens = model.tokenize(text);
  const auto ids = token_ids(rec.tokens);
  const HookPoint hook = sae.hook();
  const auto clean = run_tokens(model, ids, {}, std::span<const HookPoint>(&hook, 1));
  const auto ablated = run_tokens(model, ids, {make_ablation_intervention(sae, {feature.index})});
  for (const auto& h : clean.residuals.at(hook.layer)) rec.activations.push_back(sae.activation(h, feature.index));
  for (std::size_t p = 0; p + 1 < ids.size(); ++p) {
    const double b = log_probability(clean.logits[p], ids[p + 1]);
    const double a = log_probability(ablated.logits[p], ids[p + 1]);
    rec.baseline_logprob.push_back(b);
    rec.ablated_logprob.push_back(a);
    rec.delta.push_back(a - b);
  }
  return rec;
}

// Change of the target logit at every position under all-position ablation
// of feature i (ablated - baseline).
inline std::vector<double> ablation_logit_delta(const LanguageModel& model, const SparseAutoencoder& sae,
                                                std::span<const TokenId> ids, int feature, TokenId target) {
  const auto clean = run_tokens(model, ids);
  const auto ablated = run_tokens(model, ids, {make_ablation_intervention(sae, {feature})});
  std::vector<double> out;
  for (std::size_t p = 0; p < ids.size(); ++p)
    out.push_back(ablated.logits[p][static_cast<std::size_t>(target)] - clean.logits[p][static_cast<std::size_t>(target)]);
  return out;
}

// First-order estimate of what ablation removes from the target logit:
//   attribution(p) = sum_{q <= p} a_i(h_q) * (d_i . d logit_target(p) / d h_q)
// The q = p term alone is reported as `local`. On a model that is linear
// from the hook to the logits, attribution(p) = -(ablation_logit_delta(p)).
struct AttributionRecord {
  FeatureId feature;
  TokenId target = 0;
  std::vector<Token> tokens;
  std::vector<double> activations;
  std::vector<double> attribution;
  std::vector<double> local;
};

inline AttributionRecord attribution(const LanguageModel& model, const SparseAutoencoder& sae, std::string_view text,
                                     const FeatureId& feature, TokenId target) {
  detail::check_sae_for_model(model, sae);
  if (feature.layer != sae.layer()) throw Error(ErrorCode::spec, "feature is not in the SAE's layer");
  sae.check_index(feature.index);
  if (target < 0 || target >= model.handle().vocab_size)
    throw Error(ErrorCode::spec, "target token " + std::to_string(target) + " outside the vocabulary");
  AttributionRecord rec;
  rec.feature = feature;
  rec.target = target;
  rec.tokens = model.tokenize(text);
  const auto ids = token_ids(rec.tokens);
  const HookPoint hook = sae.hook();
  const auto clean = run_tokens(model, ids, {}, std::span<const HookPoint>(&hook, 1));
  for (const auto& h : clean.residuals.at(hook.layer)) rec.activations.push_back(sae.activation(h, feature.index));
  const auto d = sae.w_dec().row(static_cast<std::size_t>(feature.index));
  for (std::size_t p = 0; p < ids.size(); ++p) {
    double total = 0.0, local = 0.0;
    if (std::any_of(rec.activations.begin(), rec.activations.begin() + static_cast<std::ptrdiff_t>(p + 1),
                    [](double a) { return a > 0.0; })) {
      const auto grads = model.logit_gradient(ids, sae.layer(), p, target);
      for (std::size_t q = 0; q <= p; ++q) {
        if (rec.activations[q] == 0.0) continue;
        const double term = rec.activations[q] * dot(d, grads[q]);
        total += term;
        if (q == p) local = term;
      }
    }
    rec.attribution.push_back(total);
    rec.local.push_back(local);
  }
  return rec;
}

}  // namespace saelab
