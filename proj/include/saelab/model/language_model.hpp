#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "saelab/error.hpp"
#include "saelab/model/types.hpp"

namespace saelab {

// Incremental causal forward pass. Positions are appended one at a time; the
// states of earlier positions never change once computed.
class ForwardSession {
 public:
  virtual ~ForwardSession() = default;

  // Processes `token` at the next position and returns the next-token logits
  // predicted from that position.
  virtual Vector append(TokenId token, std::size_t step, bool in_prompt) = 0;

  virtual std::size_t length() const = 0;

  // Residual at (layer, position) after any interventions at that hook.
  virtual const Vector& residual(int layer, std::size_t position) const = 0;
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const ModelHandle& handle() const = 0;

  // Always starts with the begin-of-text token.
  virtual std::vector<Token> tokenize(std::string_view text) const = 0;

  virtual const std::string& token_text(TokenId id) const = 0;

  // Special tokens (begin-of-text, unknown) are never sampled.
  virtual bool samplable(TokenId id) const = 0;

  virtual std::string weights_digest() const = 0;

  virtual std::unique_ptr<ForwardSession> start_session(std::vector<Intervention> interventions) const = 0;

  // Gradient of logit[target] predicted at `position` with respect to the
  // residual at `layer` for every position 0..position (clean model, no
  // interventions).
  virtual std::vector<Vector> logit_gradient(std::span<const TokenId> tokens, int layer,
                                             std::size_t position, TokenId target) const {
    (void)tokens, (void)layer, (void)position, (void)target;
    throw Error(ErrorCode::capability, "backend '" + to_string(handle().backend) + "' does not expose gradients");
  }

  // Number of forward passes started; lets callers verify cache reuse.
  std::size_t forward_passes() const noexcept { return forward_passes_.load(); }

 protected:
  void count_forward_pass() const noexcept { forward_passes_.fetch_add(1); }

 private:
  mutable std::atomic<std::size_t> forward_passes_{0};
};

namespace detail {

inline void validate_interventions(const ModelHandle& model, std::span<const Intervention> interventions) {
  for (const auto& iv : interventions) {
    model.validate(iv.hook);
    if (!iv.fn) throw Error(ErrorCode::intervention, "intervention without a callback");
  }
}

}  // namespace detail

struct SequenceRun {
  std::vector<Vector> logits;                   // one per position
  std::map<int, std::vector<Vector>> residuals;  // captured layers
};

// Runs a full token sequence (prompt semantics: step 0, in_prompt = true).
inline SequenceRun run_tokens(const LanguageModel& model, std::span<const TokenId> tokens,
                              std::vector<Intervention> interventions = {},
                              std::span<const HookPoint> capture = {}) {
  detail::validate_interventions(model.handle(), interventions);
  for (const auto& h : capture) model.handle().validate(h);
  auto session = model.start_session(std::move(interventions));
  SequenceRun run;
  run.logits.reserve(tokens.size());
  for (TokenId t : tokens) run.logits.push_back(session->append(t, 0, true));
  for (const auto& h : capture) {
    auto& out = run.residuals[h.layer];
    out.clear();
    for (std::size_t p = 0; p < tokens.size(); ++p) out.push_back(session->residual(h.layer, p));
  }
  return run;
}

inline std::vector<TokenId> token_ids(std::span<const Token> tokens) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(t.id);
  return ids;
}

inline ActivationTrace forward_with_capture(const LanguageModel& model, std::string_view text,
                                            std::span<const HookPoint> hooks) {
  for (const auto& h : hooks) model.handle().validate(h);
  ActivationTrace trace;
  trace.tokens = model.tokenize(text);
  if (hooks.empty()) return trace;
  const auto ids = token_ids(trace.tokens);
  auto run = run_tokens(model, ids, {}, hooks);
  trace.residuals = std::move(run.residuals);
  return trace;
}

// Converts raw logits into a sampled token id using temperature and a
// frequency penalty over tokens already generated in this completion.
class Sampler {
 public:
  explicit Sampler(const GenerationConfig& config) : config_(config), rng_(config.seed) {}

  TokenId sample(const LanguageModel& model, std::span<const double> logits,
                 const std::map<TokenId, int>& counts) {
    std::vector<double> adjusted(logits.begin(), logits.end());
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < adjusted.size(); ++t) {
      const auto id = static_cast<TokenId>(t);
      if (!model.samplable(id)) {
        adjusted[t] = neg_inf;
        continue;
      }
      if (auto it = counts.find(id); it != counts.end()) adjusted[t] -= config_.frequency_penalty * it->second;
    }
    // The draw is consumed even in greedy mode so the stream stays aligned.
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    if (config_.temperature == 0.0) {
      return static_cast<TokenId>(std::max_element(adjusted.begin(), adjusted.end()) - adjusted.begin());
    }
    double max_logit = neg_inf;
    for (double a : adjusted) max_logit = std::max(max_logit, a);
    std::vector<double> weights(adjusted.size());
    double total = 0.0;
    for (std::size_t t = 0; t < adjusted.size(); ++t) {
      weights[t] = adjusted[t] == neg_inf ? 0.0 : std::exp((adjusted[t] - max_logit) / config_.temperature);
      total += weights[t];
    }
    double target = u * total;
    std::size_t last_positive = 0;
    for (std::size_t t = 0; t < weights.size(); ++t) {
      if (weights[t] <= 0.0) continue;
      last_positive = t;
      if (target < weights[t]) return static_cast<TokenId>(t);
      target -= weights[t];
    }
    return static_cast<TokenId>(last_positive);
  }

 private:
  GenerationConfig config_;
  std::mt19937_64 rng_;
};

struct GenerationResult {
  std::string prompt;
  std::string text;                      // completion only
  std::vector<TokenId> generated;        // completion token ids
  std::vector<Vector> step_logits;       // logits each generated token was drawn from
  ActivationTrace trace;                 // prompt + completion, residuals at captured hooks
};

// Thrown when an intervention makes the forward pass non-finite; carries the
// text produced before the breakdown.
class GenerationBreakdown : public NumericError {
 public:
  GenerationBreakdown(std::size_t step, const std::string& message, std::string partial_text)
      : NumericError(step, message), partial_text_(std::move(partial_text)) {}

  const std::string& partial_text() const noexcept { return partial_text_; }

 private:
  std::string partial_text_;
};

// Deterministic in (prompt, config, interventions, weights). Residuals are
// captured at every hook touched by an intervention plus `capture`.
inline GenerationResult generate(const LanguageModel& model, std::string_view prompt, const GenerationConfig& config,
                                 std::vector<Intervention> interventions = {},
                                 std::span<const HookPoint> capture = {}) {
  config.validate();
  detail::validate_interventions(model.handle(), interventions);
  std::set<int> layers;
  for (const auto& h : capture) {
    model.handle().validate(h);
    layers.insert(h.layer);
  }
  for (const auto& iv : interventions) layers.insert(iv.hook.layer);

  GenerationResult result;
  result.prompt = std::string(prompt);
  result.trace.tokens = model.tokenize(prompt);
  auto session = model.start_session(std::move(interventions));
  Sampler sampler(config);
  std::map<TokenId, int> counts;

  try {
    Vector logits;
    for (const auto& tok : result.trace.tokens) logits = session->append(tok.id, 0, true);
    std::size_t offset = prompt.size();
    for (int step = 1; step <= config.max_new_tokens; ++step) {
      const TokenId next = sampler.sample(model, logits, counts);
      result.step_logits.push_back(logits);
      result.generated.push_back(next);
      ++counts[next];
      const auto& piece = model.token_text(next);
      result.text += piece;
      result.trace.tokens.push_back(Token{next, piece, {offset, offset + piece.size()}, false});
      offset += piece.size();
      // The final token is still fed so every trace token has a residual.
      logits = session->append(next, static_cast<std::size_t>(step), false);
    }
  } catch (const NumericError& e) {
    throw GenerationBreakdown(e.step(), e.what(), result.text);
  }

  for (int layer : layers) {
    auto& out = result.trace.residuals[layer];
    for (std::size_t p = 0; p < session->length(); ++p) out.push_back(session->residual(layer, p));
  }
  return result;
}

// Log-softmax of raw logits at one position.
inline double log_probability(std::span<const double> logits, TokenId token) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double l : logits) max_logit = std::max(max_logit, l);
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - max_logit);
  return logits[static_cast<std::size_t>(token)] - max_logit - std::log(sum);
}

}  // namespace saelab
