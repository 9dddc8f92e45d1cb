#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "saelab/error.hpp"
#include "saelab/feature_id.hpp"
#include "saelab/linalg.hpp"

namespace saelab {

using TokenId = std::int32_t;

enum class Backend { real_llm, synthetic };

inline std::string to_string(Backend b) { return b == Backend::synthetic ? "synthetic" : "real-llm"; }

inline Backend parse_backend(const std::string& s) {
  if (s == "synthetic") return Backend::synthetic;
  if (s == "real-llm") return Backend::real_llm;
  throw Error(ErrorCode::config, "unknown backend '" + s + "'");
}

// Only the residual stream after each block's MLP is hooked.
enum class HookStream { residual_post_mlp };

inline std::string to_string(HookStream) { return "residual-post-mlp"; }

inline HookStream parse_hook_stream(const std::string& s) {
  if (s == "residual-post-mlp" || s == "resid_post") return HookStream::residual_post_mlp;
  throw Error(ErrorCode::hook, "unsupported hook stream '" + s + "' (only residual-post-mlp)");
}

struct HookPoint {
  int layer = 0;
  HookStream stream = HookStream::residual_post_mlp;

  friend auto operator<=>(const HookPoint&, const HookPoint&) = default;
};

struct ModelHandle {
  std::string model_id;
  int n_layers = 1;
  int d_model = 1;
  TokenId bos_token_id = 0;
  Backend backend = Backend::synthetic;
  int vocab_size = 0;

  HookPoint hook(int layer) const {
    if (layer < 0 || layer >= n_layers) {
      throw Error(ErrorCode::hook, "layer " + std::to_string(layer) + " outside [0, " +
                                       std::to_string(n_layers) + ") for model " + model_id);
    }
    return HookPoint{layer, HookStream::residual_post_mlp};
  }

  void validate(const HookPoint& hook) const { (void)this->hook(hook.layer); }
};

struct GenerationConfig {
  double temperature = 0.5;
  int max_new_tokens = 70;
  double frequency_penalty = 1.0;
  std::uint64_t seed = 16;
  double strength_multiplier = 1.0;

  void validate() const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature))
      throw Error(ErrorCode::config, "temperature must be a finite nonnegative number");
    if (max_new_tokens < 1) throw Error(ErrorCode::config, "max_new_tokens must be positive");
    if (!std::isfinite(frequency_penalty) || !std::isfinite(strength_multiplier))
      throw Error(ErrorCode::config, "generation parameters must be finite");
  }

  friend bool operator==(const GenerationConfig&, const GenerationConfig&) = default;
};

inline void to_json(nlohmann::json& j, const GenerationConfig& c) {
  j = {{"temperature", c.temperature},
       {"max_new_tokens", c.max_new_tokens},
       {"frequency_penalty", c.frequency_penalty},
       {"seed", c.seed},
       {"strength_multiplier", c.strength_multiplier}};
}

// Missing keys keep their defaults so request bodies may carry partial overrides.
inline void from_json(const nlohmann::json& j, GenerationConfig& c) {
  c.temperature = j.value("temperature", c.temperature);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.frequency_penalty = j.value("frequency_penalty", c.frequency_penalty);
  c.seed = j.value("seed", c.seed);
  c.strength_multiplier = j.value("strength_multiplier", c.strength_multiplier);
}

// Byte range [begin, end) into the source text.
struct TextSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const TextSpan&, const TextSpan&) = default;
};

struct Token {
  TokenId id = 0;
  std::string text;
  TextSpan span;
  bool is_bos = false;

  friend bool operator==(const Token&, const Token&) = default;
};

inline std::string detokenize(std::span<const Token> tokens) {
  std::string out;
  for (const auto& t : tokens)
    if (!t.is_bos) out += t.text;
  return out;
}

// What an intervention sees: which hook, which sequence position, and which
// generation step (0 while the prompt is processed).
struct InterventionContext {
  HookPoint hook;
  std::size_t position = 0;
  std::size_t step = 0;
  bool in_prompt = true;
};

using InterventionFn = std::function<Vector(const InterventionContext&, std::span<const double>)>;

// A per-hook residual transformer: vector in, vector of the same size out.
struct Intervention {
  HookPoint hook;
  InterventionFn fn;
  bool apply_to_prompt = true;
};

struct ActivationTrace {
  std::vector<Token> tokens;
  // layer -> one residual per token position.
  std::map<int, std::vector<Vector>> residuals;
  // Per-token sparse feature activations; empty unless an SAE was attached.
  std::vector<std::map<FeatureId, double>> feature_activations;
};

}  // namespace saelab
