#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "saelab/digest.hpp"
#include "saelab/error.hpp"
#include "saelab/linalg.hpp"
#include "saelab/model/language_model.hpp"

namespace saelab {

// A synthetic token: its surface text and how strongly it loads each
// ground-truth dictionary direction.
struct VocabEntry {
  std::string text;
  std::vector<std::pair<int, double>> loadings;  // (dictionary row, strength)
};

// Planted-feature model used as an oracle. Residuals are exact superpositions
// of dictionary rows, so every downstream quantity has a closed form.
//
//   layer 0:  h0(p) = sum_j s[tok_p][j] * u_j + positional_scale * r(p)
//   layer l:  hl(p) = h(l-1)(p) + mix[l] * M h(l-1)(p-1) + mlp_scale * tanh(A_l h(l-1)(p))
//   logits:   W_U h(L-1)(p)
//
// M is a signed cyclic shift (orthogonal); r(p) are fixed unit vectors;
// W_U rows are readout_gain * embedding plus optional seeded noise.
struct SyntheticModelSpec {
  std::string model_id = "synthetic";
  Matrix dictionary;  // F_true x d_model, unit rows
  std::vector<VocabEntry> vocabulary;
  std::vector<std::pair<int, double>> bos_loadings;
  int n_layers = 2;
  double sparsity = 3.0;
  std::uint64_t seed = 0;
  double positional_scale = 1e-3;
  std::vector<double> mix;  // indexed by layer; layer 0 entry unused
  double mlp_scale = 0.0;
  double readout_gain = 4.0;
  double readout_noise = 0.0;

  int d_model() const { return static_cast<int>(dictionary.cols()); }
  int n_true_features() const { return static_cast<int>(dictionary.rows()); }

  void validate() const {
    if (dictionary.rows() == 0 || dictionary.cols() == 0)
      throw Error(ErrorCode::config, "synthetic dictionary must be non-empty");
    if (n_layers < 1) throw Error(ErrorCode::config, "n_layers must be >= 1");
    for (std::size_t r = 0; r < dictionary.rows(); ++r) {
      if (std::abs(norm(dictionary.row(r)) - 1.0) > 1e-9)
        throw Error(ErrorCode::config, "dictionary row " + std::to_string(r) + " is not unit norm");
    }
    auto check_loadings = [&](const std::vector<std::pair<int, double>>& l) {
      for (auto [j, s] : l)
        if (j < 0 || j >= n_true_features() || !std::isfinite(s))
          throw Error(ErrorCode::config, "loading references an invalid dictionary row");
    };
    check_loadings(bos_loadings);
    std::unordered_map<std::string, int> seen;
    for (const auto& v : vocabulary) {
      if (v.text.empty()) throw Error(ErrorCode::config, "vocabulary entries must be non-empty");
      if (!seen.emplace(v.text, 0).second)
        throw Error(ErrorCode::config, "duplicate vocabulary entry '" + v.text + "'");
      check_loadings(v.loadings);
    }
  }
};

namespace detail {

inline std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: consume it alone
}

}  // namespace detail

class SyntheticModel final : public LanguageModel {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kUnknown = 1;
  static constexpr TokenId kFirstOrdinary = 2;

  explicit SyntheticModel(SyntheticModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const int d = spec_.d_model();
    handle_.model_id = spec_.model_id;
    handle_.n_layers = spec_.n_layers;
    handle_.d_model = d;
    handle_.bos_token_id = kBos;
    handle_.backend = Backend::synthetic;
    handle_.vocab_size = static_cast<int>(spec_.vocabulary.size()) + kFirstOrdinary;

    texts_.push_back("<|begin_of_text|>");
    texts_.push_back("<unk>");
    for (const auto& v : spec_.vocabulary) texts_.push_back(v.text);
    for (std::size_t i = 0; i < spec_.vocabulary.size(); ++i) {
      lookup_.emplace(spec_.vocabulary[i].text, static_cast<TokenId>(i) + kFirstOrdinary);
      max_piece_ = std::max(max_piece_, spec_.vocabulary[i].text.size());
    }

    embeddings_ = Matrix(static_cast<std::size_t>(handle_.vocab_size), static_cast<std::size_t>(d));
    auto load = [&](TokenId id, const std::vector<std::pair<int, double>>& loadings) {
      for (auto [j, s] : loadings) axpy(s, spec_.dictionary.row(static_cast<std::size_t>(j)), embeddings_.row(id));
    };
    load(kBos, spec_.bos_loadings);
    for (std::size_t i = 0; i < spec_.vocabulary.size(); ++i)
      load(static_cast<TokenId>(i) + kFirstOrdinary, spec_.vocabulary[i].loadings);

    std::mt19937_64 rng(spec_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    shift_signs_.resize(static_cast<std::size_t>(d));
    for (auto& s : shift_signs_) s = (rng() & 1) ? 1.0 : -1.0;

    mlp_.resize(static_cast<std::size_t>(spec_.n_layers));
    for (int l = 1; l < spec_.n_layers; ++l) {
      Matrix a(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
      for (auto& x : a.data()) x = normal(rng) / std::sqrt(static_cast<double>(d));
      mlp_[static_cast<std::size_t>(l)] = std::move(a);
    }

    readout_ = Matrix(embeddings_.rows(), embeddings_.cols());
    for (std::size_t t = 0; t < readout_.rows(); ++t) {
      for (std::size_t c = 0; c < readout_.cols(); ++c) {
        const double noise = normal(rng);
        if (static_cast<TokenId>(t) < kFirstOrdinary) continue;
        readout_(t, c) = spec_.readout_gain * embeddings_(t, c) + spec_.readout_noise * noise;
      }
    }

    Digest digest;
    digest.text(spec_.model_id).f64s(spec_.dictionary.data()).f64s(embeddings_.data()).f64s(readout_.data());
    digest.u64(static_cast<std::uint64_t>(spec_.n_layers)).u64(spec_.seed).f64(spec_.positional_scale).f64(spec_.mlp_scale);
    for (double m : spec_.mix) digest.f64(m);
    digest_ = digest.hex();
  }

  const SyntheticModelSpec& spec() const noexcept { return spec_; }
  const ModelHandle& handle() const override { return handle_; }
  std::string weights_digest() const override { return digest_; }

  const std::string& token_text(TokenId id) const override {
    if (id < 0 || id >= handle_.vocab_size) throw Error(ErrorCode::shape, "token id out of range");
    return texts_[static_cast<std::size_t>(id)];
  }

  bool samplable(TokenId id) const override { return id >= kFirstOrdinary && id < handle_.vocab_size; }

  std::optional<TokenId> find_token(std::string_view text) const {
    if (auto it = lookup_.find(std::string(text)); it != lookup_.end()) return it->second;
    return std::nullopt;
  }

  // Greedy longest match; characters outside the vocabulary become one
  // unknown token per UTF-8 code point, keeping their source text.
  std::vector<Token> tokenize(std::string_view text) const override {
    std::vector<Token> out;
    out.push_back(Token{kBos, texts_[kBos], {0, 0}, true});
    std::size_t i = 0;
    while (i < text.size()) {
      std::size_t best_len = 0;
      TokenId best = kUnknown;
      const std::size_t longest = std::min(max_piece_, text.size() - i);
      for (std::size_t len = longest; len > 0; --len) {
        if (auto it = lookup_.find(std::string(text.substr(i, len))); it != lookup_.end()) {
          best_len = len;
          best = it->second;
          break;
        }
      }
      if (best_len == 0) best_len = std::min(detail::utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
      out.push_back(Token{best, std::string(text.substr(i, best_len)), {i, i + best_len}, false});
      i += best_len;
    }
    return out;
  }

  std::span<const double> embedding(TokenId id) const { return embeddings_.row(static_cast<std::size_t>(id)); }
  std::span<const double> readout(TokenId id) const { return readout_.row(static_cast<std::size_t>(id)); }

  // Fixed unit vector r(p) scaled by positional_scale.
  Vector positional_offset(std::size_t position) const {
    const auto d = static_cast<std::size_t>(handle_.d_model);
    Vector r(d, 0.0);
    if (spec_.positional_scale == 0.0) return r;
    std::mt19937_64 rng(spec_.seed ^ (0x9e3779b97f4a7c15ULL * (position + 1)));
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (auto& x : r) x = uni(rng);
    const double n = norm(r);
    for (auto& x : r) x *= spec_.positional_scale / n;
    return r;
  }

  // (M x)_i = sign_i * x_{(i+1) mod d}
  Vector shift(std::span<const double> x) const {
    const std::size_t d = x.size();
    Vector y(d);
    for (std::size_t i = 0; i < d; ++i) y[i] = shift_signs_[i] * x[(i + 1) % d];
    return y;
  }

  Vector shift_transposed(std::span<const double> g) const {
    const std::size_t d = g.size();
    Vector y(d);
    for (std::size_t i = 0; i < d; ++i) y[(i + 1) % d] = shift_signs_[i] * g[i];
    return y;
  }

  double mix(int layer) const {
    return static_cast<std::size_t>(layer) < spec_.mix.size() ? spec_.mix[static_cast<std::size_t>(layer)] : 0.0;
  }

  // One block update without interventions; `previous` is empty at position 0.
  Vector block(int layer, std::span<const double> current, std::span<const double> previous) const {
    Vector h(current.begin(), current.end());
    const double m = mix(layer);
    if (m != 0.0 && !previous.empty()) axpy(m, shift(previous), h);
    if (spec_.mlp_scale != 0.0) {
      const auto pre = matvec(mlp_[static_cast<std::size_t>(layer)], current);
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += spec_.mlp_scale * std::tanh(pre[i]);
    }
    return h;
  }

  std::unique_ptr<ForwardSession> start_session(std::vector<Intervention> interventions) const override;

  std::vector<Vector> logit_gradient(std::span<const TokenId> tokens, int layer, std::size_t position,
                                     TokenId target) const override {
    handle_.validate(HookPoint{layer});
    if (position >= tokens.size()) throw Error(ErrorCode::shape, "gradient position past end of sequence");
    const int L = handle_.n_layers;
    const std::size_t T = position + 1;
    // Clean forward, keeping every layer's states.
    std::vector<std::vector<Vector>> h(static_cast<std::size_t>(L), std::vector<Vector>(T));
    for (std::size_t p = 0; p < T; ++p) {
      h[0][p] = layer0(tokens[p], p);
      for (int l = 1; l < L; ++l) {
        std::span<const double> prev;
        if (p > 0) prev = h[static_cast<std::size_t>(l - 1)][p - 1];
        h[static_cast<std::size_t>(l)][p] = block(l, h[static_cast<std::size_t>(l - 1)][p], prev);
      }
    }
    const auto d = static_cast<std::size_t>(handle_.d_model);
    std::vector<Vector> grad(T, Vector(d, 0.0));
    auto r = readout(target);
    grad[position].assign(r.begin(), r.end());
    for (int l = L - 1; l > layer; --l) {
      std::vector<Vector> below(T, Vector(d, 0.0));
      const double m = mix(l);
      for (std::size_t q = 0; q < T; ++q) {
        const auto& g = grad[q];
        axpy(1.0, g, below[q]);
        if (spec_.mlp_scale != 0.0) {
          const auto& z = h[static_cast<std::size_t>(l - 1)][q];
          const auto pre = matvec(mlp_[static_cast<std::size_t>(l)], z);
          Vector local(d);
          for (std::size_t i = 0; i < d; ++i) {
            const double t = std::tanh(pre[i]);
            local[i] = spec_.mlp_scale * (1.0 - t * t) * g[i];
          }
          axpy(1.0, matvec_transposed(mlp_[static_cast<std::size_t>(l)], local), below[q]);
        }
        if (m != 0.0 && q > 0) axpy(m, shift_transposed(g), below[q - 1]);
      }
      grad = std::move(below);
    }
    return grad;
  }

  Vector layer0(TokenId token, std::size_t position) const {
    auto e = embedding(token);
    Vector h(e.begin(), e.end());
    axpy(1.0, positional_offset(position), h);
    return h;
  }

  Vector logits_from(std::span<const double> final_residual) const { return matvec(readout_, final_residual); }

 private:
  friend class SyntheticSession;

  SyntheticModelSpec spec_;
  ModelHandle handle_;
  std::vector<std::string> texts_;
  std::unordered_map<std::string, TokenId> lookup_;
  std::size_t max_piece_ = 0;
  Matrix embeddings_;
  Matrix readout_;
  std::vector<double> shift_signs_;
  std::vector<Matrix> mlp_;
  std::string digest_;
};

class SyntheticSession final : public ForwardSession {
 public:
  SyntheticSession(const SyntheticModel& model, std::vector<Intervention> interventions)
      : model_(model), interventions_(std::move(interventions)),
        states_(static_cast<std::size_t>(model.handle().n_layers)) {}

  Vector append(TokenId token, std::size_t step, bool in_prompt) override {
    if (token < 0 || token >= model_.handle().vocab_size) throw Error(ErrorCode::shape, "token id out of range");
    const std::size_t p = length_;
    const int L = model_.handle().n_layers;
    for (int l = 0; l < L; ++l) {
      Vector h;
      if (l == 0) {
        h = model_.layer0(token, p);
      } else {
        std::span<const double> prev;
        if (p > 0) prev = states_[static_cast<std::size_t>(l - 1)][p - 1];
        h = model_.block(l, states_[static_cast<std::size_t>(l - 1)][p], prev);
      }
      intervene(l, p, step, in_prompt, h);
      states_[static_cast<std::size_t>(l)].push_back(std::move(h));
    }
    ++length_;
    auto logits = model_.logits_from(states_[static_cast<std::size_t>(L - 1)][p]);
    if (!all_finite(logits)) throw NumericError(step, "non-finite logits at step " + std::to_string(step));
    return logits;
  }

  std::size_t length() const override { return length_; }

  const Vector& residual(int layer, std::size_t position) const override {
    return states_.at(static_cast<std::size_t>(layer)).at(position);
  }

 private:
  void intervene(int layer, std::size_t position, std::size_t step, bool in_prompt, Vector& h) const {
    for (const auto& iv : interventions_) {
      if (iv.hook.layer != layer) continue;
      if (in_prompt && !iv.apply_to_prompt) continue;
      InterventionContext ctx{iv.hook, position, step, in_prompt};
      Vector out = iv.fn(ctx, h);
      if (out.size() != h.size()) {
        throw Error(ErrorCode::intervention, "intervention at layer " + std::to_string(layer) + " returned " +
                                                 std::to_string(out.size()) + " values, expected " +
                                                 std::to_string(h.size()));
      }
      if (!all_finite(out)) {
        throw NumericError(step, "non-finite residual after intervention at layer " + std::to_string(layer) +
                                     ", step " + std::to_string(step));
      }
      h = std::move(out);
    }
  }

  const SyntheticModel& model_;
  std::vector<Intervention> interventions_;
  std::vector<std::vector<Vector>> states_;
  std::size_t length_ = 0;
};

inline std::unique_ptr<ForwardSession> SyntheticModel::start_session(std::vector<Intervention> interventions) const {
  count_forward_pass();
  return std::make_unique<SyntheticSession>(*this, std::move(interventions));
}

}  // namespace saelab
