#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "saelab/digest.hpp"
#include "saelab/error.hpp"
#include "saelab/feature_id.hpp"
#include "saelab/linalg.hpp"
#include "saelab/model/types.hpp"

namespace saelab {

enum class DecoderNormPolicy { unit_norm_rows, free };

inline std::string to_string(DecoderNormPolicy p) {
  return p == DecoderNormPolicy::unit_norm_rows ? "unit-norm-rows" : "free";
}

inline DecoderNormPolicy parse_norm_policy(const std::string& s) {
  if (s == "unit-norm-rows") return DecoderNormPolicy::unit_norm_rows;
  if (s == "free") return DecoderNormPolicy::free;
  throw Error(ErrorCode::format, "unknown decoder norm policy '" + s + "'");
}

// Feature index -> strictly positive activation. Zeros are never stored.
using SparseActivations = std::map<int, double>;

struct FeatureDirection {
  Vector direction;  // raw decoder row
  double norm = 0.0;
};

// One layer's dictionary. Row i of the decoder is feature i's direction; the
// encoder is stored in the same [n_features x d_model] orientation.
class SparseAutoencoder {
 public:
  SparseAutoencoder() = default;

  SparseAutoencoder(int layer, Matrix w_enc, Vector b_enc, Matrix w_dec, Vector b_dec,
                    DecoderNormPolicy policy = DecoderNormPolicy::unit_norm_rows)
      : hook_{layer, HookStream::residual_post_mlp}, w_enc_(std::move(w_enc)), b_enc_(std::move(b_enc)),
        w_dec_(std::move(w_dec)), b_dec_(std::move(b_dec)), policy_(policy) {
    const auto n = w_enc_.rows();
    const auto d = w_enc_.cols();
    if (n == 0 || d == 0) throw Error(ErrorCode::shape, "SAE must have at least one feature and one dimension");
    if (b_enc_.size() != n || w_dec_.rows() != n || w_dec_.cols() != d || b_dec_.size() != d) {
      throw Error(ErrorCode::shape, "inconsistent SAE shapes: W_enc " + shape(w_enc_) + ", b_enc [" +
                                        std::to_string(b_enc_.size()) + "], W_dec " + shape(w_dec_) + ", b_dec [" +
                                        std::to_string(b_dec_.size()) + "]");
    }
    if (n <= d) {
      throw Error(ErrorCode::shape, "SAE must be overcomplete (n_features " + std::to_string(n) +
                                        " <= d_model " + std::to_string(d) + ")");
    }
  }

  int layer() const noexcept { return hook_.layer; }
  const HookPoint& hook() const noexcept { return hook_; }
  int n_features() const noexcept { return static_cast<int>(w_enc_.rows()); }
  int d_model() const noexcept { return static_cast<int>(w_enc_.cols()); }
  DecoderNormPolicy norm_policy() const noexcept { return policy_; }

  const Matrix& w_enc() const noexcept { return w_enc_; }
  const Vector& b_enc() const noexcept { return b_enc_; }
  const Matrix& w_dec() const noexcept { return w_dec_; }
  const Vector& b_dec() const noexcept { return b_dec_; }

  // Mutable access for training only.
  Matrix& mutable_w_enc() noexcept { return w_enc_; }
  Vector& mutable_b_enc() noexcept { return b_enc_; }
  Matrix& mutable_w_dec() noexcept { return w_dec_; }
  Vector& mutable_b_dec() noexcept { return b_dec_; }

  FeatureId feature_id(int index) const { return FeatureId{layer(), index}; }

  Vector pre_activations(std::span<const double> residual) const {
    check_residual(residual);
    Vector pre = matvec(w_enc_, residual);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += b_enc_[i];
    return pre;
  }

  Vector encode_dense(std::span<const double> residual) const {
    Vector f = pre_activations(residual);
    for (auto& x : f) x = std::max(0.0, x);
    return f;
  }

  SparseActivations encode(std::span<const double> residual) const {
    const Vector f = encode_dense(residual);
    SparseActivations out;
    for (std::size_t i = 0; i < f.size(); ++i)
      if (f[i] > 0.0) out.emplace(static_cast<int>(i), f[i]);
    return out;
  }

  double activation(std::span<const double> residual, int index) const {
    check_index(index);
    check_residual(residual);
    return std::max(0.0, dot(w_enc_.row(static_cast<std::size_t>(index)), residual) +
                             b_enc_[static_cast<std::size_t>(index)]);
  }

  Vector decode(const SparseActivations& activations) const {
    Vector x = b_dec_;
    for (auto [i, f] : activations) {
      check_index(i);
      axpy(f, w_dec_.row(static_cast<std::size_t>(i)), x);
    }
    return x;
  }

  Vector decode_dense(std::span<const double> activations) const {
    if (activations.size() != w_dec_.rows())
      throw Error(ErrorCode::shape, "activation vector has " + std::to_string(activations.size()) +
                                        " entries, SAE has " + std::to_string(n_features()) + " features");
    Vector x = b_dec_;
    for (std::size_t i = 0; i < activations.size(); ++i)
      if (activations[i] != 0.0) axpy(activations[i], w_dec_.row(i), x);
    return x;
  }

  // Mean over dimensions of the squared reconstruction residual.
  double reconstruction_error(std::span<const double> residual) const {
    if (!all_finite(residual)) throw Error(ErrorCode::shape, "residual contains non-finite values");
    const Vector x_hat = decode_dense(encode_dense(residual));
    double s = 0.0;
    for (std::size_t k = 0; k < x_hat.size(); ++k) {
      const double e = residual[k] - x_hat[k];
      s += e * e;
    }
    return s / static_cast<double>(d_model());
  }

  FeatureDirection feature_direction(int index) const {
    check_index(index);
    auto row = w_dec_.row(static_cast<std::size_t>(index));
    return FeatureDirection{Vector(row.begin(), row.end()), norm(row)};
  }

  std::string digest() const {
    Digest d;
    d.u64(static_cast<std::uint64_t>(hook_.layer));
    d.f64s(w_enc_.data()).f64s(b_enc_).f64s(w_dec_.data()).f64s(b_dec_);
    d.text(to_string(policy_));
    return d.hex();
  }

  void check_index(int index) const {
    if (index < 0 || index >= n_features())
      throw Error(ErrorCode::shape, "feature index " + std::to_string(index) + " outside [0, " +
                                        std::to_string(n_features()) + ")");
  }

 private:
  static std::string shape(const Matrix& m) {
    return "[" + std::to_string(m.rows()) + " x " + std::to_string(m.cols()) + "]";
  }

  void check_residual(std::span<const double> residual) const {
    if (residual.size() != w_enc_.cols())
      throw Error(ErrorCode::shape, "residual has dimension " + std::to_string(residual.size()) + ", SAE expects " +
                                        std::to_string(d_model()));
  }

  HookPoint hook_{};
  Matrix w_enc_;
  Vector b_enc_;
  Matrix w_dec_;
  Vector b_dec_;
  DecoderNormPolicy policy_ = DecoderNormPolicy::unit_norm_rows;
};

}  // namespace saelab
