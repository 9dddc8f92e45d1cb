#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "saelab/error.hpp"
#include "saelab/linalg.hpp"
#include "saelab/sae/sparse_autoencoder.hpp"

namespace saelab {

struct SaeTrainingConfig {
  double l1_coefficient = 1e-3;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int steps = 1000;
  std::uint64_t seed = 0;
  DecoderNormPolicy decoder_norm_policy = DecoderNormPolicy::unit_norm_rows;
  // Fraction of steps at the end over which the learning rate decays linearly to zero.
  double decay_fraction = 0.2;
  // When positive, the loss on the first `monitor_size` dataset rows is
  // recorded after every step (a fixed batch, so free of sampling noise).
  int monitor_size = 0;

  void validate() const {
    if (!(l1_coefficient >= 0.0)) throw Error(ErrorCode::config, "l1 coefficient must be >= 0");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::config, "learning rate must be positive");
    if (batch_size < 1 || steps < 1) throw Error(ErrorCode::config, "batch size and steps must be positive");
    if (decay_fraction < 0.0 || decay_fraction > 1.0) throw Error(ErrorCode::config, "decay fraction must be in [0, 1]");
  }
};

struct SaeGradients {
  Matrix w_enc;
  Vector b_enc;
  Matrix w_dec;
  Vector b_dec;
};

struct LossAndGradients {
  double loss = 0.0;
  double reconstruction = 0.0;
  double sparsity = 0.0;
  SaeGradients grad;
};

// L = mean_b [ (1/d) ||x_b - x_hat_b||^2 + lambda * ||f_b||_1 ] over the rows
// of `batch`, with analytic gradients for all four parameter blocks.
inline LossAndGradients loss_and_gradients(const SparseAutoencoder& sae, const Matrix& batch, double lambda) {
  const auto n = static_cast<std::size_t>(sae.n_features());
  const auto d = static_cast<std::size_t>(sae.d_model());
  if (batch.cols() != d) throw Error(ErrorCode::shape, "batch dimension does not match SAE d_model");
  const auto B = batch.rows();
  if (B == 0) throw Error(ErrorCode::shape, "empty batch");

  LossAndGradients out;
  out.grad = SaeGradients{Matrix(n, d), Vector(n, 0.0), Matrix(n, d), Vector(d, 0.0)};
  const double recon_scale = 2.0 / (static_cast<double>(d) * static_cast<double>(B));
  const double l1_scale = lambda / static_cast<double>(B);

  Vector pre(n), f(n), x_hat(d), err(d), g_pre(n);
  for (std::size_t b = 0; b < B; ++b) {
    const auto x = batch.row(b);
    for (std::size_t i = 0; i < n; ++i) {
      pre[i] = dot(sae.w_enc().row(i), x) + sae.b_enc()[i];
      f[i] = pre[i] > 0.0 ? pre[i] : 0.0;
    }
    x_hat = sae.b_dec();
    for (std::size_t i = 0; i < n; ++i)
      if (f[i] != 0.0) axpy(f[i], sae.w_dec().row(i), x_hat);
    double sq = 0.0, l1 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      err[k] = x_hat[k] - x[k];
      sq += err[k] * err[k];
    }
    for (double v : f) l1 += v;
    out.reconstruction += sq / static_cast<double>(d);
    out.sparsity += l1;

    axpy(recon_scale, err, out.grad.b_dec);
    for (std::size_t i = 0; i < n; ++i) {
      if (f[i] != 0.0) axpy(recon_scale * f[i], err, out.grad.w_dec.row(i));
      const double df = recon_scale * dot(sae.w_dec().row(i), err) + l1_scale;
      g_pre[i] = pre[i] > 0.0 ? df : 0.0;
      if (g_pre[i] != 0.0) {
        axpy(g_pre[i], x, out.grad.w_enc.row(i));
        out.grad.b_enc[i] += g_pre[i];
      }
    }
  }
  out.reconstruction /= static_cast<double>(B);
  out.sparsity /= static_cast<double>(B);
  out.loss = out.reconstruction + lambda * out.sparsity;
  return out;
}

inline double loss_value(const SparseAutoencoder& sae, const Matrix& batch, double lambda) {
  const auto d = static_cast<double>(sae.d_model());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.rows(); ++b) {
    const auto f = sae.encode_dense(batch.row(b));
    const auto x_hat = sae.decode_dense(f);
    double sq = 0.0;
    for (std::size_t k = 0; k < x_hat.size(); ++k) sq += (x_hat[k] - batch(b, k)) * (x_hat[k] - batch(b, k));
    total += sq / d + lambda * std::accumulate(f.begin(), f.end(), 0.0);
  }
  return total / static_cast<double>(batch.rows());
}

inline void normalize_decoder_rows(SparseAutoencoder& sae) {
  auto& w = sae.mutable_w_dec();
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto row = w.row(i);
    const double nrm = norm(row);
    if (nrm > 0.0)
      for (auto& x : row) x /= nrm;
  }
}

struct TrainingResult {
  SparseAutoencoder sae;
  std::vector<double> loss_history;     // loss of each step's batch before its update
  std::vector<double> monitor_history;  // fixed-batch loss after each update, if enabled
};

namespace detail {

// Adam state for one flat parameter block.
struct AdamBlock {
  std::vector<double> m, v;

  void step(std::span<double> param, std::span<const double> grad, double lr, int t) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (m.empty()) m.assign(param.size(), 0.0), v.assign(param.size(), 0.0);
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

}  // namespace detail

// Minibatch Adam on the L1-penalized reconstruction objective. The decoder is
// initialised with random unit rows, the encoder with its transpose, and the
// decoder bias with the dataset mean.
inline TrainingResult train_sae(const Matrix& dataset, int d_model, int n_features, int layer,
                                const SaeTrainingConfig& config) {
  config.validate();
  if (dataset.rows() == 0) throw Error(ErrorCode::shape, "training dataset is empty");
  if (static_cast<int>(dataset.cols()) != d_model)
    throw Error(ErrorCode::shape, "dataset dimension " + std::to_string(dataset.cols()) + " != d_model " +
                                      std::to_string(d_model));
  const auto n = static_cast<std::size_t>(n_features);
  const auto d = static_cast<std::size_t>(d_model);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix w_dec(n, d);
  for (auto& x : w_dec.data()) x = normal(rng);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = w_dec.row(i);
    const double nrm = norm(row);
    for (auto& x : row) x /= nrm;
  }
  Matrix w_enc = w_dec;
  Vector b_dec(d, 0.0);
  for (std::size_t r = 0; r < dataset.rows(); ++r) axpy(1.0, dataset.row(r), b_dec);
  for (auto& x : b_dec) x /= static_cast<double>(dataset.rows());

  TrainingResult result{SparseAutoencoder(layer, std::move(w_enc), Vector(n, 0.0), std::move(w_dec), std::move(b_dec),
                                          config.decoder_norm_policy),
                        {},
                        {}};
  auto& sae = result.sae;
  result.loss_history.reserve(static_cast<std::size_t>(config.steps));

  detail::AdamBlock adam_w_enc, adam_b_enc, adam_w_dec, adam_b_dec;
  std::uniform_int_distribution<std::size_t> pick(0, dataset.rows() - 1);
  Matrix batch(static_cast<std::size_t>(config.batch_size), d);
  Matrix monitor;
  if (config.monitor_size > 0) {
    const auto rows = std::min<std::size_t>(static_cast<std::size_t>(config.monitor_size), dataset.rows());
    monitor = Matrix(rows, d, std::vector<double>(dataset.data().begin(), dataset.data().begin() + rows * d));
  }
  const int decay_start = static_cast<int>(std::lround(config.steps * (1.0 - config.decay_fraction)));

  for (int step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < batch.rows(); ++b) {
      const auto src = dataset.row(pick(rng));
      std::copy(src.begin(), src.end(), batch.row(b).begin());
    }
    auto lg = loss_and_gradients(sae, batch, config.l1_coefficient);
    if (!std::isfinite(lg.loss)) {
      throw Error(ErrorCode::divergence, "training diverged: non-finite loss at step " + std::to_string(step));
    }
    result.loss_history.push_back(lg.loss);

    double lr = config.learning_rate;
    if (step > decay_start && config.steps > decay_start)
      lr *= static_cast<double>(config.steps - step + 1) / static_cast<double>(config.steps - decay_start + 1);

    adam_w_enc.step(sae.mutable_w_enc().data(), lg.grad.w_enc.data(), lr, step);
    adam_b_enc.step(sae.mutable_b_enc(), lg.grad.b_enc, lr, step);
    adam_w_dec.step(sae.mutable_w_dec().data(), lg.grad.w_dec.data(), lr, step);
    adam_b_dec.step(sae.mutable_b_dec(), lg.grad.b_dec, lr, step);
    if (config.decoder_norm_policy == DecoderNormPolicy::unit_norm_rows) normalize_decoder_rows(sae);
    if (!monitor.empty()) result.monitor_history.push_back(loss_value(sae, monitor, config.l1_coefficient));
  }
  return result;
}

// Random dictionary of `n_features` unit directions in `d_model` dimensions.
inline Matrix random_dictionary(int n_features, int d_model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(static_cast<std::size_t>(n_features), static_cast<std::size_t>(d_model));
  for (auto& x : m.data()) x = normal(rng);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double nrm = norm(row);
    for (auto& x : row) x /= nrm;
  }
  return m;
}

// Samples x = sum_j c_j u_j where each dictionary row is active with
// probability sparsity / F and active coefficients are uniform in [0, 1).
inline Matrix superposition_dataset(const Matrix& dictionary, std::size_t n_samples, double sparsity,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double p = sparsity / static_cast<double>(dictionary.rows());
  Matrix data(n_samples, dictionary.cols());
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (std::size_t j = 0; j < dictionary.rows(); ++j) {
      if (uni(rng) < p) axpy(uni(rng), dictionary.row(j), data.row(s));
    }
  }
  return data;
}

// For each ground-truth direction, the best cosine similarity with any
// learned decoder row; averaged over the ground truth.
inline double mean_max_cosine_similarity(const Matrix& learned, const Matrix& truth) {
  double total = 0.0;
  for (std::size_t j = 0; j < truth.rows(); ++j) {
    double best = -1.0;
    for (std::size_t i = 0; i < learned.rows(); ++i) best = std::max(best, cosine_similarity(learned.row(i), truth.row(j)));
    total += best;
  }
  return total / static_cast<double>(truth.rows());
}

inline double mean_l0(const SparseAutoencoder& sae, const Matrix& data) {
  double total = 0.0;
  for (std::size_t r = 0; r < data.rows(); ++r) total += static_cast<double>(sae.encode(data.row(r)).size());
  return total / static_cast<double>(data.rows());
}

}  // namespace saelab
