#pragma once

// Shared fixtures and hand-rolled generators for the test suites.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "saelab/linalg.hpp"
#include "saelab/model/demo_world.hpp"
#include "saelab/model/synthetic.hpp"
#include "saelab/sae/sparse_autoencoder.hpp"
#include "saelab/sae/training.hpp"

namespace saelab::fixtures {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(SAELAB_FIXTURES) / name; }

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "saelab") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  bool coin() { return integer(0, 1) == 1; }

  Vector vector(std::size_t n, double scale = 1.0) {
    Vector v(n);
    for (auto& x : v) x = scale * normal();
    return v;
  }

  Matrix matrix(std::size_t r, std::size_t c, double scale = 1.0) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i)
      for (auto& x : m.row(i)) x = scale * normal();
    return m;
  }

  // Words drawn from the tiny model's vocabulary plus spaces.
  std::string prompt(int min_words = 1, int max_words = 6) {
    static const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta",
                                                   "a", "b", "c", "x", "y", "z"};
    std::string out;
    const int n = integer(min_words, max_words);
    for (int i = 0; i < n; ++i) {
      if (i) out += ' ';
      out += words[static_cast<std::size_t>(integer(0, static_cast<int>(words.size()) - 1))];
    }
    return out;
  }
};

// A small planted model: named word tokens each loading one or two dictionary
// rows, plus every printable ASCII character so arbitrary text tokenizes.
inline SyntheticModelSpec tiny_spec(std::uint64_t seed = 1, int d_model = 8, int n_true = 12, int n_layers = 3,
                                    double mlp_scale = 0.0, double mix = 0.2) {
  SyntheticModelSpec spec;
  spec.model_id = "tiny";
  spec.dictionary = random_dictionary(n_true, d_model, seed);
  spec.n_layers = n_layers;
  spec.seed = seed;
  spec.mlp_scale = mlp_scale;
  spec.mix.assign(static_cast<std::size_t>(n_layers), mix);
  spec.bos_loadings = {{n_true - 1, 1.0}};
  const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"};
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::vector<std::pair<int, double>> l{{static_cast<int>(i % static_cast<std::size_t>(n_true - 1)), 1.0}};
    if (i % 3 == 0) l.emplace_back(static_cast<int>((i + 5) % static_cast<std::size_t>(n_true - 1)), 0.5);
    spec.vocabulary.push_back({words[i], l});
  }
  for (char c = 0x20; c < 0x7f; ++c) {
    std::vector<std::pair<int, double>> l;
    if (c >= 'a' && c <= 'z') l.emplace_back((c - 'a') % (n_true - 1), 0.3);
    spec.vocabulary.push_back({std::string(1, c), l});
  }
  return spec;
}

// SAE whose first rows reproduce the dictionary (encoder = decoder = u_j),
// padded with random features so it is overcomplete.
inline SparseAutoencoder planted_tiny_sae(const SyntheticModelSpec& spec, int layer, int n_features = 24,
                                          double bias = -0.05, std::uint64_t seed = 3) {
  const auto d = static_cast<std::size_t>(spec.d_model());
  const auto n = static_cast<std::size_t>(n_features);
  Matrix w_enc(n, d), w_dec(n, d);
  Vector b_enc(n, bias);
  Gen g(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Vector u;
    if (i < spec.dictionary.rows()) {
      auto r = spec.dictionary.row(i);
      u.assign(r.begin(), r.end());
    } else {
      u = g.vector(d);
      const double nr = norm(u);
      for (auto& x : u) x /= nr;
      b_enc[i] = -0.5;
    }
    std::copy(u.begin(), u.end(), w_enc.row(i).begin());
    std::copy(u.begin(), u.end(), w_dec.row(i).begin());
  }
  return SparseAutoencoder(layer, std::move(w_enc), std::move(b_enc), std::move(w_dec), Vector(d, 0.0));
}

inline SparseAutoencoder random_sae(Gen& g, int layer, int d, int n) {
  Matrix w_dec = g.matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < w_dec.rows(); ++i) {
    const double nr = norm(w_dec.row(i));
    for (auto& x : w_dec.row(i)) x /= nr;
  }
  return SparseAutoencoder(layer, g.matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(d), 0.5),
                           g.vector(static_cast<std::size_t>(n), 0.1), std::move(w_dec),
                           g.vector(static_cast<std::size_t>(d), 0.1));
}

// Raw substring occurrences, overlapping included.
inline int count_words(const std::string& text, const std::vector<std::string>& words) {
  int n = 0;
  for (const auto& w : words)
    for (auto at = text.find(w); at != std::string::npos; at = text.find(w, at + 1)) ++n;
  return n;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace saelab::fixtures
