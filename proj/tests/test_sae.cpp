#include <gtest/gtest.h>

#include "saelab/sae/sparse_autoencoder.hpp"
#include "support.hpp"

using namespace saelab;
using namespace saelab::fixtures;

TEST(Sae, RejectsInconsistentOrUndercompleteShapes) {
  EXPECT_THROW(SparseAutoencoder(0, Matrix(4, 3), Vector(4), Matrix(4, 3), Vector(2)), Error);
  EXPECT_THROW(SparseAutoencoder(0, Matrix(4, 3), Vector(3), Matrix(4, 3), Vector(3)), Error);
  EXPECT_THROW(SparseAutoencoder(0, Matrix(3, 3), Vector(3), Matrix(3, 3), Vector(3)), Error);
  EXPECT_NO_THROW(SparseAutoencoder(0, Matrix(4, 3), Vector(4), Matrix(4, 3), Vector(3)));
}

TEST(Sae, EncodeIsReluOfAffineMap) {
  Gen g(1);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = g.integer(2, 8), n = g.integer(d + 1, 3 * d);
    const auto sae = random_sae(g, 0, d, n);
    const auto x = g.vector(static_cast<std::size_t>(d));
    const auto f = sae.encode_dense(x);
    const auto sparse = sae.encode(x);
    for (int i = 0; i < n; ++i) {
      double pre = sae.b_enc()[static_cast<std::size_t>(i)];
      for (int k = 0; k < d; ++k) pre += sae.w_enc()(static_cast<std::size_t>(i), static_cast<std::size_t>(k)) * x[static_cast<std::size_t>(k)];
      const double expect = pre > 0 ? pre : 0.0;
      EXPECT_NEAR(f[static_cast<std::size_t>(i)], expect, 1e-12);
      EXPECT_EQ(sae.activation(x, i), f[static_cast<std::size_t>(i)]);
      EXPECT_EQ(sparse.contains(i), f[static_cast<std::size_t>(i)] > 0.0);
    }
    for (auto [i, v] : sparse) EXPECT_GT(v, 0.0);
    EXPECT_LT(max_abs_diff(sae.decode(sparse), sae.decode_dense(f)), 1e-12);
  }
}

TEST(Sae, DecodeIsBiasPlusWeightedRows) {
  Gen g(2);
  const auto sae = random_sae(g, 0, 4, 9);
  SparseActivations a{{1, 2.0}, {7, 0.5}};
  const auto x = sae.decode(a);
  for (std::size_t k = 0; k < 4; ++k)
    EXPECT_NEAR(x[k], sae.b_dec()[k] + 2.0 * sae.w_dec()(1, k) + 0.5 * sae.w_dec()(7, k), 1e-14);
  EXPECT_THROW(sae.decode({{9, 1.0}}), Error);
  EXPECT_THROW(sae.decode_dense(Vector(3)), Error);
}

TEST(Sae, PlantedEncoderRowsReadUnitConcepts) {
  const auto spec = tiny_spec(4, 8, 12);
  const auto sae = planted_tiny_sae(spec, 0, 24, 0.0);
  // Encoder row j is u_j itself and the rows are unit norm.
  for (std::size_t j = 0; j < 12; ++j) {
    auto u = spec.dictionary.row(j);
    EXPECT_NEAR(sae.activation(u, static_cast<int>(j)), 1.0, 1e-12);
  }
}

TEST(Sae, ReconstructionErrorIsMeanSquaredResidual) {
  Gen g(3);
  const auto sae = random_sae(g, 0, 5, 11);
  const auto x = g.vector(5);
  const auto xh = sae.decode_dense(sae.encode_dense(x));
  double s = 0;
  for (std::size_t k = 0; k < 5; ++k) s += (x[k] - xh[k]) * (x[k] - xh[k]);
  EXPECT_NEAR(sae.reconstruction_error(x), s / 5.0, 1e-14);
  EXPECT_THROW(sae.reconstruction_error(Vector{1, 2, NAN, 4, 5}), Error);
  EXPECT_THROW(sae.encode(Vector(4)), Error);
}

TEST(Sae, FeatureDirectionAndIds) {
  Gen g(4);
  const auto sae = random_sae(g, 7, 4, 10);
  const auto dir = sae.feature_direction(3);
  EXPECT_NEAR(dir.norm, 1.0, 1e-12);
  EXPECT_EQ(sae.feature_id(3), (FeatureId{7, 3}));
  EXPECT_THROW(sae.feature_direction(10), Error);
  EXPECT_THROW(sae.feature_direction(-1), Error);
}

TEST(Sae, DigestTracksEveryParameter) {
  Gen g(5);
  auto a = random_sae(g, 0, 4, 9);
  const auto before = a.digest();
  EXPECT_EQ(before, SparseAutoencoder(a).digest());
  a.mutable_b_dec()[2] = std::nextafter(a.b_dec()[2], 10.0);
  EXPECT_NE(a.digest(), before);
}
