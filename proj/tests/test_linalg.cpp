#include <gtest/gtest.h>

#include <cmath>

#include "saelab/digest.hpp"
#include "saelab/feature_id.hpp"
#include "saelab/linalg.hpp"
#include "saelab/stats.hpp"
#include "support.hpp"

using namespace saelab;
using saelab::fixtures::Gen;

TEST(Matrix, ShapeMismatchThrows) {
  EXPECT_THROW(Matrix(2, 3, std::vector<double>(5)), Error);
}

TEST(Matrix, TransposeTwiceIsIdentity) {
  Gen g(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = g.matrix(static_cast<std::size_t>(g.integer(1, 7)), static_cast<std::size_t>(g.integer(1, 7)));
    EXPECT_EQ(m.transposed().transposed(), m);
  }
}

TEST(Matrix, MatvecAgreesWithElementLoop) {
  Gen g(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = static_cast<std::size_t>(g.integer(1, 6)), c = static_cast<std::size_t>(g.integer(1, 6));
    const auto m = g.matrix(r, c);
    const auto x = g.vector(c);
    const auto y = matvec(m, x);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += m(i, j) * x[j];
      EXPECT_NEAR(y[i], s, 1e-12);
    }
    const auto z = g.vector(r);
    const auto t1 = matvec_transposed(m, z);
    const auto t2 = matvec(m.transposed(), z);
    for (std::size_t j = 0; j < c; ++j) EXPECT_NEAR(t1[j], t2[j], 1e-12);
  }
}

TEST(Vector, CosineOfParallelAndOrthogonal) {
  EXPECT_NEAR(cosine_similarity(Vector{1, 2, 3}, Vector{2, 4, 6}), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(Vector{1, 0}, Vector{0, 5}), 0.0, 1e-12);
  EXPECT_TRUE(all_finite(Vector{1, 2}));
  EXPECT_FALSE(all_finite(Vector{1, NAN}));
}

TEST(Stats, PearsonOfAffineImageIsOne) {
  Gen g(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = g.vector(static_cast<std::size_t>(g.integer(3, 20)));
    const double a = g.uniform(0.1, 5.0), b = g.normal();
    Vector y, z;
    for (double v : x) {
      y.push_back(a * v + b);
      z.push_back(-a * v + b);
    }
    EXPECT_DOUBLE_EQ(*pearson(x, y), 1.0);
    EXPECT_DOUBLE_EQ(*pearson(x, z), -1.0);
  }
}

TEST(Stats, PearsonMatchesTwoPassFormula) {
  Gen g(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = static_cast<std::size_t>(g.integer(3, 30));
    const auto x = g.vector(n), y = g.vector(n);
    // Textbook single-pass sums as an independent route.
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sx += x[i];
      sy += y[i];
      sxx += x[i] * x[i];
      syy += y[i] * y[i];
      sxy += x[i] * y[i];
    }
    const double nn = static_cast<double>(n);
    const double r = (nn * sxy - sx * sy) / std::sqrt((nn * sxx - sx * sx) * (nn * syy - sy * sy));
    EXPECT_NEAR(*pearson(x, y), r, 1e-9);
  }
}

TEST(Stats, ConstantSeriesIsUndefined) {
  EXPECT_FALSE(pearson(Vector{1, 2, 3}, Vector{4, 4, 4}).has_value());
  EXPECT_FALSE(spearman(Vector{1, 1, 1}, Vector{1, 2, 3}).has_value());
  EXPECT_THROW(pearson(Vector{1, 2}, Vector{1}), Error);
}

TEST(Stats, RanksAverageTies) {
  EXPECT_EQ(ranks(Vector{10, 20, 20, 5}), (Vector{2, 3.5, 3.5, 1}));
}

TEST(Stats, SpearmanIsOneForMonotoneMaps) {
  Gen g(5);
  const auto x = g.vector(15);
  Vector y;
  for (double v : x) y.push_back(std::exp(v));
  EXPECT_DOUBLE_EQ(*spearman(x, y), 1.0);
}

TEST(Digest, KnownFnvVector) {
  // Published FNV-1a 64 test value for "a".
  EXPECT_EQ(Digest{}.bytes("a", 1).value(), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(content_hash(""), "cbf29ce484222325");
}

TEST(Digest, SensitiveToEveryBit) {
  Vector v{1.0, 2.0, 3.0};
  const auto a = Digest{}.f64s(v).hex();
  v[1] = std::nextafter(2.0, 3.0);
  EXPECT_NE(Digest{}.f64s(v).hex(), a);
}

TEST(FeatureId, ParseAndFormat) {
  const auto id = FeatureId::parse("18/9463");
  EXPECT_EQ(id.layer, 18);
  EXPECT_EQ(id.index, 9463);
  EXPECT_EQ(id.str(), "18/9463");
  for (const char* bad : {"18", "a/b", "18/", "/3", "-1/2", "1/2x"}) EXPECT_THROW(FeatureId::parse(bad), Error) << bad;
  EXPECT_LT(FeatureId::parse("1/900"), FeatureId::parse("2/1"));
  nlohmann::json j = id;
  EXPECT_EQ(j.get<FeatureId>(), id);
}
