#include "pcgf/errors.hpp"
#include "pcgf/psd.hpp"
#include "pcgf/random.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace pcgf;
using pcgf::testing::mat;

TEST(PsdFactor, ReconstructsRandomCovariances) {
  RandomStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 4;
    Matrix g(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) g(i, j) = rng.normal();
    const Matrix c = g * g.transpose();
    const Matrix s = psd_factor(c);
    EXPECT_LE((s - s.transpose()).norm(), 1e-14 * (1.0 + s.norm()));
    EXPECT_LE((s * s.transpose() - c).norm(), 1e-10 * c.norm());
    EXPECT_GE(min_eigenvalue(s), -1e-12);
  }
}

TEST(PsdFactor, ZeroAndDegenerate) {
  EXPECT_EQ(psd_factor(Matrix::Zero(2, 2)).norm(), 0.0);
  const Matrix rank_one = mat({{1.0, 2.0}, {2.0, 4.0}});
  const Matrix s = psd_factor(rank_one);
  EXPECT_LE((s * s - rank_one).norm(), 1e-12);
}

TEST(PsdFactor, ClipsRoundOffNegatives) {
  const Matrix c = mat({{1.0, 0.0}, {0.0, -1e-12}});
  const Matrix s = psd_factor(c);
  EXPECT_NEAR(s(1, 1), 0.0, 1e-15);
}

TEST(PsdFactor, RejectsIndefinite) {
  const Matrix c = mat({{1.0, 0.0}, {0.0, -0.5}});
  try {
    psd_factor(c);
    FAIL() << "expected NotPsdError";
  } catch (const NotPsdError& e) {
    EXPECT_NEAR(e.eigenvalue(), -0.5, 1e-12);
  }
}

TEST(PsdFactor, RejectsNonsymmetricAndNonsquare) {
  EXPECT_THROW(psd_factor(mat({{1.0, 0.5}, {0.0, 1.0}})), ConfigurationError);
  EXPECT_THROW(psd_factor(Matrix::Zero(2, 3)), ConfigurationError);
}

TEST(PsdFactor, Jitter) {
  PsdFactorOptions options;
  options.jitter = 0.25;
  const Matrix s = psd_factor(Matrix::Zero(2, 2), options);
  EXPECT_NEAR(s(0, 0), 0.5, 1e-14);
}
