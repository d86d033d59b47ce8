#include <cmath>
#include <map>
#include <vector>

#include <gtest/gtest.h>

#include "rdpp/exact_dpp.hpp"
#include "rdpp/oracle.hpp"

using rdpp::Matrix;
using rdpp::Rng;
using Key = std::vector<std::size_t>;

namespace {

rdpp::oracle::SubsetPmf empirical_exact(const Matrix& x, std::size_t draws, std::uint64_t seed) {
  const auto rm = rdpp::RowMatrix::from_dense(x);
  const auto eig = rdpp::eigh(rdpp::SymMatrix(rm.gram(), true));
  Rng rng(seed);
  rdpp::oracle::PmfAccumulator acc;
  for (std::size_t i = 0; i < draws; ++i) {
    acc.add(rdpp::sample_dpp_exact(rm, eig, rng).indices);
  }
  return acc.pmf();
}

}  // namespace

TEST(ExactDpp, ThreeRowExampleMatchesHandEnumeration) {
  Matrix x(3, 2);
  x << 1, 0, 0, 1, 1, 1;
  // det(I + X^T X) = 8; det(X_S X_S^T) = 1 for every S except {2}, which gives 2
  rdpp::oracle::SubsetPmf expected;
  expected.entries = {{{}, 1.0 / 8},     {{0}, 1.0 / 8},    {{1}, 1.0 / 8},    {{2}, 2.0 / 8},
                      {{0, 1}, 1.0 / 8}, {{0, 2}, 1.0 / 8}, {{1, 2}, 1.0 / 8}};
  const auto pmf = empirical_exact(x, 100000, 1);
  EXPECT_LT(rdpp::oracle::tv_distance(pmf, expected), 0.01);
}

TEST(ExactDpp, TwoIdenticalRows) {
  Matrix x(2, 1);
  x << 1, 1;
  rdpp::oracle::SubsetPmf expected;
  expected.entries = {{{}, 1.0 / 3}, {{0}, 1.0 / 3}, {{1}, 1.0 / 3}};
  const auto pmf = empirical_exact(x, 60000, 2);
  EXPECT_LT(rdpp::oracle::tv_distance(pmf, expected), 0.01);
  EXPECT_EQ(pmf.probability({0, 1}), 0.0);
}

TEST(ExactDpp, RandomMatrixMatchesBruteForce) {
  Rng gen(3);
  Matrix x(6, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = gen.normal();
  }
  const auto pmf = empirical_exact(x, 100000, 4);
  EXPECT_LT(rdpp::oracle::tv_distance(pmf, rdpp::oracle::dpp_pmf_bruteforce(x)), 0.02);
}

TEST(ExactDpp, ZeroRowsNeverSampledAndIndicesAreOriginal) {
  Matrix x(4, 2);
  x << 0, 0, 1, 0, 0, 0, 0, 1;
  const auto pmf = empirical_exact(x, 20000, 5);
  for (const auto& [key, prob] : pmf.entries) {
    for (const std::size_t i : key) {
      EXPECT_TRUE(i == 1 || i == 3);
    }
  }
  // identity rows: each kept independently with probability 1/2
  EXPECT_NEAR(pmf.probability({1, 3}), 0.25, 0.015);
}

TEST(ExactDpp, ElementaryIndicesSkipNullDirections) {
  rdpp::EigenDecomposition eig;
  eig.values = rdpp::Vector(3);
  eig.values << 1e12, 0.0, 1.0;
  eig.vectors = Matrix::Identity(3, 3);
  eig.tol_psd = 1e-10;
  Rng rng(6);
  int third = 0;
  for (int t = 0; t < 20000; ++t) {
    const auto s = rdpp::elementary_indices(eig, rng);
    ASSERT_FALSE(s.empty());
    ASSERT_EQ(s.front(), 0U);
    for (const auto i : s) {
      ASSERT_NE(i, 1U);
    }
    third += s.back() == 2 ? 1 : 0;
  }
  EXPECT_NEAR(third / 20000.0, 0.5, 0.015);
}

TEST(ExactDpp, ExpectedSize) {
  rdpp::EigenDecomposition eig;
  eig.values = rdpp::Vector(2);
  eig.values << 3, 1;
  EXPECT_DOUBLE_EQ(rdpp::expected_size(eig), 0.75 + 0.5);
}

TEST(ExactDpp, OrthoColumnsAreOrthonormal) {
  Rng gen(7);
  Matrix x(10, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = gen.normal();
  }
  const auto rm = rdpp::RowMatrix::from_dense(x);
  const auto eig = rdpp::eigh(rdpp::SymMatrix(rm.gram(), true));
  const auto v = rdpp::build_ortho_columns(rm, eig, {0, 2, 3});
  EXPECT_LT((v.columns.transpose() * v.columns - Matrix::Identity(3, 3)).norm(), 1e-10);
}

TEST(ExactDpp, VolumeSamplingMatchesSquaredMinors) {
  Rng gen(8);
  Matrix g(5, 2);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    g.data()[i] = gen.normal();
  }
  const Matrix v = Eigen::HouseholderQR<Matrix>(g).householderQ() * Matrix::Identity(5, 2);
  std::map<Key, double> expected;
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = i + 1; j < 5; ++j) {
      const double minor = v(i, 0) * v(j, 1) - v(i, 1) * v(j, 0);
      expected[{i, j}] = minor * minor;
    }
  }
  Rng rng(9);
  std::map<Key, double> counts;
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) {
    const auto s = rdpp::volume_sample_bottom_up(rdpp::OrthoColumns{v}, rng);
    ASSERT_EQ(s.size(), 2U);
    counts[s] += 1.0 / draws;
  }
  double tv = 0.0;
  for (const auto& [key, p] : expected) {
    tv += std::abs(p - counts[key]);
  }
  EXPECT_LT(0.5 * tv, 0.01);
}

TEST(ExactDpp, ErrorPaths) {
  Rng rng(10);
  rdpp::EigenDecomposition eig;
  eig.values = rdpp::Vector::Ones(2);
  eig.vectors = Matrix::Identity(2, 2);
  EXPECT_THROW(rdpp::build_ortho_columns(Matrix(Matrix::Identity(2, 2)), eig, {}), rdpp::PreconditionError);
  eig.values << 1, 0;
  EXPECT_THROW(rdpp::build_ortho_columns(Matrix(Matrix::Identity(2, 2)), eig, {1}), rdpp::LinalgError);

  Matrix dup(3, 2);
  dup << 1, 1, 0, 0, 0, 0;
  EXPECT_THROW(rdpp::volume_sample_bottom_up(rdpp::OrthoColumns{dup / std::sqrt(2.0)}, rng), rdpp::LinalgError);
  EXPECT_THROW(rdpp::volume_sample_bottom_up(rdpp::OrthoColumns{Matrix(3, 0)}, rng), rdpp::PreconditionError);
}
