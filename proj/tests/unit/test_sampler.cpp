#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "rdpp/oracle.hpp"
#include "rdpp/rdpp_sampler.hpp"

using rdpp::Matrix;
using rdpp::Rng;

namespace {

Matrix gaussian(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = rng.normal();
  }
  return x;
}

Matrix three_by_two() {
  Matrix x(3, 2);
  x << 1, 0, 0, 1, 1, 1;
  return x;
}

rdpp::PreprocessedState exact_state(const rdpp::RowMatrix& x) {
  Rng rng(0);
  return rdpp::build_state(x, 1.0, rdpp::Mode::exact, rng);
}

rdpp::PreprocessedState with_scaled_scores(const rdpp::PreprocessedState& s, double factor) {
  std::vector<double> l(s.l_tilde().begin(), s.l_tilde().end());
  for (double& v : l) {
    v *= factor;
  }
  return rdpp::PreprocessedState::assemble(s.A(), l, s.index_map(), s.eta(), s.mode());
}

}  // namespace

TEST(Poisson, ZeroMean) {
  Rng rng(1);
  EXPECT_EQ(rdpp::sample_poisson(0.0, rng), 0U);
}

TEST(Poisson, RejectsBadMean) {
  Rng rng(1);
  EXPECT_THROW(rdpp::sample_poisson(-1.0, rng), rdpp::PreconditionError);
  EXPECT_THROW(rdpp::sample_poisson(std::nan(""), rng), rdpp::PreconditionError);
}

TEST(Poisson, MomentsAcrossRegimes) {
  for (const double mean : {0.3, 5.0, 29.5, 30.0, 45.0, 400.0, 1e5}) {
    Rng rng(static_cast<std::uint64_t>(mean * 10));
    const int n = 200000;
    double sum = 0.0;
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<double>(rdpp::sample_poisson(mean, rng));
      sum += k;
      sq += k * k;
    }
    const double m = sum / n;
    const double var = sq / n - m * m;
    EXPECT_NEAR(m, mean, 5 * std::sqrt(mean / n)) << mean;
    EXPECT_NEAR(var / mean, 1.0, 0.03) << mean;
  }
}

TEST(Poisson, PmfAboveInversionCutoff) {
  const double mean = 40.0;
  Rng rng(2);
  const int n = 400000;
  std::vector<double> counts(100, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto k = rdpp::sample_poisson(mean, rng);
    if (k < counts.size()) {
      counts[k] += 1.0;
    }
  }
  double tv = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double p = std::exp(-mean + k * std::log(mean) - std::lgamma(k + 1.0));
    tv += std::abs(counts[k] / n - p);
  }
  EXPECT_LT(0.5 * tv, 0.01);
}

TEST(IndexProposal, ExactScoresAcceptHalfAndFollowL) {
  const auto x = rdpp::RowMatrix::from_dense(three_by_two());
  const auto state = exact_state(x);
  Rng rng(3);
  std::vector<double> counts(3, 0.0);
  double rejections = 0.0;
  const int n = 100000;
  for (int t = 0; t < n; ++t) {
    const auto draw = rdpp::sample_index_exact_l(state, x, rng);
    counts[draw.index] += 1.0 / n;
    rejections += static_cast<double>(draw.rejections) / n;
  }
  // l = (3/8, 3/8, 1/2) / (5/4)
  EXPECT_NEAR(counts[0], 0.3, 0.006);
  EXPECT_NEAR(counts[1], 0.3, 0.006);
  EXPECT_NEAR(counts[2], 0.4, 0.006);
  // geometric with success probability 1/2: mean rejections 1
  EXPECT_NEAR(rejections, 1.0, 0.02);
}

TEST(IndexProposal, CorruptScoresAreDetected) {
  const auto x = rdpp::RowMatrix::from_dense(three_by_two());
  const auto state = exact_state(x);
  Rng rng(4);
  EXPECT_THROW(rdpp::sample_index_exact_l(with_scaled_scores(state, 4.0), x, rng), rdpp::ProposalBoundError);
  EXPECT_THROW(rdpp::sample_index_exact_l(with_scaled_scores(state, 0.25), x, rng), rdpp::ProposalBoundError);
}

TEST(IndexProposal, StateMismatchIsRejected) {
  const auto x = rdpp::RowMatrix::from_dense(three_by_two());
  const auto state = exact_state(x);
  const auto other = rdpp::RowMatrix::from_dense(Matrix::Identity(2, 2));
  Rng rng(5);
  EXPECT_THROW(rdpp::sample_index_exact_l(state, other, rng), rdpp::PreconditionError);
  EXPECT_THROW(rdpp::sample_rdpp(state, other, rng), rdpp::PreconditionError);
}

TEST(Acceptance, EmptySequenceWithIdentityRegularizer) {
  const auto state = rdpp::PreprocessedState::assemble(rdpp::SymMatrix::identity(2), {0.5, 0.5}, {0, 1}, 0.0);
  const auto x = rdpp::RowMatrix::from_dense(Matrix::Identity(2, 2));
  const auto sub = rdpp::make_scaled_submatrix(state, x, {}, {});
  // -log 4 + 2 log(3/4) + 1
  EXPECT_NEAR(rdpp::acceptance_log_prob(state, sub), -std::log(4.0) + 2 * std::log(0.75) + 1.0, 1e-12);
  EXPECT_NEAR(rdpp::acceptance_log_prob(state, sub), -0.9617, 1e-4);
}

TEST(Acceptance, ScaledRowsFollowFormula) {
  const auto x = rdpp::RowMatrix::from_dense(three_by_two());
  const auto state = exact_state(x);
  const std::vector<std::size_t> sigma{2, 0, 2};
  const std::vector<double> scores{0.5, 0.375, 0.5};
  const auto sub = rdpp::make_scaled_submatrix(state, x, sigma, scores);
  // s_tilde = 5/4, q = 5: scale^2 = (5/4) / (l (15/4)) = 1 / (3 l)
  EXPECT_NEAR(sub.rows.row(0).squaredNorm(), 2.0 / (3 * 0.5), 1e-14);
  EXPECT_NEAR(sub.rows.row(1).squaredNorm(), 1.0 / (3 * 0.375), 1e-14);
  EXPECT_EQ(sub.source_indices, sigma);
}

TEST(Acceptance, ImpossibleValueRaises) {
  const auto x = rdpp::RowMatrix::from_dense(three_by_two());
  const auto state = exact_state(x);
  const std::vector<std::size_t> sigma{0, 1};
  const std::vector<double> tiny{1e-8, 1e-8};
  const auto sub = rdpp::make_scaled_submatrix(state, x, sigma, tiny);
  EXPECT_THROW(rdpp::acceptance_log_prob(state, sub), rdpp::AcceptanceBoundError);
  EXPECT_THROW(rdpp::make_scaled_submatrix(state, x, sigma, std::vector<double>{1.0}), rdpp::PreconditionError);
}

TEST(Sampler, ThreeByTwoMatchesDpp) {
  const auto x = rdpp::RowMatrix::from_dense(three_by_two());
  const auto state = exact_state(x);
  const auto draws = rdpp::sample_dpp_batch(state, x, 6, 60000);
  rdpp::oracle::PmfAccumulator acc;
  for (const auto& s : draws) {
    acc.add(s.subset.indices);
  }
  EXPECT_LT(rdpp::oracle::tv_distance(acc.pmf(), rdpp::oracle::dpp_pmf_bruteforce(three_by_two())), 0.015);
}

TEST(Sampler, RandomMatrixWithZeroRowMatchesDpp) {
  Rng gen(7);
  Matrix dense = gaussian(7, 3, gen);
  dense.row(3).setZero();
  const auto x = rdpp::RowMatrix::from_dense(dense);
  const auto state = exact_state(x);
  const auto draws = rdpp::sample_dpp_batch(state, x, 8, 100000);
  rdpp::oracle::PmfAccumulator acc;
  for (const auto& s : draws) {
    acc.add(s.subset.indices);
  }
  EXPECT_LT(rdpp::oracle::tv_distance(acc.pmf(), rdpp::oracle::dpp_pmf_bruteforce(dense)), 0.02);
}

TEST(Sampler, AcceptedSequencesFollowRegularizedLaw) {
  Matrix dense(3, 2);
  dense << 0.5, 0.1, -0.2, 0.4, 0.3, 0.3;
  const auto x = rdpp::RowMatrix::from_dense(dense);
  const auto state = exact_state(x);
  const auto ridge = rdpp::ridge_scores_exact(x, state.A());
  const double s = state.s_tilde();
  const auto q = static_cast<double>(state.q());
  Matrix scaled = dense;
  std::vector<double> p(3);
  for (std::size_t i = 0; i < 3; ++i) {
    p[i] = ridge.l[i] / ridge.s_hat;
    scaled.row(static_cast<Eigen::Index>(i)) *= std::sqrt(s / (ridge.l[i] * (q - s)));
  }
  constexpr std::size_t kMax = 7;
  // accepted lengths are Poisson(q) tilted by ((q - s) / q)^K, i.e. rate q - s
  const auto exact = rdpp::oracle::rdpp_pmf_truncated(scaled, Matrix::Identity(2, 2), p, q - s, kMax);
  auto target = exact.unordered();
  const std::vector<std::size_t> overflow{99};
  target.entries[overflow] = exact.truncated_mass;

  Rng rng(9);
  rdpp::oracle::PmfAccumulator acc;
  for (int t = 0; t < 200000; ++t) {
    auto sigma = rdpp::sample_rdpp(state, x, rng).sigma;
    std::sort(sigma.begin(), sigma.end());
    acc.add(sigma.size() > kMax ? overflow : sigma);
  }
  EXPECT_LT(rdpp::oracle::tv_distance(acc.pmf(), target), 0.02);
}

TEST(Sampler, BatchIsDeterministicAcrossThreadCounts) {
  Rng gen(10);
  const auto x = rdpp::RowMatrix::from_dense(gaussian(20, 3, gen));
  const auto state = exact_state(x);
  rdpp::BatchOptions one;
  rdpp::BatchOptions three;
  three.threads = 3;
  const auto a = rdpp::sample_dpp_batch(state, x, 11, 500, one);
  const auto b = rdpp::sample_dpp_batch(state, x, 11, 500, three);
  rdpp::BatchOptions tail;
  tail.first_index = 200;
  const auto c = rdpp::sample_dpp_batch(state, x, 11, 300, tail);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].subset, b[i].subset);
    ASSERT_EQ(a[i].draw.sigma, b[i].draw.sigma);
    if (i >= 200) {
      ASSERT_EQ(a[i].subset, c[i - 200].subset);
    }
  }
}

TEST(Sampler, DiagnosticsInExactMode) {
  Rng gen(12);
  const auto x = rdpp::RowMatrix::from_dense(gaussian(40, 4, gen));
  const auto state = exact_state(x);
  const auto draws = rdpp::sample_dpp_batch(state, x, 13, 5000);
  const auto diag = rdpp::diagnostics(state, x, draws);
  ASSERT_TRUE(diag.rho.has_value());
  EXPECT_NEAR(*diag.rho, 1.0, 1e-12);
  EXPECT_NEAR(*diag.predicted_expected_size, *diag.target_expected_size, 1e-10);
  EXPECT_GE(diag.acceptance_rate, 0.16);
  EXPECT_NEAR(diag.mean_output_size, *diag.target_expected_size, 0.05);
  EXPECT_THROW(rdpp::diagnostics(state, x, std::span<const rdpp::DppSample>{}), rdpp::PreconditionError);
}

TEST(Sampler, AbortsAfterMaxOuter) {
  const auto x = rdpp::RowMatrix::from_dense(three_by_two());
  const auto state = exact_state(x);
  rdpp::SamplerOptions opts;
  opts.max_outer = 1;
  Rng rng(14);
  int aborted = 0;
  for (int t = 0; t < 50; ++t) {
    try {
      rdpp::sample_rdpp(state, x, rng, opts);
    } catch (const rdpp::SamplerAbort& e) {
      ++aborted;
      EXPECT_EQ(e.outer_iters(), 1U);
      EXPECT_LE(e.last_log_prob(), 0.0);
    }
  }
  EXPECT_GT(aborted, 0);
}
