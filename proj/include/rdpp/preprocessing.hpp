#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "rdpp/alias_table.hpp"
#include "rdpp/error.hpp"
#include "rdpp/exact_dpp.hpp"
#include "rdpp/linalg.hpp"
#include "rdpp/rng.hpp"

namespace rdpp {

enum class Mode { exact, sketched };

inline const char* to_string(Mode mode) { return mode == Mode::exact ? "exact" : "sketched"; }

inline Mode parse_mode(const std::string& text) {
  if (text == "exact") {
    return Mode::exact;
  }
  if (text == "sketched") {
    return Mode::sketched;
  }
  throw PreconditionError("unknown mode '" + text + "' (expected exact|sketched)");
}

/// Constant in the accuracy schedule eta = eps / (4 s_bar + C ln(9 / eps)).
inline constexpr double kTvConstant = 160.0;

inline double eta_for_epsilon(double epsilon, double s_bar) {
  return epsilon / (4.0 * s_bar + kTvConstant * std::log(9.0 / epsilon));
}

struct SketchParams {
  /// Count-sketch rows; 0 selects max(d^2 + d, 100).
  std::size_t embed_rows = 0;
  /// Sign-projection columns; 0 selects ceil(48 ln max(n, 10)).
  std::size_t jl_columns = 0;
  int max_retries = 3;
};

inline std::size_t default_embed_rows(std::size_t d) { return std::max<std::size_t>(d * d + d, 100); }

inline std::size_t default_jl_columns(std::size_t n) {
  return static_cast<std::size_t>(std::ceil(48.0 * std::log(static_cast<double>(std::max<std::size_t>(n, 10)))));
}

struct LeverageDistribution {
  std::vector<double> p;
  /// 1 for exact scores, 2 for the sketched half-approximation.
  double guarantee_factor = 1.0;
  std::size_t rank = 0;
};

namespace detail {

/// d x k matrix of independent +-1/sqrt(k) entries.
inline Matrix sign_projection(std::size_t d, std::size_t k, Rng& rng) {
  Matrix g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      g(i, j) = scale * rng.rademacher();
    }
  }
  return g;
}

inline std::vector<double> normalized(const Vector& scores) {
  const double total = scores.sum();
  const double floor = 1e-12 * total / static_cast<double>(scores.size());
  std::vector<double> p(static_cast<std::size_t>(scores.size()));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    p[static_cast<std::size_t>(i)] = std::max(scores[i], floor);
    sum += p[static_cast<std::size_t>(i)];
  }
  for (double& v : p) {
    v /= sum;
  }
  return p;
}

}  // namespace detail

/// p_i = x_i^T (X^T X)^+ x_i / rank(X).
inline LeverageDistribution leverage_scores_exact(const RowMatrix& x) {
  const EigenDecomposition eig = eigh(SymMatrix(x.gram(), true));
  std::vector<std::size_t> range;
  for (std::size_t i = 0; i < eig.dim(); ++i) {
    if (eig.values[static_cast<Eigen::Index>(i)] > eig.tol_psd) {
      range.push_back(i);
    }
  }
  Matrix whitening(static_cast<Eigen::Index>(x.cols()), static_cast<Eigen::Index>(range.size()));
  for (std::size_t j = 0; j < range.size(); ++j) {
    const auto t = static_cast<Eigen::Index>(range[j]);
    whitening.col(static_cast<Eigen::Index>(j)) = eig.vectors.col(t) / std::sqrt(eig.values[t]);
  }
  const Vector scores = x.multiply(whitening).rowwise().squaredNorm();
  return {detail::normalized(scores), 1.0, range.size()};
}

/// Leverage scores through a count-sketch embedding and a sign-random
/// projection: O(nnz(X) log n + poly(d)). When n does not exceed the
/// embedding size the embedding is the identity.
inline LeverageDistribution leverage_scores_sketched(const RowMatrix& x, Rng& rng,
                                                     const SketchParams& params = {}) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  std::size_t m = params.embed_rows ? params.embed_rows : default_embed_rows(d);
  const std::size_t k = params.jl_columns ? params.jl_columns : default_jl_columns(n);

  for (int attempt = 0;; ++attempt) {
    Matrix embedded;
    if (n <= m) {
      embedded = x.to_dense();
    } else {
      embedded = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < n; ++i) {
        const auto bucket = static_cast<Eigen::Index>(rng.below(m));
        const double sign = rng.rademacher();
        x.for_each_nonzero(i, [&](std::size_t j, double v) {
          embedded(bucket, static_cast<Eigen::Index>(j)) += sign * v;
        });
      }
    }

    const Eigen::JacobiSVD<Matrix> svd(embedded, Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double cutoff = sv.size() ? sv[0] * 1e-10 * static_cast<double>(d) : 0.0;
    std::size_t rank = 0;
    while (rank < static_cast<std::size_t>(sv.size()) && sv[static_cast<Eigen::Index>(rank)] > cutoff) {
      ++rank;
    }
    if (rank == 0) {
      throw LinalgError("leverage_scores_sketched: sketch has rank zero");
    }
    // TODO: distinguish a rank-deficient X from an unlucky sketch with an
    // exact rank probe on a row sample, instead of exhausting retries.
    if (rank < d && n > m && attempt < params.max_retries) {
      m *= 2;
      continue;
    }

    Matrix whitening = svd.matrixV().leftCols(static_cast<Eigen::Index>(rank));
    for (std::size_t j = 0; j < rank; ++j) {
      whitening.col(static_cast<Eigen::Index>(j)) /= sv[static_cast<Eigen::Index>(j)];
    }
    const Matrix projection = whitening * detail::sign_projection(rank, k, rng);
    const Vector scores = x.multiply(projection).rowwise().squaredNorm();
    return {detail::normalized(scores), 2.0, rank};
  }
}

/// Rows drawn to build A at accuracy eta: ceil(8 d ln(2d) / eta^2).
inline std::uint64_t spectral_sample_count(std::size_t d, double eta) {
  if (!(eta > 0.0 && eta < 1.0)) {
    throw PreconditionError("spectral_sample_count: eta must lie in (0, 1)");
  }
  const double r = std::ceil(8.0 * static_cast<double>(d) * std::log(2.0 * static_cast<double>(d)) / (eta * eta));
  if (r > 0x1.0p62) {
    throw PreconditionError("spectral_sample_count: eta too small");
  }
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(r));
}

/// Per-row multiplicities of r i.i.d. draws from p.
///
/// Small r draws indices through an alias table; large r draws the multinomial
/// counts directly by sequential binomials, which has the same law.
inline std::vector<std::uint64_t> draw_row_counts(std::span<const double> p, std::uint64_t r, Rng& rng) {
  const std::size_t n = p.size();
  std::vector<std::uint64_t> counts(n, 0);
  if (r <= 4 * static_cast<std::uint64_t>(n)) {
    const AliasTable table(p);
    for (std::uint64_t t = 0; t < r; ++t) {
      ++counts[table.sample(rng)];
    }
    return counts;
  }
  std::uint64_t remaining = r;
  double mass = 1.0;
  for (std::size_t i = 0; i + 1 < n && remaining > 0; ++i) {
    const double prob = mass > 0.0 ? std::clamp(p[i] / mass, 0.0, 1.0) : 1.0;
    std::binomial_distribution<long long> binomial(static_cast<long long>(remaining), prob);
    const auto c = static_cast<std::uint64_t>(binomial(rng));
    counts[i] = c;
    remaining -= c;
    mass -= p[i];
  }
  counts[n - 1] += remaining;
  return counts;
}

/// A = (1/r) sum_t x_{s_t} x_{s_t}^T / p_{s_t} with s_t i.i.d. from p.
inline SymMatrix build_A(const RowMatrix& x, const LeverageDistribution& leverage, double eta, Rng& rng) {
  if (leverage.p.size() != x.rows()) {
    throw PreconditionError("build_A: leverage distribution size does not match X");
  }
  const std::uint64_t r = spectral_sample_count(x.cols(), eta);
  const auto counts = draw_row_counts(leverage.p, r, rng);
  const auto d = static_cast<Eigen::Index>(x.cols());
  Matrix a = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) {
      continue;
    }
    const double weight = static_cast<double>(counts[i]) / (static_cast<double>(r) * leverage.p[i]);
    a.selfadjointView<Eigen::Lower>().rankUpdate(x.row(i), weight);
  }
  return SymMatrix(a, true);
}

/// Smallest and largest eigenvalue of A whitened by X^T X, restricted to the
/// range of X^T X. The sandwich (1-eta) X^T X <= A <= (1+eta) X^T X holds iff
/// both lie in [1-eta, 1+eta] and A vanishes off that range.
inline std::pair<double, double> whitened_spectrum(const SymMatrix& gram, const SymMatrix& a) {
  const EigenDecomposition eig = eigh(gram);
  std::vector<Eigen::Index> range;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    if (eig.values[i] > eig.tol_psd) {
      range.push_back(i);
    }
  }
  Matrix w(eig.vectors.rows(), static_cast<Eigen::Index>(range.size()));
  for (std::size_t j = 0; j < range.size(); ++j) {
    w.col(static_cast<Eigen::Index>(j)) = eig.vectors.col(range[j]) / std::sqrt(eig.values[range[j]]);
  }
  const Matrix whitened = w.transpose() * a.dense() * w;
  const Eigen::SelfAdjointEigenSolver<Matrix> solver(whitened, Eigen::EigenvaluesOnly);
  return {solver.eigenvalues().minCoeff(), solver.eigenvalues().maxCoeff()};
}

struct RidgeScores {
  std::vector<double> l;
  /// Sum of l.
  double s_hat = 0.0;
};

/// l_i = x_i^T (I + A)^{-1} x_i.
inline RidgeScores ridge_scores_exact(const RowMatrix& x, const SymMatrix& a) {
  if (a.dim() != x.cols()) {
    throw PreconditionError("ridge_scores_exact: A dimension does not match X");
  }
  const CholeskyFactor factor = cholesky(a.plus_identity());
  RidgeScores out;
  out.l.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out.l[i] = quad_form(x.row(i), factor);
    out.s_hat += out.l[i];
  }
  return out;
}

/// Row norms of X (I + A)^{-1/2} G for a sign projection G.
inline std::vector<double> ridge_scores_sketched(const RowMatrix& x, const SymMatrix& a, Rng& rng,
                                                 const SketchParams& params = {}) {
  if (a.dim() != x.cols()) {
    throw PreconditionError("ridge_scores_sketched: A dimension does not match X");
  }
  const EigenDecomposition eig = eigh(a.plus_identity());
  const Matrix inv_sqrt =
      eig.vectors * eig.values.cwiseSqrt().cwiseInverse().asDiagonal() * eig.vectors.transpose();
  const std::size_t k = params.jl_columns ? params.jl_columns : default_jl_columns(x.rows());
  const Vector scores = x.multiply(inv_sqrt * detail::sign_projection(x.cols(), k, rng)).rowwise().squaredNorm();
  return {scores.data(), scores.data() + scores.size()};
}

/// Everything the sampler needs besides X itself. Immutable once assembled.
class PreprocessedState {
 public:
  /// Derives the factorization, s_tilde, q and the proposal table from
  /// A and l_tilde. `index_map` maps retained rows to original row numbers.
  static PreprocessedState assemble(SymMatrix a, std::vector<double> l_tilde,
                                    std::vector<std::size_t> index_map, double eta,
                                    Mode mode = Mode::exact, double s_bar = 1.0) {
    if (l_tilde.empty() || l_tilde.size() != index_map.size()) {
      throw PreconditionError("PreprocessedState: l_tilde and index_map sizes differ");
    }
    for (const double v : l_tilde) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw PreconditionError("PreprocessedState: l_tilde entries must be positive and finite");
      }
    }
    PreprocessedState s;
    s.chol_ = cholesky(a.plus_identity());
    s.logdet_ = s.chol_.logdet();
    s.s_tilde_ = expected_size(eigh(SymMatrix(a.dense(), true)));
    const double scaled = 2.0 * static_cast<double>(a.dim()) * s.s_tilde_;
    s.q_ = static_cast<std::uint64_t>(std::max(0.0, std::ceil(scaled - 1e-9 * std::max(1.0, scaled))));
    s.a_ = std::move(a);
    s.l_tilde_sum_ = 0.0;
    for (const double v : l_tilde) {
      s.l_tilde_sum_ += v;
    }
    s.table_ = AliasTable(l_tilde);
    s.l_tilde_ = std::move(l_tilde);
    s.index_map_ = std::move(index_map);
    s.eta_ = eta;
    s.mode_ = mode;
    s.s_bar_ = s_bar;
    return s;
  }

  std::size_t n() const { return l_tilde_.size(); }
  std::size_t d() const { return a_.dim(); }
  const SymMatrix& A() const { return a_; }
  const CholeskyFactor& chol_identity_plus_A() const { return chol_; }
  double logdet_identity_plus_A() const { return logdet_; }
  double s_tilde() const { return s_tilde_; }
  std::uint64_t q() const { return q_; }
  std::span<const double> l_tilde() const { return l_tilde_; }
  double l_tilde_sum() const { return l_tilde_sum_; }
  const AliasTable& sampling_table() const { return table_; }
  double eta() const { return eta_; }
  Mode mode() const { return mode_; }
  /// The s_bar used to pick eta (phase-one estimate in sketched mode).
  double s_bar() const { return s_bar_; }
  const std::vector<std::size_t>& index_map() const { return index_map_; }

 private:
  PreprocessedState() = default;

  SymMatrix a_;
  CholeskyFactor chol_;
  double logdet_ = 0.0;
  double s_tilde_ = 0.0;
  std::uint64_t q_ = 0;
  std::vector<double> l_tilde_;
  double l_tilde_sum_ = 0.0;
  AliasTable table_;
  double eta_ = 0.0;
  Mode mode_ = Mode::exact;
  double s_bar_ = 1.0;
  std::vector<std::size_t> index_map_;
};

struct PreprocessOptions {
  SketchParams sketch;
  /// Recheck the spectral sandwich against the exact X^T X (O(nd^2)) and
  /// redraw A when it fails.
  bool verify_sandwich = false;
  int max_sandwich_attempts = 5;
};

/// Exact mode: A = X^T X and l_tilde = l. Sketched mode: two passes, first at
/// eta = 1/2 to estimate s_bar, then at eta = eps / (4 s_bar + 160 ln(9/eps)),
/// reusing the leverage distribution, followed by sketched ridge scores.
inline PreprocessedState build_state(const RowMatrix& x, double epsilon, Mode mode, Rng& rng,
                                     const PreprocessOptions& options = {}) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw PreconditionError("build_state: epsilon must lie in (0, 1]");
  }
  if (mode == Mode::exact) {
    SymMatrix a(x.gram(), true);
    RidgeScores ridge = ridge_scores_exact(x, a);
    const double s_bar = std::max(1.0, expected_size(eigh(a)));
    return PreprocessedState::assemble(std::move(a), std::move(ridge.l), x.index_map(), 0.0, mode, s_bar);
  }

  const LeverageDistribution leverage = leverage_scores_sketched(x, rng, options.sketch);
  const SymMatrix coarse = build_A(x, leverage, 0.5, rng);
  const double s_bar = 3.0 * std::max(1.0, expected_size(eigh(coarse)));
  const double eta = eta_for_epsilon(epsilon, s_bar);

  SymMatrix a = build_A(x, leverage, eta, rng);
  if (options.verify_sandwich) {
    const SymMatrix gram(x.gram(), true);
    for (int attempt = 1;; ++attempt) {
      const auto [lo, hi] = whitened_spectrum(gram, a);
      if (lo >= 1.0 - eta && hi <= 1.0 + eta) {
        break;
      }
      if (attempt >= options.max_sandwich_attempts) {
        throw LinalgError("build_state: spectral sandwich not met after " + std::to_string(attempt) +
                          " attempts");
      }
      a = build_A(x, leverage, eta, rng);
    }
  }
  std::vector<double> l_tilde = ridge_scores_sketched(x, a, rng, options.sketch);
  return PreprocessedState::assemble(std::move(a), std::move(l_tilde), x.index_map(), eta, mode, s_bar);
}

/// Expected DPP size after scaling X by alpha: sum alpha^2 lambda / (1 + alpha^2 lambda).
inline double scaled_expected_size(const EigenDecomposition& eig, double alpha) {
  const double log_alpha2 = 2.0 * std::log(alpha);
  double total = 0.0;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    if (eig.values[i] > eig.tol_psd) {
      total += 1.0 / (1.0 + std::exp(-(log_alpha2 + std::log(eig.values[i]))));
    }
  }
  return total;
}

/// alpha > 0 whose rescaled expected size is within tol of target, by
/// bisection over log(alpha) after expanding the bracket.
inline double calibrate_scale(const EigenDecomposition& eig, double target, double tol = 1e-10) {
  std::size_t positive = 0;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    positive += eig.values[i] > eig.tol_psd ? 1 : 0;
  }
  if (positive == 0) {
    throw PreconditionError("calibrate_scale: no positive eigenvalues");
  }
  if (!(target > 0.0) || target >= static_cast<double>(positive)) {
    throw PreconditionError("calibrate_scale: target " + std::to_string(target) +
                            " unreachable (must lie in (0, " + std::to_string(positive) + "))");
  }
  const auto size_at = [&](double log_alpha) { return scaled_expected_size(eig, std::exp(log_alpha)); };
  double lo = 0.0;
  double hi = 0.0;
  for (int i = 0; i < 2000 && size_at(lo) > target; ++i) {
    lo -= 1.0;
  }
  for (int i = 0; i < 2000 && size_at(hi) < target; ++i) {
    hi += 1.0;
  }
  double mid = 0.5 * (lo + hi);
  for (int i = 0; i < 400; ++i) {
    mid = 0.5 * (lo + hi);
    const double value = size_at(mid);
    if (std::abs(value - target) <= tol) {
      break;
    }
    (value < target ? lo : hi) = mid;
  }
  return std::exp(mid);
}

}  // namespace rdpp
