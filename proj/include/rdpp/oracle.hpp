#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/LU>

#include "rdpp/error.hpp"
#include "rdpp/exact_dpp.hpp"
#include "rdpp/linalg.hpp"
#include "rdpp/rng.hpp"

// Reference implementations for certifying the samplers at desk scale.
// Everything here works on plain dense matrices, computes determinants by LU
// rather than Cholesky, and draws Poisson / categorical variates through the
// standard library, so that it shares as little code as possible with the
// fast path.

namespace rdpp::oracle {

using IndexKey = std::vector<std::size_t>;

/// Probability mass over index sets (sorted index lists).
struct SubsetPmf {
  std::map<IndexKey, double> entries;

  double total() const {
    double sum = 0.0;
    for (const auto& [key, prob] : entries) {
      sum += prob;
    }
    return sum;
  }

  double probability(const IndexKey& key) const {
    const auto it = entries.find(key);
    return it == entries.end() ? 0.0 : it->second;
  }

  /// Pr(|S| = k) for k = 0..max_size.
  std::vector<double> size_marginal(std::size_t max_size) const {
    std::vector<double> out(max_size + 1, 0.0);
    for (const auto& [key, prob] : entries) {
      if (key.size() <= max_size) {
        out[key.size()] += prob;
      }
    }
    return out;
  }

  double expected_size() const {
    double mean = 0.0;
    for (const auto& [key, prob] : entries) {
      mean += static_cast<double>(key.size()) * prob;
    }
    return mean;
  }
};

/// Mass over index sequences up to length k_max; the rest is truncated_mass.
struct SequencePmf {
  std::map<IndexKey, double> entries;
  double truncated_mass = 0.0;

  /// Sums over orderings: each sequence contributes to its sorted multiset.
  SubsetPmf unordered() const {
    SubsetPmf out;
    for (const auto& [key, prob] : entries) {
      IndexKey sorted = key;
      std::sort(sorted.begin(), sorted.end());
      out.entries[sorted] += prob;
    }
    return out;
  }

  /// Pr(|sigma| = k) for k = 0..max_len over the enumerated entries.
  std::vector<double> length_marginal(std::size_t max_len) const {
    std::vector<double> out(max_len + 1, 0.0);
    for (const auto& [key, prob] : entries) {
      if (key.size() <= max_len) {
        out[key.size()] += prob;
      }
    }
    return out;
  }
};

/// Counts observed keys and normalizes.
class PmfAccumulator {
 public:
  void add(const IndexKey& key) {
    ++counts_[key];
    ++total_;
  }

  std::size_t count() const { return total_; }

  SubsetPmf pmf() const {
    SubsetPmf out;
    for (const auto& [key, c] : counts_) {
      out.entries[key] = static_cast<double>(c) / static_cast<double>(total_);
    }
    return out;
  }

 private:
  std::map<IndexKey, std::size_t> counts_;
  std::size_t total_ = 0;
};

/// Half the L1 distance; keys missing from one side count as zero.
inline double tv_distance(const SubsetPmf& a, const SubsetPmf& b) {
  double sum = 0.0;
  for (const auto& [key, prob] : a.entries) {
    sum += std::abs(prob - b.probability(key));
  }
  for (const auto& [key, prob] : b.entries) {
    if (!a.entries.contains(key)) {
      sum += std::abs(prob);
    }
  }
  return 0.5 * sum;
}

/// max |a - b| over the union of keys.
inline double max_abs_gap(const SubsetPmf& a, const SubsetPmf& b) {
  double gap = 0.0;
  for (const auto& [key, prob] : a.entries) {
    gap = std::max(gap, std::abs(prob - b.probability(key)));
  }
  for (const auto& [key, prob] : b.entries) {
    gap = std::max(gap, std::abs(prob - a.probability(key)));
  }
  return gap;
}

inline double det(const Eigen::Ref<const Matrix>& m) {
  if (m.rows() == 0) {
    return 1.0;
  }
  return Eigen::PartialPivLU<Matrix>(m).determinant();
}

inline Matrix select_rows(const Eigen::Ref<const Matrix>& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

namespace detail {

inline IndexKey mask_to_key(std::uint32_t mask) {
  IndexKey key;
  for (std::size_t i = 0; mask; ++i, mask >>= 1U) {
    if (mask & 1U) {
      key.push_back(i);
    }
  }
  return key;
}

inline void require_small(std::size_t n, const char* who) {
  if (n > 20) {
    throw PreconditionError(std::string(who) + ": n = " + std::to_string(n) +
                            " too large for subset enumeration (limit 20)");
  }
}

}  // namespace detail

/// Pr(S) = det(X_S X_S^T) / det(I + X X^T) for every S, normalizer through det(I_d + X^T X).
inline SubsetPmf dpp_pmf_bruteforce(const Eigen::Ref<const Matrix>& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  detail::require_small(n, "dpp_pmf_bruteforce");
  const double normalizer = det(Matrix::Identity(x.cols(), x.cols()) + x.transpose() * x);
  SubsetPmf out;
  for (std::uint32_t mask = 0; mask < (1U << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) > d) {
      continue;
    }
    const IndexKey key = detail::mask_to_key(mask);
    const Matrix rows = select_rows(x, key);
    out.entries[key] = std::max(0.0, det(rows * rows.transpose())) / normalizer;
  }
  return out;
}

/// Pr(S) = det(X_S)^2 / det(X^T X) over |S| = d.
inline SubsetPmf vs_pmf_bruteforce(const Eigen::Ref<const Matrix>& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  detail::require_small(n, "vs_pmf_bruteforce");
  const Matrix gram = x.transpose() * x;
  const double normalizer = det(gram);
  if (!(normalizer > 1e-12 * std::pow(std::max(1.0, gram.trace() / static_cast<double>(d)), static_cast<double>(d)))) {
    throw PreconditionError("vs_pmf_bruteforce: X must have full column rank");
  }
  SubsetPmf out;
  for (std::uint32_t mask = 0; mask < (1U << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != d) {
      continue;
    }
    const IndexKey key = detail::mask_to_key(mask);
    const double v = det(select_rows(x, key));
    out.entries[key] = v * v / normalizer;
  }
  return out;
}

/// Exact mass of every index sequence of length <= k_max under the
/// Poisson-regularized DPP with row distribution p, rate r and regularizer A.
inline SequencePmf rdpp_pmf_truncated(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& a,
                                      std::span<const double> p, double r, std::size_t k_max) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (p.size() != n || a.rows() != x.cols() || a.cols() != x.cols()) {
    throw PreconditionError("rdpp_pmf_truncated: dimension mismatch");
  }
  if (!(r > 0.0)) {
    throw PreconditionError("rdpp_pmf_truncated: r must be positive");
  }
  double sequences = 0.0;
  for (std::size_t k = 0; k <= k_max; ++k) {
    sequences += std::pow(static_cast<double>(n), static_cast<double>(k));
  }
  if (sequences > 2e6) {
    throw PreconditionError("rdpp_pmf_truncated: n^k_max enumeration infeasible");
  }

  Matrix second_moment = Matrix::Zero(x.cols(), x.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = x.row(static_cast<Eigen::Index>(i));
    second_moment += p[i] * row.transpose() * row;
  }
  const double normalizer = det(a + r * second_moment);
  if (!(normalizer > 0.0)) {
    throw PreconditionError("rdpp_pmf_truncated: normalizer det(A + r E[x x^T]) is not positive");
  }
  const double log_normalizer = std::log(normalizer);
  const double log_r = std::log(r);

  SequencePmf out;
  double mass = 0.0;
  std::vector<std::size_t> seq;
  for (std::size_t k = 0; k <= k_max; ++k) {
    seq.assign(k, 0);
    const double log_poisson = static_cast<double>(k) * log_r - r - std::lgamma(static_cast<double>(k) + 1.0);
    while (true) {
      Matrix gram = a;
      double log_weight = log_poisson - log_normalizer;
      for (const std::size_t i : seq) {
        const auto row = x.row(static_cast<Eigen::Index>(i));
        gram += row.transpose() * row;
        log_weight += std::log(p[i]);
      }
      const double v = det(gram);
      const double prob = v > 0.0 ? std::exp(std::log(v) + log_weight) : 0.0;
      out.entries[seq] = prob;
      mass += prob;

      // odometer
      std::size_t pos = 0;
      while (pos < k && ++seq[pos] == n) {
        seq[pos] = 0;
        ++pos;
      }
      if (pos == k) {
        break;
      }
    }
  }
  out.truncated_mass = 1.0 - mass;
  return out;
}

struct CauchyBinetEstimate {
  double estimate = 0.0;
  double target = 0.0;
  double rel_err = 0.0;
};

/// Monte Carlo mean of det(A + X_sigma^T X_sigma), K ~ Poisson(r), sigma i.i.d. p,
/// against the closed form det(A + r sum_i p_i x_i x_i^T).
inline CauchyBinetEstimate mc_cauchy_binet(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& a,
                                           std::span<const double> p, double r, std::size_t trials, Rng& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (p.size() != n || trials == 0 || r < 0.0) {
    throw PreconditionError("mc_cauchy_binet: bad arguments");
  }
  Matrix second_moment = Matrix::Zero(x.cols(), x.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = x.row(static_cast<Eigen::Index>(i));
    second_moment += p[i] * row.transpose() * row;
  }
  CauchyBinetEstimate out;
  out.target = det(a + r * second_moment);

  std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
  std::poisson_distribution<long long> length(r > 0.0 ? r : 1.0);
  double sum = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const long long k = r > 0.0 ? length(rng) : 0;
    Matrix gram = a;
    for (long long j = 0; j < k; ++j) {
      const auto row = x.row(static_cast<Eigen::Index>(pick(rng)));
      gram += row.transpose() * row;
    }
    sum += det(gram);
  }
  out.estimate = sum / static_cast<double>(trials);
  out.rel_err = std::abs(out.estimate - out.target) / std::abs(out.target);
  return out;
}

struct CompositionResult {
  double tv = 0.0;
  double acceptance_rate = 0.0;
  SubsetPmf empirical;
  SubsetPmf target;
};

/// Draws sigma from the R-DPP with regularizer I over the rows x_i / sqrt(alpha p_i)
/// by exact rejection, downsamples with an exact DPP over sigma's rows, and
/// compares the composed sets against DPP(sqrt(r / alpha) X).
///
/// Proposal: K ~ Poisson(r Z), sigma_t i.i.d. proportional to
/// w_i = p_i (1 + |xs_i|^2), Z = sum w. Since det(I + sum v v^T) <= prod (1 + |v|^2),
/// accepting with det(I + Xs^T Xs) / prod (1 + |xs_t|^2) is a valid rejection step.
inline CompositionResult composition_check(const Eigen::Ref<const Matrix>& x, std::span<const double> p, double alpha,
                                           double r, std::size_t draws, Rng& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (draws == 0) {
    throw PreconditionError("composition_check: need at least one draw");
  }
  if (n > 8) {
    throw PreconditionError("composition_check: n = " + std::to_string(n) + " too large (limit 8)");
  }
  if (p.size() != n || !(alpha > 0.0) || !(r > 0.0)) {
    throw PreconditionError("composition_check: bad arguments");
  }
  Matrix scaled = x;
  std::vector<double> weights(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(p[i] > 0.0)) {
      throw PreconditionError("composition_check: p must be positive");
    }
    scaled.row(static_cast<Eigen::Index>(i)) /= std::sqrt(alpha * p[i]);
    weights[i] = p[i] * (1.0 + scaled.row(static_cast<Eigen::Index>(i)).squaredNorm());
    z += weights[i];
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::poisson_distribution<long long> length(r * z);

  PmfAccumulator accumulator;
  std::size_t proposals = 0;
  std::vector<std::size_t> sigma;
  while (accumulator.count() < draws) {
    ++proposals;
    const long long k = length(rng);
    sigma.clear();
    double log_bound = 0.0;
    for (long long t = 0; t < k; ++t) {
      const std::size_t i = pick(rng);
      sigma.push_back(i);
      log_bound += std::log1p(scaled.row(static_cast<Eigen::Index>(i)).squaredNorm());
    }
    const Matrix rows = select_rows(scaled, sigma);
    const Matrix gram = rows.transpose() * rows;
    const double log_det = std::log(det(Matrix::Identity(x.cols(), x.cols()) + gram));
    if (std::log(rng.uniform_pos()) >= log_det - log_bound) {
      continue;
    }
    IndexKey key;
    if (!sigma.empty()) {
      const EigenDecomposition eig = eigh(SymMatrix(gram, true));
      for (const std::size_t pos : sample_dpp_exact_positions(rows, eig, rng)) {
        key.push_back(sigma[pos]);
      }
      std::sort(key.begin(), key.end());
    }
    accumulator.add(key);
  }

  CompositionResult out;
  out.empirical = accumulator.pmf();
  out.target = dpp_pmf_bruteforce(std::sqrt(r / alpha) * x);
  out.tv = tv_distance(out.empirical, out.target);
  out.acceptance_rate = static_cast<double>(draws) / static_cast<double>(proposals);
  return out;
}

struct BoundReport {
  std::size_t evaluated = 0;
  std::size_t violations = 0;
  /// Smallest (right side - left side) seen, in log space.
  double worst_slack = std::numeric_limits<double>::infinity();

  bool passed() const { return violations == 0; }
};

struct LogSides {
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Both sides of ((1 - eps) + eps k / q)^d <= (q / (q - eps d))^k e^{-eps d}
/// in log space, with eps = tenths / 10. q = eps d is handled exactly via
/// integer arithmetic; eps = 0 gives 0 = 0.
inline LogSides ineq_log_sides(int d, int tenths, int q, int k) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  LogSides out;
  if (tenths == 0) {
    return out;
  }
  const double eps = tenths / 10.0;
  const double eps_d = static_cast<double>(tenths * d) / 10.0;
  const double base = (1.0 - eps) + eps * k / q;
  out.lhs = base > 0.0 ? d * std::log(base) : -kInf;
  const int gap_tenths = 10 * q - tenths * d;
  if (gap_tenths == 0) {
    out.rhs = k == 0 ? -eps_d : kInf;
  } else {
    out.rhs = k * (std::log(static_cast<double>(q)) - std::log(gap_tenths / 10.0)) - eps_d;
  }
  return out;
}

/// The inequality above over d in 1..20, eps in {0, 0.1, .., 1},
/// q in ceil(eps d)..40, k in 0..60.
inline BoundReport check_ineq_grid() {
  constexpr double kSlack = 1e-12;
  BoundReport report;
  for (int d = 1; d <= 20; ++d) {
    for (int tenths = 0; tenths <= 10; ++tenths) {
      const int q_min = (tenths * d + 9) / 10;
      for (int q = q_min; q <= 40; ++q) {
        for (int k = 0; k <= 60; ++k) {
          const LogSides sides = ineq_log_sides(d, tenths, q, k);
          ++report.evaluated;
          const double slack = sides.rhs - sides.lhs;
          if (!std::isinf(slack)) {
            report.worst_slack = std::min(report.worst_slack, slack);
          }
          if (sides.lhs > sides.rhs + kSlack) {
            ++report.violations;
          }
        }
      }
    }
  }
  return report;
}

/// For gamma-sandwiched PSD B, C: both determinant bounds in log space,
/// over random C (d <= 8) and perturbations B = C^{1/2} (I + gamma E) C^{1/2}
/// with |E|_2 <= 1, gamma cycling through {0.05, 0.2, 0.5}.
inline BoundReport check_det_bound(std::size_t trials, Rng& rng) {
  constexpr double kSlack = 1e-9;
  constexpr double kGammas[] = {0.05, 0.2, 0.5};
  BoundReport report;
  for (std::size_t t = 0; t < trials; ++t) {
    const double gamma = kGammas[t % 3];
    const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto rank = static_cast<Eigen::Index>(1 + rng.below(static_cast<std::uint64_t>(d)));
    const double scale = std::exp(2.0 * rng.normal());
    Matrix factor(d, rank);
    for (Eigen::Index i = 0; i < factor.size(); ++i) {
      factor.data()[i] = rng.normal();
    }
    const Matrix c = scale * factor * factor.transpose();

    Matrix noise(d, d);
    for (Eigen::Index i = 0; i < noise.size(); ++i) {
      noise.data()[i] = rng.normal();
    }
    Matrix e = 0.5 * (noise + noise.transpose());
    const Eigen::SelfAdjointEigenSolver<Matrix> e_eig(e, Eigen::EigenvaluesOnly);
    const double e_norm = e_eig.eigenvalues().cwiseAbs().maxCoeff();
    if (e_norm > 0.0) {
      e *= rng.uniform() / e_norm;
    }

    const Eigen::SelfAdjointEigenSolver<Matrix> c_eig(c);
    const Matrix c_half = c_eig.eigenvectors() * c_eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                          c_eig.eigenvectors().transpose();
    const Matrix b = c_half * (Matrix::Identity(d, d) + gamma * e) * c_half;

    const Matrix id = Matrix::Identity(d, d);
    const double s = (c * (id + c).inverse()).trace();
    const double log_ratio = std::log(det(id + b)) - std::log(det(id + c));
    const double upper_slack = gamma * s - log_ratio;
    const double lower_slack = log_ratio + gamma / (1.0 - gamma) * s;
    report.evaluated += 2;
    report.worst_slack = std::min({report.worst_slack, upper_slack, lower_slack});
    if (upper_slack < -kSlack) {
      ++report.violations;
    }
    if (lower_slack < -kSlack) {
      ++report.violations;
    }
  }
  return report;
}

/// Right side of the DPP size concentration bound Pr(|S| - E|S| >= a).
inline double size_tail_bound(double a, double mean_size) {
  return 3.0 * std::exp(-a * a / (16.0 * (a + 2.0 * mean_size)));
}

}  // namespace rdpp::oracle
