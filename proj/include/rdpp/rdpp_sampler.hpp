#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rdpp/error.hpp"
#include "rdpp/exact_dpp.hpp"
#include "rdpp/linalg.hpp"
#include "rdpp/preprocessing.hpp"
#include "rdpp/rng.hpp"

namespace rdpp {

/// The proposal weights l_tilde are inconsistent with the exact ridge scores:
/// l_i / (2 l_tilde_i) left [1/3, 1].
class ProposalBoundError : public Error {
 public:
  ProposalBoundError(std::size_t row, double ratio)
      : Error(message(row, ratio)), row_(row), ratio_(ratio) {}
  std::size_t row() const { return row_; }
  double ratio() const { return ratio_; }

 private:
  static std::string message(std::size_t row, double ratio) {
    std::ostringstream msg;
    msg << "sample_index_exact_l: l_i/(2 l_tilde_i) = " << ratio << " at row " << row
        << " is outside [1/3, 1]; l_tilde violates the ridge-score approximation bound";
    return msg.str();
  }
  std::size_t row_;
  double ratio_;
};

/// The acceptance log-probability came out positive, which the C_K bound rules out.
class AcceptanceBoundError : public Error {
 public:
  explicit AcceptanceBoundError(double value)
      : Error("acceptance_log_prob: value " + std::to_string(value) + " exceeds 0"), value_(value) {}
  double value() const { return value_; }

 private:
  double value_;
};

/// The repeat loop hit max_outer without accepting.
class SamplerAbort : public Error {
 public:
  SamplerAbort(std::size_t outer_iters, double last_log_prob, std::size_t last_k, double s_tilde,
               std::uint64_t q)
      : Error(message(outer_iters, last_log_prob, last_k, s_tilde, q)),
        outer_iters_(outer_iters),
        last_log_prob_(last_log_prob),
        last_k_(last_k) {}
  std::size_t outer_iters() const { return outer_iters_; }
  double last_log_prob() const { return last_log_prob_; }
  std::size_t last_k() const { return last_k_; }

 private:
  static std::string message(std::size_t iters, double lp, std::size_t k, double s, std::uint64_t q) {
    std::ostringstream msg;
    msg << "sample_rdpp: no acceptance after " << iters << " iterations (last log-prob " << lp
        << ", last K " << k << ", s_tilde " << s << ", q " << q << ")";
    return msg.str();
  }
  std::size_t outer_iters_;
  double last_log_prob_;
  std::size_t last_k_;
};

/// Exact Poisson(mean) draw: CDF inversion below 30, PTRS transformed rejection above.
inline std::uint64_t sample_poisson(double mean, Rng& rng) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) {
    throw PreconditionError("sample_poisson: mean must be finite and non-negative");
  }
  if (mean == 0.0) {
    return 0;
  }
  if (mean < 30.0) {
    const double u = rng.uniform();
    double term = std::exp(-mean);
    double cdf = term;
    std::uint64_t k = 0;
    while (u > cdf) {
      ++k;
      term *= mean / static_cast<double>(k);
      cdf += term;
      if (term == 0.0) {
        break;
      }
    }
    return k;
  }
  // Hormann (1993), PTRS.
  const double slam = std::sqrt(mean);
  const double loglam = std::log(mean);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  while (true) {
    const double u = rng.uniform() - 0.5;
    const double v = rng.uniform();
    const double us = 0.5 - std::abs(u);
    const double k = std::floor((2.0 * a / us + b) * u + mean + 0.43);
    if (us >= 0.07 && v <= vr) {
      return static_cast<std::uint64_t>(k);
    }
    if (k < 0.0 || (us < 0.013 && v > us)) {
      continue;
    }
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
        -mean + k * loglam - std::lgamma(k + 1.0)) {
      return static_cast<std::uint64_t>(k);
    }
  }
}

struct IndexDraw {
  std::size_t index = 0;
  std::size_t rejections = 0;
  /// Exact ridge score l_index.
  double score = 0.0;
};

namespace detail {

inline void check_state_matches(const PreprocessedState& state, const RowMatrix& x) {
  if (state.n() != x.rows() || state.d() != x.cols()) {
    std::ostringstream msg;
    msg << "state/matrix mismatch: state is " << state.n() << "x" << state.d() << ", matrix is " << x.rows()
        << "x" << x.cols();
    throw PreconditionError(msg.str());
  }
}

}  // namespace detail

/// One index distributed exactly proportional to l_i = x_i^T (I+A)^{-1} x_i,
/// by proposing from l_tilde and accepting with probability l_i / (2 l_tilde_i).
inline IndexDraw sample_index_exact_l(const PreprocessedState& state, const RowMatrix& x, Rng& rng) {
  constexpr double kSlack = 1e-9;
  detail::check_state_matches(state, x);
  const auto l_tilde = state.l_tilde();
  IndexDraw out;
  while (true) {
    const std::size_t i = state.sampling_table().sample(rng);
    const double score = quad_form(x.row(i), state.chol_identity_plus_A());
    const double ratio = score / (2.0 * l_tilde[i]);
    if (ratio > 1.0 + kSlack || ratio < 1.0 / 3.0 - kSlack) {
      throw ProposalBoundError(i, ratio);
    }
    if (rng.uniform() < ratio) {
      out.index = i;
      out.score = score;
      return out;
    }
    ++out.rejections;
  }
}

/// Rows sqrt(s_tilde / (l_t (q - s_tilde))) x_{sigma_t}, one per position of sigma.
struct ScaledSubmatrix {
  Matrix rows;
  std::vector<std::size_t> source_indices;
};

inline ScaledSubmatrix make_scaled_submatrix(const PreprocessedState& state, const RowMatrix& x,
                                             std::span<const std::size_t> sigma, std::span<const double> scores) {
  if (sigma.size() != scores.size()) {
    throw PreconditionError("make_scaled_submatrix: sigma and scores differ in length");
  }
  const double s_tilde = state.s_tilde();
  const double slack = static_cast<double>(state.q()) - s_tilde;
  if (!(slack > 0.0)) {
    throw PreconditionError("make_scaled_submatrix: q must exceed s_tilde");
  }
  ScaledSubmatrix sub;
  sub.rows.resize(static_cast<Eigen::Index>(sigma.size()), static_cast<Eigen::Index>(x.cols()));
  sub.source_indices.assign(sigma.begin(), sigma.end());
  for (std::size_t t = 0; t < sigma.size(); ++t) {
    const double scale = std::sqrt(s_tilde / (scores[t] * slack));
    if (!(scale > 0.0) || !std::isfinite(scale)) {
      throw PreconditionError("make_scaled_submatrix: non-positive or non-finite row scale");
    }
    sub.rows.row(static_cast<Eigen::Index>(t)) = scale * x.row(sigma[t]).transpose();
  }
  return sub;
}

/// log of det(I + Xs^T Xs) / (C_K det(I + A)), C_K = (q / (q - s_tilde))^{K+d} e^{-s_tilde}.
inline double acceptance_log_prob(const PreprocessedState& state, const ScaledSubmatrix& sub) {
  constexpr double kSlack = 1e-9;
  const auto k = static_cast<double>(sub.rows.rows());
  const auto d = static_cast<double>(state.d());
  const double q = static_cast<double>(state.q());
  const double s_tilde = state.s_tilde();
  const Matrix gram = sub.rows.transpose() * sub.rows;
  const double log_ratio = -std::log1p(-s_tilde / q);
  const double value =
      logdet_identity_plus(gram) - state.logdet_identity_plus_A() - (k + d) * log_ratio + s_tilde;
  if (value > kSlack) {
    throw AcceptanceBoundError(value);
  }
  return value;
}

struct StageTimes {
  double proposal_us = 0.0;
  double acceptance_us = 0.0;
  double downsample_us = 0.0;

  double total_us() const { return proposal_us + acceptance_us + downsample_us; }
};

struct RdppDraw {
  /// Accepted index sequence, order kept, repeats allowed.
  std::vector<std::size_t> sigma;
  /// l_{sigma_t}, cached from the proposal loop.
  std::vector<double> scores;
  ScaledSubmatrix submatrix;
  std::size_t K = 0;
  std::size_t outer_iters = 0;
  std::size_t inner_rejections = 0;
  double log_accept_prob = 0.0;
  /// Largest acceptance log-probability evaluated in this call.
  double max_log_accept_prob = -std::numeric_limits<double>::infinity();
  StageTimes times;
};

struct SamplerOptions {
  std::size_t max_outer = 1000;
};

namespace detail {

inline double micros_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Repeat loop: K ~ Poisson(q), sigma i.i.d. from l, accept with the
/// log-space Bernoulli until accepted.
inline RdppDraw sample_rdpp(const PreprocessedState& state, const RowMatrix& x, Rng& rng,
                            const SamplerOptions& options = {}) {
  detail::check_state_matches(state, x);
  if (!(state.s_tilde() > 0.0)) {
    throw PreconditionError("sample_rdpp: A must be non-zero (s_tilde > 0)");
  }
  RdppDraw draw;
  const auto q = static_cast<double>(state.q());
  double last = 0.0;
  for (std::size_t outer = 1; outer <= options.max_outer; ++outer) {
    auto start = std::chrono::steady_clock::now();
    const auto k = static_cast<std::size_t>(sample_poisson(q, rng));
    draw.sigma.clear();
    draw.scores.clear();
    for (std::size_t t = 0; t < k; ++t) {
      const IndexDraw pick = sample_index_exact_l(state, x, rng);
      draw.sigma.push_back(pick.index);
      draw.scores.push_back(pick.score);
      draw.inner_rejections += pick.rejections;
    }
    draw.times.proposal_us += detail::micros_since(start);

    start = std::chrono::steady_clock::now();
    draw.submatrix = make_scaled_submatrix(state, x, draw.sigma, draw.scores);
    last = acceptance_log_prob(state, draw.submatrix);
    draw.max_log_accept_prob = std::max(draw.max_log_accept_prob, last);
    const bool accepted = std::log(rng.uniform_pos()) < last;
    draw.times.acceptance_us += detail::micros_since(start);
    if (accepted) {
      draw.K = k;
      draw.outer_iters = outer;
      draw.log_accept_prob = last;
      return draw;
    }
  }
  throw SamplerAbort(options.max_outer, last, draw.sigma.size(), state.s_tilde(), state.q());
}

struct DppSample {
  DppSubset subset;
  RdppDraw draw;
};

/// Draw from DPP(rho X): accepted R-DPP sequence, then an exact DPP over the
/// rows of the scaled submatrix, mapped back through sigma and the index map.
inline DppSample sample_dpp(const PreprocessedState& state, const RowMatrix& x, Rng& rng,
                            const SamplerOptions& options = {}) {
  DppSample out;
  out.draw = sample_rdpp(state, x, rng, options);
  if (out.draw.K == 0) {
    return out;
  }
  const auto start = std::chrono::steady_clock::now();
  const Matrix& rows = out.draw.submatrix.rows;
  const EigenDecomposition eig = eigh(SymMatrix(rows.transpose() * rows, true));
  const auto positions = sample_dpp_exact_positions(rows, eig, rng);
  out.subset.indices.reserve(positions.size());
  for (const std::size_t p : positions) {
    out.subset.indices.push_back(state.index_map()[out.draw.sigma[p]]);
  }
  std::sort(out.subset.indices.begin(), out.subset.indices.end());
  out.draw.times.downsample_us += detail::micros_since(start);
  return out;
}

struct BatchOptions {
  SamplerOptions sampler;
  /// Worker threads; 0 means one per hardware thread.
  std::size_t threads = 1;
  /// Keep each draw's scaled submatrix (dropped by default to save memory).
  bool keep_submatrix = false;
  /// Index of the first draw; lets a long run be produced in chunks.
  std::size_t first_index = 0;
};

/// `count` draws where draw i uses stream Rng(seed).split(first_index + i), so the result
/// does not depend on the thread count.
inline std::vector<DppSample> sample_dpp_batch(const PreprocessedState& state, const RowMatrix& x,
                                               std::uint64_t seed, std::size_t count,
                                               const BatchOptions& options = {}) {
  detail::check_state_matches(state, x);
  std::vector<DppSample> out(count);
  const Rng root(seed);
  std::size_t workers = options.threads == 0 ? std::max(1U, std::thread::hardware_concurrency()) : options.threads;
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::vector<std::exception_ptr> errors(workers);
  const auto run = [&](std::size_t worker) {
    try {
      for (std::size_t i = worker; i < count; i += workers) {
        Rng rng = root.split(options.first_index + i);
        out[i] = sample_dpp(state, x, rng, options.sampler);
        if (!options.keep_submatrix) {
          out[i].draw.submatrix = {};
        }
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back(run, w);
    }
  }
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return out;
}

struct SamplerDiagnostics {
  /// draws / total repeat-loop iterations.
  double acceptance_rate = 0.0;
  double mean_K = 0.0;
  double mean_outer_iters = 0.0;
  double mean_inner_rejections = 0.0;
  double mean_output_size = 0.0;
  StageTimes mean_times;
  /// sqrt(s_tilde / s_hat), when exact ridge scores were computed.
  std::optional<double> rho;
  std::optional<double> s_hat;
  /// tr(rho^2 X^T X (I + rho^2 X^T X)^{-1}).
  std::optional<double> predicted_expected_size;
  /// E|S| under DPP(X).
  std::optional<double> target_expected_size;
};

inline SamplerDiagnostics diagnostics(const PreprocessedState& state, const RowMatrix& x,
                                      std::span<const DppSample> draws, bool compute_exact = true) {
  if (draws.empty()) {
    throw PreconditionError("diagnostics: need at least one draw");
  }
  SamplerDiagnostics out;
  double outer = 0.0;
  for (const auto& s : draws) {
    outer += static_cast<double>(s.draw.outer_iters);
    out.mean_K += static_cast<double>(s.draw.K);
    out.mean_inner_rejections += static_cast<double>(s.draw.inner_rejections);
    out.mean_output_size += static_cast<double>(s.subset.size());
    out.mean_times.proposal_us += s.draw.times.proposal_us;
    out.mean_times.acceptance_us += s.draw.times.acceptance_us;
    out.mean_times.downsample_us += s.draw.times.downsample_us;
  }
  const auto count = static_cast<double>(draws.size());
  out.acceptance_rate = count / outer;
  out.mean_outer_iters = outer / count;
  out.mean_K /= count;
  out.mean_inner_rejections /= count;
  out.mean_output_size /= count;
  out.mean_times.proposal_us /= count;
  out.mean_times.acceptance_us /= count;
  out.mean_times.downsample_us /= count;

  if (compute_exact) {
    detail::check_state_matches(state, x);
    const RidgeScores ridge = ridge_scores_exact(x, state.A());
    const double rho = std::sqrt(state.s_tilde() / ridge.s_hat);
    const EigenDecomposition eig = eigh(SymMatrix(x.gram(), true));
    out.rho = rho;
    out.s_hat = ridge.s_hat;
    out.predicted_expected_size = scaled_expected_size(eig, rho);
    out.target_expected_size = expected_size(eig);
  }
  return out;
}

}  // namespace rdpp
