#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdpp/error.hpp"
#include "rdpp/linalg.hpp"
#include "rdpp/oracle.hpp"
#include "rdpp/preprocessing.hpp"
#include "rdpp/rdpp_sampler.hpp"
#include "rdpp/rng.hpp"

namespace rdpp {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  /// "<=" or ">=": how value must compare with threshold.
  std::string comparison = "<=";
  bool passed = false;
};

inline CheckResult make_check(std::string name, double value, double threshold, bool at_least = false) {
  CheckResult c;
  c.name = std::move(name);
  c.value = value;
  c.threshold = threshold;
  c.comparison = at_least ? ">=" : "<=";
  c.passed = at_least ? value >= threshold : value <= threshold;
  return c;
}

inline void to_json(nlohmann::json& j, const CheckResult& c) {
  j = nlohmann::json{{"name", c.name},
                     {"value", c.value},
                     {"threshold", c.threshold},
                     {"comparison", c.comparison},
                     {"passed", c.passed}};
}

struct ValidationConfig {
  double epsilon = 0.1;
  Mode mode = Mode::exact;
  std::uint64_t seed = 0;
  std::size_t draws = 200000;
  std::size_t mc_trials = 1000000;
  std::size_t det_bound_trials = 10000;
  std::size_t threads = 1;
};

struct ValidationReport {
  std::vector<CheckResult> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
};

inline void to_json(nlohmann::json& j, const ValidationReport& r) {
  j = nlohmann::json{{"checks", r.checks}, {"passed", r.passed()}};
}

inline constexpr std::size_t kMaxValidationRows = 12;

namespace detail {

inline Matrix leading_rows_with_frobenius(const Matrix& x, std::size_t rows, double frobenius2) {
  Matrix out = x.topRows(static_cast<Eigen::Index>(std::min<std::size_t>(rows, static_cast<std::size_t>(x.rows()))));
  const double current = out.squaredNorm();
  return out * std::sqrt(frobenius2 / current);
}

/// Multiset of an accepted sequence, or a shared overflow key past k_max.
inline oracle::IndexKey sequence_bucket(std::vector<std::size_t> sigma, std::size_t k_max) {
  if (sigma.size() > k_max) {
    return {std::numeric_limits<std::size_t>::max()};
  }
  std::sort(sigma.begin(), sigma.end());
  return sigma;
}

/// Accepted-sequence distribution of the sampler against the enumerated
/// R-DPP law with regularizer I over the rescaled rows. The ((q - s) / q)^K acceptance factor tilts
/// the Poisson(q) proposal, so accepted lengths follow rate q - s_tilde.
inline CheckResult rdpp_sequence_check(const Matrix& fixture, const ValidationConfig& cfg) {
  constexpr std::size_t kMaxLength = 7;
  const RowMatrix x = RowMatrix::from_dense(fixture);
  Rng prep_rng = Rng(cfg.seed, 1);
  const PreprocessedState state = build_state(x, cfg.epsilon, cfg.mode, prep_rng);
  const RidgeScores ridge = ridge_scores_exact(x, state.A());
  const double s_tilde = state.s_tilde();
  const auto q = static_cast<double>(state.q());

  Matrix scaled = fixture;
  std::vector<double> p(ridge.l.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = ridge.l[i] / ridge.s_hat;
    scaled.row(static_cast<Eigen::Index>(i)) *= std::sqrt(s_tilde / (ridge.l[i] * (q - s_tilde)));
  }
  const oracle::SequencePmf exact =
      oracle::rdpp_pmf_truncated(scaled, Matrix::Identity(fixture.cols(), fixture.cols()), p, q - s_tilde, kMaxLength);
  oracle::SubsetPmf target = exact.unordered();
  target.entries[{std::numeric_limits<std::size_t>::max()}] = std::max(0.0, exact.truncated_mass);

  oracle::PmfAccumulator observed;
  const Rng root(cfg.seed, 2);
  for (std::size_t i = 0; i < cfg.draws; ++i) {
    Rng rng = root.split(i);
    observed.add(sequence_bucket(sample_rdpp(state, x, rng).sigma, kMaxLength));
  }
  return make_check("rdpp_sequence_tv", oracle::tv_distance(observed.pmf(), target), 0.02);
}

}  // namespace detail

/// Runs every oracle comparison on a small matrix (n <= 12).
inline ValidationReport run_validation_suite(const RowMatrix& x, const ValidationConfig& cfg) {
  if (x.rows() > kMaxValidationRows) {
    throw PreconditionError("validate: n = " + std::to_string(x.rows()) +
                            " is too large for brute-force enumeration (limit " +
                            std::to_string(kMaxValidationRows) +
                            "); validate a row subset, or use `sample` and compare summary statistics");
  }
  if (cfg.draws == 0) {
    throw PreconditionError("validate: need at least one draw");
  }
  const Matrix dense = x.to_dense();
  const auto d = static_cast<std::size_t>(dense.cols());
  const bool sketched = cfg.mode == Mode::sketched;
  ValidationReport report;

  Rng prep_rng(cfg.seed, 0);
  const PreprocessedState state = build_state(x, cfg.epsilon, cfg.mode, prep_rng);
  BatchOptions batch;
  batch.threads = cfg.threads;
  const std::vector<DppSample> draws = sample_dpp_batch(state, x, cfg.seed, cfg.draws, batch);

  oracle::PmfAccumulator observed;
  double max_log_prob = -std::numeric_limits<double>::infinity();
  for (const DppSample& s : draws) {
    oracle::IndexKey key;
    for (const std::size_t i : s.subset.indices) {
      key.push_back(i);
    }
    observed.add(key);
    max_log_prob = std::max(max_log_prob, s.draw.max_log_accept_prob);
  }
  // Brute force runs on the retained rows; map keys back to original numbering.
  oracle::SubsetPmf target;
  for (const auto& [key, prob] : oracle::dpp_pmf_bruteforce(dense).entries) {
    oracle::IndexKey mapped;
    for (const std::size_t i : key) {
      mapped.push_back(x.original_index(i));
    }
    target.entries[mapped] = prob;
  }
  const oracle::SubsetPmf empirical = observed.pmf();
  const SamplerDiagnostics diag = diagnostics(state, x, draws, false);

  report.checks.push_back(
      make_check("dpp_tv", oracle::tv_distance(empirical, target), sketched ? cfg.epsilon + 0.02 : 0.015));
  const auto size_emp = empirical.size_marginal(d);
  const auto size_target = target.size_marginal(d);
  double size_gap = 0.0;
  for (std::size_t k = 0; k <= d; ++k) {
    size_gap = std::max(size_gap, std::abs(size_emp[k] - size_target[k]));
  }
  report.checks.push_back(make_check("dpp_size_marginal_gap", size_gap, sketched ? cfg.epsilon + 0.01 : 0.01));
  report.checks.push_back(make_check("acceptance_rate", diag.acceptance_rate, 0.16, true));
  report.checks.push_back(make_check("max_log_accept_prob", max_log_prob, 1e-9));

  report.checks.push_back(
      detail::rdpp_sequence_check(detail::leading_rows_with_frobenius(dense, 3, 1.0 / static_cast<double>(d)), cfg));

  {
    const std::vector<double> uniform(static_cast<std::size_t>(dense.rows()), 1.0 / static_cast<double>(dense.rows()));
    Rng rng(cfg.seed, 3);
    const auto cb = oracle::mc_cauchy_binet(dense, state.A().dense(), uniform, 2.0, cfg.mc_trials, rng);
    report.checks.push_back(make_check("cauchy_binet_rel_err", cb.rel_err, 0.01));
  }

  const oracle::BoundReport grid = oracle::check_ineq_grid();
  report.checks.push_back(make_check("ineq_grid_violations", static_cast<double>(grid.violations), 0.0));
  {
    Rng rng(cfg.seed, 4);
    const oracle::BoundReport bound = oracle::check_det_bound(cfg.det_bound_trials, rng);
    report.checks.push_back(make_check("det_bound_violations", static_cast<double>(bound.violations), 0.0));
  }

  {
    const Matrix fixture = detail::leading_rows_with_frobenius(dense, 6, 1.0);
    const auto m = static_cast<std::size_t>(fixture.rows());
    std::vector<double> p(m);
    for (std::size_t i = 0; i < m; ++i) {
      p[i] = 0.5 / static_cast<double>(m) + 0.5 * fixture.row(static_cast<Eigen::Index>(i)).squaredNorm();
    }
    Rng rng(cfg.seed, 5);
    const auto comp = oracle::composition_check(fixture, p, 1.0, 1.0, cfg.draws, rng);
    report.checks.push_back(make_check("composition_tv", comp.tv, 0.02));
  }
  return report;
}

}  // namespace rdpp
