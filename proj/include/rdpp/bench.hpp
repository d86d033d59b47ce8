#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "rdpp/error.hpp"
#include "rdpp/linalg.hpp"
#include "rdpp/preprocessing.hpp"
#include "rdpp/rdpp_sampler.hpp"
#include "rdpp/rng.hpp"

namespace rdpp::bench {

inline double median(std::vector<double> values) {
  if (values.empty()) {
    throw PreconditionError("median of an empty sample");
  }
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) {
    return upper;
  }
  return 0.5 * (upper + *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid)));
}

inline RowMatrix gaussian_matrix(std::size_t n, std::size_t d, Rng& rng) {
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = rng.normal();
  }
  return RowMatrix::from_dense(x);
}

/// n x d CSR matrix with exactly `per_row` Gaussian entries in distinct random columns of every row.
inline RowMatrix sparse_gaussian_matrix(std::size_t n, std::size_t d, std::size_t per_row, Rng& rng) {
  if (per_row == 0 || per_row > d) {
    throw PreconditionError("sparse_gaussian_matrix: need 1 <= per_row <= d");
  }
  std::vector<Triplet> entries;
  entries.reserve(n * per_row);
  std::vector<std::size_t> cols(d);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    for (std::size_t j = 0; j < per_row; ++j) {
      std::swap(cols[j], cols[j + rng.below(d - j)]);
      entries.push_back({i, cols[j], rng.normal()});
    }
  }
  return RowMatrix::from_triplets(n, d, entries, StorageOptions{0});
}

/// Per-draw wall time in microseconds, one entry per draw.
inline std::vector<double> draw_times_us(const PreprocessedState& state, const RowMatrix& x, std::uint64_t seed,
                                         std::size_t draws) {
  std::vector<double> times;
  times.reserve(draws);
  Rng rng(seed);
  for (std::size_t i = 0; i < draws; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const DppSample s = sample_dpp(state, x, rng);
    times.push_back(std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count());
    if (s.subset.size() > x.rows()) {
      throw Error("draw_times_us: impossible subset size");
    }
  }
  return times;
}

inline double preprocess_ms(const RowMatrix& x, double epsilon, Mode mode, std::uint64_t seed) {
  Rng rng(seed);
  const auto start = std::chrono::steady_clock::now();
  const PreprocessedState state = build_state(x, epsilon, mode, rng);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (state.n() != x.rows()) {
    throw Error("preprocess_ms: state size mismatch");
  }
  return ms;
}

struct BenchConfig {
  std::uint64_t seed = 0;
  std::size_t d = 10;
  std::size_t n_small = 10000;
  std::size_t n_large = 100000;
  std::size_t draws = 200;
  std::size_t repeats = 5;
  /// Sparse matrices for the preprocessing comparison: sparse_n x d with
  /// nnz_per_row and then 2 * nnz_per_row entries per row.
  std::size_t sparse_n = 100000;
  std::size_t nnz_per_row = 2;
  double epsilon = 0.5;
};

struct BenchReport {
  BenchConfig config;
  double per_sample_us_small = 0.0;
  double per_sample_us_large = 0.0;
  double n_independence_ratio = 0.0;
  std::size_t nnz_small = 0;
  std::size_t nnz_large = 0;
  double preprocess_ms_small = 0.0;
  double preprocess_ms_large = 0.0;
  double nnz_scaling_ratio = 0.0;
};

inline void to_json(nlohmann::json& j, const BenchReport& r) {
  j = nlohmann::json{{"d", r.config.d},
                     {"repeats", r.config.repeats},
                     {"draws", r.config.draws},
                     {"n_small", r.config.n_small},
                     {"n_large", r.config.n_large},
                     {"per_sample_us_small", r.per_sample_us_small},
                     {"per_sample_us_large", r.per_sample_us_large},
                     {"n_independence_ratio", r.n_independence_ratio},
                     {"sparse_n", r.config.sparse_n},
                     {"nnz_small", r.nnz_small},
                     {"nnz_large", r.nnz_large},
                     {"preprocess_ms_small", r.preprocess_ms_small},
                     {"preprocess_ms_large", r.preprocess_ms_large},
                     {"nnz_scaling_ratio", r.nnz_scaling_ratio}};
}

/// Median per-draw sampling time for n_small vs n_large rows (exact-mode
/// state, Gaussian X), and median sketched preprocessing time when nnz doubles.
inline BenchReport run_bench(const BenchConfig& cfg) {
  if (cfg.repeats == 0 || cfg.draws == 0) {
    throw PreconditionError("bench: repeats and draws must be positive");
  }
  BenchReport report;
  report.config = cfg;
  const Rng root(cfg.seed);

  const auto per_sample = [&](std::size_t n, std::uint64_t stream) {
    Rng gen = root.split(stream);
    const RowMatrix x = gaussian_matrix(n, cfg.d, gen);
    Rng prep = root.split(stream + 1);
    const PreprocessedState state = build_state(x, 1.0, Mode::exact, prep);
    draw_times_us(state, x, cfg.seed, std::max<std::size_t>(1, cfg.draws / 10));
    std::vector<double> all;
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
      const auto t = draw_times_us(state, x, cfg.seed + rep, cfg.draws);
      all.insert(all.end(), t.begin(), t.end());
    }
    return median(all);
  };
  report.per_sample_us_small = per_sample(cfg.n_small, 0);
  report.per_sample_us_large = per_sample(cfg.n_large, 2);
  report.n_independence_ratio = report.per_sample_us_large / report.per_sample_us_small;

  const auto prep_time = [&](std::size_t per_row, std::uint64_t stream, std::size_t& nnz) {
    Rng gen = root.split(stream);
    const RowMatrix x = sparse_gaussian_matrix(cfg.sparse_n, cfg.d, per_row, gen);
    nnz = x.nnz();
    preprocess_ms(x, cfg.epsilon, Mode::sketched, cfg.seed);
    std::vector<double> times;
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
      times.push_back(preprocess_ms(x, cfg.epsilon, Mode::sketched, cfg.seed + rep));
    }
    return median(times);
  };
  report.preprocess_ms_small = prep_time(cfg.nnz_per_row, 4, report.nnz_small);
  report.preprocess_ms_large = prep_time(std::min(cfg.d, 2 * cfg.nnz_per_row), 5, report.nnz_large);
  report.nnz_scaling_ratio = report.preprocess_ms_large / report.preprocess_ms_small;
  return report;
}

}  // namespace rdpp::bench
