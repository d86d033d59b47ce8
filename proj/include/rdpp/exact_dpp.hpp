#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <vector>

#include "rdpp/error.hpp"
#include "rdpp/linalg.hpp"
#include "rdpp/rng.hpp"

namespace rdpp {

/// Sorted row indices in the caller's original numbering. Repeats are
/// representable (positions of an index sequence may reference one row twice).
struct DppSubset {
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  auto operator<=>(const DppSubset&) const = default;
};

/// n x k matrix with orthonormal columns.
struct OrthoColumns {
  Matrix columns;
};

/// Eigenvector indices selected independently with probability lambda / (1 + lambda).
inline std::vector<std::size_t> elementary_indices(const EigenDecomposition& eig, Rng& rng) {
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < eig.dim(); ++i) {
    const double lambda = eig.values[static_cast<Eigen::Index>(i)];
    if (lambda < 0.0) {
      throw PreconditionError("elementary_indices: negative eigenvalue");
    }
    if (lambda <= eig.tol_psd) {
      continue;
    }
    if (rng.uniform() * (1.0 + lambda) < lambda) {
      selected.push_back(i);
    }
  }
  return selected;
}

namespace detail {

inline OrthoColumns normalize_projected(Matrix projected, const EigenDecomposition& eig,
                                        const std::vector<std::size_t>& selected) {
  for (std::size_t j = 0; j < selected.size(); ++j) {
    projected.col(static_cast<Eigen::Index>(j)) /=
        std::sqrt(eig.values[static_cast<Eigen::Index>(selected[j])]);
  }
  return OrthoColumns{std::move(projected)};
}

inline Matrix selected_vectors(const EigenDecomposition& eig, const std::vector<std::size_t>& selected) {
  if (selected.empty()) {
    throw PreconditionError("build_ortho_columns: empty selection");
  }
  Matrix basis(eig.vectors.rows(), static_cast<Eigen::Index>(selected.size()));
  for (std::size_t j = 0; j < selected.size(); ++j) {
    const auto t = static_cast<Eigen::Index>(selected[j]);
    if (selected[j] >= eig.dim()) {
      throw PreconditionError("build_ortho_columns: eigen index out of range");
    }
    if (!(eig.values[t] > eig.tol_psd)) {
      throw LinalgError("build_ortho_columns: selected eigenvalue is below tolerance (degenerate direction)");
    }
    basis.col(static_cast<Eigen::Index>(j)) = eig.vectors.col(t);
  }
  return basis;
}

}  // namespace detail

/// Columns X v_t / sqrt(lambda_t) for t in the selection.
inline OrthoColumns build_ortho_columns(const RowMatrix& x, const EigenDecomposition& eig,
                                        const std::vector<std::size_t>& selected) {
  return detail::normalize_projected(x.multiply(detail::selected_vectors(eig, selected)), eig, selected);
}

inline OrthoColumns build_ortho_columns(const Eigen::Ref<const Matrix>& rows, const EigenDecomposition& eig,
                                        const std::vector<std::size_t>& selected) {
  return detail::normalize_projected(rows * detail::selected_vectors(eig, selected), eig, selected);
}

/// Bottom-up volume sampling: k rounds of row-norm sampling, each followed by
/// projecting every row onto the complement of the picked row. Returns k
/// distinct row positions of V, sorted.
inline std::vector<std::size_t> volume_sample_bottom_up(OrthoColumns v, Rng& rng) {
  Matrix& basis = v.columns;
  const Eigen::Index n = basis.rows();
  const Eigen::Index k = basis.cols();
  if (k < 1) {
    throw PreconditionError("volume_sample_bottom_up: need at least one column");
  }
  constexpr Eigen::Index kRefreshEvery = 16;
  constexpr double kResidualFloor = 1e-10;

  Vector norms = basis.rowwise().squaredNorm();
  std::vector<std::size_t> picked;
  picked.reserve(static_cast<std::size_t>(k));
  for (Eigen::Index step = 0; step < k; ++step) {
    if (step > 0 && step % kRefreshEvery == 0) {
      norms = basis.rowwise().squaredNorm();
      for (const std::size_t p : picked) {
        norms[static_cast<Eigen::Index>(p)] = 0.0;
      }
    }
    norms = norms.cwiseMax(0.0);
    const double total = norms.sum();
    if (!(total > kResidualFloor)) {
      throw LinalgError("volume_sample_bottom_up: residual row norms vanished before k picks (rank deficiency)");
    }
    const double target = rng.uniform() * total;
    Eigen::Index choice = -1;
    double cumulative = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (norms[i] <= 0.0) {
        continue;
      }
      cumulative += norms[i];
      choice = i;
      if (target < cumulative) {
        break;
      }
    }

    const Vector row = basis.row(choice).transpose();
    const double row_norm2 = row.squaredNorm();
    const Vector overlap = basis * row;
    basis.noalias() -= overlap * (row.transpose() / row_norm2);
    norms -= overlap.cwiseAbs2() / row_norm2;
    norms[choice] = 0.0;
    picked.push_back(static_cast<std::size_t>(choice));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

/// Row positions of a DPP sample over the rows of a dense matrix.
inline std::vector<std::size_t> sample_dpp_exact_positions(const Eigen::Ref<const Matrix>& rows,
                                                           const EigenDecomposition& eig, Rng& rng) {
  const auto selected = elementary_indices(eig, rng);
  if (selected.empty()) {
    return {};
  }
  return volume_sample_bottom_up(build_ortho_columns(rows, eig, selected), rng);
}

/// Exact DPP(X) sample via the elementary-DPP mixture. `eig` must be the
/// eigendecomposition of X^T X.
inline DppSubset sample_dpp_exact(const RowMatrix& x, const EigenDecomposition& eig, Rng& rng) {
  if (eig.dim() != x.cols()) {
    throw PreconditionError("sample_dpp_exact: eigendecomposition dimension does not match X");
  }
  const auto selected = elementary_indices(eig, rng);
  if (selected.empty()) {
    return {};
  }
  const auto positions = volume_sample_bottom_up(build_ortho_columns(x, eig, selected), rng);
  DppSubset out;
  out.indices.reserve(positions.size());
  for (const std::size_t p : positions) {
    out.indices.push_back(x.original_index(p));
  }
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

/// Sum of lambda / (1 + lambda): the mean DPP sample size.
inline double expected_size(const EigenDecomposition& eig) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    const double lambda = eig.values[i];
    if (lambda < 0.0) {
      throw PreconditionError("expected_size: negative eigenvalue");
    }
    total += lambda / (1.0 + lambda);
  }
  return total;
}

}  // namespace rdpp
