#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

#include "rdpp/error.hpp"

namespace rdpp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor, std::int64_t>;

/// Relative accuracy expected from the symmetric kernels.
inline constexpr double kTolEig = 1e-8;
/// PSD slack, relative to the largest diagonal entry.
inline constexpr double kTolPsdRelative = 1e-10;

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

struct StorageOptions {
  /// Matrices whose dense footprint fits in this many bytes are stored dense.
  std::size_t dense_budget_bytes = std::size_t{256} << 20;
};

/// The n x d input matrix, stored either dense row-major or as CSR.
///
/// Zero rows are dropped at construction; `index_map()` translates a retained
/// row number back to the row number in the caller's matrix. Every other
/// accessor works in retained-row numbering.
class RowMatrix {
 public:
  static RowMatrix from_dense(const Eigen::Ref<const Matrix>& x) {
    const auto n = static_cast<std::size_t>(x.rows());
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < n; ++i) {
      if (x.row(static_cast<Eigen::Index>(i)).squaredNorm() > 0.0) {
        keep.push_back(i);
      }
    }
    RowMajorMatrix kept(static_cast<Eigen::Index>(keep.size()), x.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) {
      kept.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(keep[r]));
    }
    return RowMatrix(std::move(kept), std::move(keep), n);
  }

  /// Builds from coordinate entries; duplicates are summed and explicit zeros dropped.
  static RowMatrix from_triplets(std::size_t n, std::size_t d, std::span<const Triplet> entries,
                                 const StorageOptions& options = {}) {
    if (n == 0 || d == 0) {
      throw PreconditionError("RowMatrix: dimensions must be positive");
    }
    std::vector<Eigen::Triplet<double, std::int64_t>> trips;
    trips.reserve(entries.size());
    for (const auto& t : entries) {
      if (t.row >= n || t.col >= d) {
        throw PreconditionError("RowMatrix: entry (" + std::to_string(t.row) + ", " +
                                std::to_string(t.col) + ") out of range");
      }
      trips.emplace_back(static_cast<std::int64_t>(t.row), static_cast<std::int64_t>(t.col),
                         t.value);
    }
    SparseRows full(static_cast<std::int64_t>(n), static_cast<std::int64_t>(d));
    full.setFromTriplets(trips.begin(), trips.end());
    full.prune(0.0, 0.0);
    full.makeCompressed();

    if (n * d * sizeof(double) <= options.dense_budget_bytes) {
      return from_dense(Matrix(full));
    }

    std::vector<std::size_t> keep;
    for (std::int64_t i = 0; i < full.outerSize(); ++i) {
      if (full.outerIndexPtr()[i + 1] > full.outerIndexPtr()[i]) {
        keep.push_back(static_cast<std::size_t>(i));
      }
    }
    std::vector<Eigen::Triplet<double, std::int64_t>> kept_trips;
    kept_trips.reserve(static_cast<std::size_t>(full.nonZeros()));
    for (std::size_t r = 0; r < keep.size(); ++r) {
      for (SparseRows::InnerIterator it(full, static_cast<std::int64_t>(keep[r])); it; ++it) {
        kept_trips.emplace_back(static_cast<std::int64_t>(r), it.col(), it.value());
      }
    }
    SparseRows kept(static_cast<std::int64_t>(keep.size()), static_cast<std::int64_t>(d));
    kept.setFromTriplets(kept_trips.begin(), kept_trips.end());
    kept.makeCompressed();
    return RowMatrix(std::move(kept), std::move(keep), n);
  }

  std::size_t rows() const { return index_map_.size(); }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return nnz_; }
  std::size_t original_rows() const { return original_rows_; }
  bool is_sparse() const { return std::holds_alternative<SparseRows>(storage_); }

  const std::vector<std::size_t>& index_map() const { return index_map_; }
  std::size_t original_index(std::size_t i) const { return index_map_[i]; }

  /// Dense copy of retained row i.
  Vector row(std::size_t i) const {
    const auto r = static_cast<Eigen::Index>(i);
    if (const auto* dense = std::get_if<RowMajorMatrix>(&storage_)) {
      return dense->row(r).transpose();
    }
    const auto& sparse = std::get<SparseRows>(storage_);
    Vector out = Vector::Zero(static_cast<Eigen::Index>(cols_));
    for (SparseRows::InnerIterator it(sparse, r); it; ++it) {
      out[it.col()] = it.value();
    }
    return out;
  }

  /// Calls f(col, value) for every stored entry of retained row i.
  template <typename F>
  void for_each_nonzero(std::size_t i, F&& f) const {
    const auto r = static_cast<Eigen::Index>(i);
    if (const auto* dense = std::get_if<RowMajorMatrix>(&storage_)) {
      for (Eigen::Index j = 0; j < dense->cols(); ++j) {
        const double v = (*dense)(r, j);
        if (v != 0.0) {
          f(static_cast<std::size_t>(j), v);
        }
      }
      return;
    }
    for (SparseRows::InnerIterator it(std::get<SparseRows>(storage_), r); it; ++it) {
      f(static_cast<std::size_t>(it.col()), it.value());
    }
  }

  /// X^T X.
  Matrix gram() const {
    return std::visit(
        [](const auto& m) -> Matrix {
          Matrix g = Matrix(m.transpose() * m);
          return 0.5 * (g + g.transpose());
        },
        storage_);
  }

  /// X * M for a dense d x k matrix M.
  Matrix multiply(const Eigen::Ref<const Matrix>& m) const {
    if (static_cast<std::size_t>(m.rows()) != cols_) {
      throw PreconditionError("RowMatrix::multiply: dimension mismatch");
    }
    return std::visit([&](const auto& x) -> Matrix { return x * m; }, storage_);
  }

  /// Retained rows as a dense matrix.
  Matrix to_dense() const {
    return std::visit([](const auto& x) -> Matrix { return Matrix(x); }, storage_);
  }

  /// Dense matrix in the caller's original row numbering, zero rows restored.
  Matrix to_dense_original() const {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(original_rows_),
                              static_cast<Eigen::Index>(cols_));
    const Matrix kept = to_dense();
    for (std::size_t r = 0; r < rows(); ++r) {
      out.row(static_cast<Eigen::Index>(index_map_[r])) = kept.row(static_cast<Eigen::Index>(r));
    }
    return out;
  }

 private:
  template <typename Storage>
  RowMatrix(Storage storage, std::vector<std::size_t> index_map, std::size_t original_rows)
      : storage_(std::move(storage)),
        index_map_(std::move(index_map)),
        cols_(static_cast<std::size_t>(std::get<Storage>(storage_).cols())),
        original_rows_(original_rows) {
    if (index_map_.empty()) {
      throw PreconditionError("RowMatrix: every row is zero");
    }
    if (cols_ == 0) {
      throw PreconditionError("RowMatrix: dimensions must be positive");
    }
    if (const auto* dense = std::get_if<RowMajorMatrix>(&storage_)) {
      if (!dense->allFinite()) {
        throw PreconditionError("RowMatrix: non-finite entry");
      }
      nnz_ = static_cast<std::size_t>((dense->array() != 0.0).count());
    } else {
      const auto& sparse = std::get<SparseRows>(storage_);
      for (std::int64_t k = 0; k < sparse.nonZeros(); ++k) {
        if (!std::isfinite(sparse.valuePtr()[k])) {
          throw PreconditionError("RowMatrix: non-finite entry");
        }
      }
      nnz_ = static_cast<std::size_t>(sparse.nonZeros());
    }
  }

  std::variant<RowMajorMatrix, SparseRows> storage_;
  std::vector<std::size_t> index_map_;
  std::size_t cols_ = 0;
  std::size_t original_rows_ = 0;
  std::size_t nnz_ = 0;
};

/// Real symmetric d x d matrix. Only the lower triangle of the input is read,
/// so entries(i, j) == entries(j, i) holds bit-for-bit.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(const Eigen::Ref<const Matrix>& m, bool psd = false) : psd_(psd) {
    if (m.rows() != m.cols()) {
      throw PreconditionError("SymMatrix: matrix is not square");
    }
    entries_ = m.triangularView<Eigen::Lower>();
    entries_.triangularView<Eigen::StrictlyUpper>() = entries_.transpose();
    if (!entries_.allFinite()) {
      throw PreconditionError("SymMatrix: non-finite entry");
    }
  }

  static SymMatrix identity(std::size_t d) {
    return SymMatrix(Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)),
                     true);
  }

  static SymMatrix zero(std::size_t d) {
    return SymMatrix(Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)), true);
  }

  std::size_t dim() const { return static_cast<std::size_t>(entries_.rows()); }
  const Matrix& dense() const { return entries_; }
  double operator()(std::size_t i, std::size_t j) const {
    return entries_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  bool psd() const { return psd_; }

  double tol_psd() const {
    if (entries_.size() == 0) {
      return 0.0;
    }
    return kTolPsdRelative * std::max(0.0, entries_.diagonal().maxCoeff());
  }

  /// I + this.
  SymMatrix plus_identity() const {
    return SymMatrix(entries_ + Matrix::Identity(entries_.rows(), entries_.cols()), psd_);
  }

 private:
  Matrix entries_;
  bool psd_ = false;
};

struct EigenDecomposition {
  /// Descending.
  Vector values;
  /// Column i pairs with values[i].
  Matrix vectors;
  /// Eigenvalues at or below this are treated as zero directions.
  double tol_psd = 0.0;

  std::size_t dim() const { return static_cast<std::size_t>(values.size()); }
};

inline EigenDecomposition eigh(const SymMatrix& m) {
  const Eigen::SelfAdjointEigenSolver<Matrix> solver(m.dense());
  if (solver.info() != Eigen::Success) {
    const double residual =
        (solver.eigenvectors() * solver.eigenvalues().asDiagonal() * solver.eigenvectors().transpose() -
         m.dense())
            .norm();
    std::ostringstream msg;
    msg << "eigh: symmetric eigensolver did not converge (residual " << residual << ")";
    throw LinalgError(msg.str());
  }
  EigenDecomposition out;
  out.tol_psd = m.tol_psd();
  const Eigen::Index d = m.dense().rows();
  out.values.resize(d);
  out.vectors.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    out.values[i] = solver.eigenvalues()[d - 1 - i];
    out.vectors.col(i) = solver.eigenvectors().col(d - 1 - i);
  }
  if (m.psd()) {
    for (Eigen::Index i = 0; i < d; ++i) {
      if (out.values[i] < -out.tol_psd) {
        std::ostringstream msg;
        msg << "eigh: matrix tagged PSD has eigenvalue " << out.values[i];
        throw LinalgError(msg.str());
      }
      out.values[i] = std::max(out.values[i], 0.0);
    }
  }
  return out;
}

/// Lower-triangular R with R R^T = M.
class CholeskyFactor {
 public:
  CholeskyFactor() = default;
  explicit CholeskyFactor(Matrix lower) : lower_(std::move(lower)) {}

  std::size_t dim() const { return static_cast<std::size_t>(lower_.rows()); }
  const Matrix& lower() const { return lower_; }

  double logdet() const { return 2.0 * lower_.diagonal().array().log().sum(); }

  /// M^{-1} b.
  Vector solve(const Eigen::Ref<const Vector>& b) const {
    Vector y = lower_.triangularView<Eigen::Lower>().solve(b);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  /// R^{-1} b, so that ||R^{-1} b||^2 = b^T M^{-1} b.
  Vector whiten(const Eigen::Ref<const Vector>& b) const {
    return lower_.triangularView<Eigen::Lower>().solve(b);
  }

 private:
  Matrix lower_;
};

inline CholeskyFactor cholesky(const SymMatrix& m) {
  const Eigen::LLT<Matrix> llt(m.dense());
  if (llt.info() != Eigen::Success) {
    throw LinalgError("cholesky: non-positive pivot, matrix is not positive definite");
  }
  Matrix lower = llt.matrixL();
  if ((lower.diagonal().array() <= 0.0).any()) {
    throw LinalgError("cholesky: non-positive pivot, matrix is not positive definite");
  }
  return CholeskyFactor(std::move(lower));
}

/// x^T M^{-1} x from a Cholesky factor of M; one triangular solve.
inline double quad_form(const Eigen::Ref<const Vector>& x, const CholeskyFactor& factor) {
  if (static_cast<std::size_t>(x.size()) != factor.dim()) {
    throw PreconditionError("quad_form: dimension mismatch");
  }
  return factor.whiten(x).squaredNorm();
}

/// log det(I + G) for a PSD G, by Cholesky.
inline double logdet_identity_plus(const Eigen::Ref<const Matrix>& g) {
  return cholesky(SymMatrix(g + Matrix::Identity(g.rows(), g.cols()), true)).logdet();
}

}  // namespace rdpp
