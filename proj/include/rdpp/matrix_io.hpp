#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rdpp/error.hpp"
#include "rdpp/linalg.hpp"

namespace rdpp {

namespace detail {

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline bool next_data_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '%') {
      continue;
    }
    return true;
  }
  return false;
}

}  // namespace detail

/// Reads a Matrix Market file holding a real (or integer) general matrix, in
/// either coordinate or array layout.
inline RowMatrix read_matrix_market(std::istream& in, const StorageOptions& options = {}) {
  std::string banner;
  if (!std::getline(in, banner)) {
    throw FormatError("matrix market: empty input");
  }
  std::istringstream head(banner);
  std::string tag, object, layout, field, symmetry;
  head >> tag >> object >> layout >> field >> symmetry;
  if (tag != "%%MatrixMarket" || detail::lowercase(object) != "matrix") {
    throw FormatError("matrix market: missing %%MatrixMarket matrix banner");
  }
  layout = detail::lowercase(layout);
  field = detail::lowercase(field);
  symmetry = detail::lowercase(symmetry);
  if (field != "real" && field != "integer" && field != "double") {
    throw FormatError("matrix market: unsupported field '" + field + "'");
  }
  if (symmetry != "general") {
    throw FormatError("matrix market: only general matrices are supported");
  }

  std::string line;
  if (!detail::next_data_line(in, line)) {
    throw FormatError("matrix market: missing size line");
  }
  std::istringstream size_line(line);
  long long n = 0, d = 0, count = 0;
  if (layout == "coordinate") {
    if (!(size_line >> n >> d >> count)) {
      throw FormatError("matrix market: malformed size line");
    }
  } else if (layout == "array") {
    if (!(size_line >> n >> d)) {
      throw FormatError("matrix market: malformed size line");
    }
    count = n * d;
  } else {
    throw FormatError("matrix market: unknown layout '" + layout + "'");
  }
  if (n <= 0 || d <= 0 || count < 0) {
    throw FormatError("matrix market: dimensions must be positive");
  }

  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(count));
  for (long long k = 0; k < count; ++k) {
    if (!detail::next_data_line(in, line)) {
      throw FormatError("matrix market: expected " + std::to_string(count) + " entries, got " +
                        std::to_string(k));
    }
    std::istringstream entry(line);
    if (layout == "coordinate") {
      long long i = 0, j = 0;
      double v = 0.0;
      if (!(entry >> i >> j >> v) || i < 1 || j < 1 || i > n || j > d) {
        throw FormatError("matrix market: malformed entry '" + line + "'");
      }
      entries.push_back({static_cast<std::size_t>(i - 1), static_cast<std::size_t>(j - 1), v});
    } else {
      double v = 0.0;
      if (!(entry >> v)) {
        throw FormatError("matrix market: malformed value '" + line + "'");
      }
      // column-major
      entries.push_back({static_cast<std::size_t>(k % n), static_cast<std::size_t>(k / n), v});
    }
  }
  return RowMatrix::from_triplets(static_cast<std::size_t>(n), static_cast<std::size_t>(d), entries,
                                  options);
}

/// Writes in the caller's original row numbering (dropped zero rows reappear):
/// coordinate layout for sparse storage, array layout for dense.
inline void write_matrix_market(const RowMatrix& x, std::ostream& out) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  if (x.is_sparse()) {
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << x.original_rows() << ' ' << x.cols() << ' ' << x.nnz() << '\n';
    for (std::size_t i = 0; i < x.rows(); ++i) {
      x.for_each_nonzero(i, [&](std::size_t j, double v) {
        out << x.original_index(i) + 1 << ' ' << j + 1 << ' ' << v << '\n';
      });
    }
    return;
  }
  out << "%%MatrixMarket matrix array real general\n";
  out << x.original_rows() << ' ' << x.cols() << '\n';
  const Matrix full = x.to_dense_original();
  for (Eigen::Index j = 0; j < full.cols(); ++j) {
    for (Eigen::Index i = 0; i < full.rows(); ++i) {
      out << full(i, j) << '\n';
    }
  }
}

/// One row per line, comma separated. Blank lines and lines starting with '#' are skipped.
inline RowMatrix read_csv(std::istream& in, const StorageOptions& options = {}) {
  std::vector<Triplet> entries;
  std::string line;
  std::size_t n = 0;
  std::size_t d = 0;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') {
      continue;
    }
    std::istringstream cells(line);
    std::string cell;
    std::size_t j = 0;
    while (std::getline(cells, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw FormatError("csv: bad number '" + cell + "' on row " + std::to_string(n + 1));
      }
      if (cell.find_first_not_of(" \t\r", used) != std::string::npos) {
        throw FormatError("csv: bad number '" + cell + "' on row " + std::to_string(n + 1));
      }
      if (v != 0.0) {
        entries.push_back({n, j, v});
      }
      ++j;
    }
    if (n == 0) {
      d = j;
    } else if (j != d) {
      throw FormatError("csv: row " + std::to_string(n + 1) + " has " + std::to_string(j) +
                        " columns, expected " + std::to_string(d));
    }
    ++n;
  }
  if (n == 0 || d == 0) {
    throw FormatError("csv: no data");
  }
  return RowMatrix::from_triplets(n, d, entries, options);
}

inline void write_csv(const RowMatrix& x, std::ostream& out) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  const Matrix full = x.to_dense_original();
  for (Eigen::Index i = 0; i < full.rows(); ++i) {
    for (Eigen::Index j = 0; j < full.cols(); ++j) {
      out << (j ? "," : "") << full(i, j);
    }
    out << '\n';
  }
}

/// Dispatches on extension: ".mtx" is Matrix Market, anything else CSV.
inline RowMatrix read_matrix(const std::filesystem::path& path, const StorageOptions& options = {}) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("cannot open '" + path.string() + "'");
  }
  if (detail::lowercase(path.extension().string()) == ".mtx") {
    return read_matrix_market(in, options);
  }
  return read_csv(in, options);
}

}  // namespace rdpp
