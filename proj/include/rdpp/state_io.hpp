#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "rdpp/error.hpp"
#include "rdpp/preprocessing.hpp"

namespace rdpp {

// Layout, all little-endian:
//   "RDPP" | version u8 = 1
//   n u64 | d u64 | q u64 | s_tilde f64 | eta f64 | logdet(I+A) f64
//   A row-major (d*d f64) | l_tilde (n f64) | index_map (n u64)
inline constexpr std::array<char, 4> kStateMagic{'R', 'D', 'P', 'P'};
inline constexpr std::uint8_t kStateVersion = 1;

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (std::size_t i = 0; i < 8; ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFU);
  }
  out.write(bytes.data(), bytes.size());
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw FormatError("state file: truncated");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  }
  return v;
}

inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace detail

inline void write_state(const PreprocessedState& state, std::ostream& out) {
  out.write(kStateMagic.data(), kStateMagic.size());
  out.put(static_cast<char>(kStateVersion));
  detail::put_u64(out, state.n());
  detail::put_u64(out, state.d());
  detail::put_u64(out, state.q());
  detail::put_f64(out, state.s_tilde());
  detail::put_f64(out, state.eta());
  detail::put_f64(out, state.logdet_identity_plus_A());
  for (std::size_t i = 0; i < state.d(); ++i) {
    for (std::size_t j = 0; j < state.d(); ++j) {
      detail::put_f64(out, state.A()(i, j));
    }
  }
  for (const double v : state.l_tilde()) {
    detail::put_f64(out, v);
  }
  for (const std::size_t v : state.index_map()) {
    detail::put_u64(out, v);
  }
  if (!out) {
    throw FormatError("state file: write failed");
  }
}

/// Reads and re-derives a state. The factorization, s_tilde and q are
/// recomputed from A and checked against the header.
inline PreprocessedState read_state(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kStateMagic) {
    throw FormatError("state file: bad magic (expected RDPP)");
  }
  const int version = in.get();
  if (version != kStateVersion) {
    throw FormatError("state file: unsupported version " + std::to_string(version));
  }
  const std::uint64_t n = detail::get_u64(in);
  const std::uint64_t d = detail::get_u64(in);
  const std::uint64_t q = detail::get_u64(in);
  const double s_tilde = detail::get_f64(in);
  const double eta = detail::get_f64(in);
  const double logdet = detail::get_f64(in);
  constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 40;
  if (n == 0 || d == 0 || n > kMaxDim || d > (std::uint64_t{1} << 20)) {
    throw FormatError("state file: implausible dimensions");
  }

  Matrix a(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      a(i, j) = detail::get_f64(in);
    }
  }
  std::vector<double> l_tilde(n);
  for (double& v : l_tilde) {
    v = detail::get_f64(in);
  }
  std::vector<std::size_t> index_map(n);
  for (std::size_t& v : index_map) {
    v = static_cast<std::size_t>(detail::get_u64(in));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("state file: trailing bytes after index map");
  }

  const Mode mode = eta > 0.0 ? Mode::sketched : Mode::exact;
  PreprocessedState state =
      PreprocessedState::assemble(SymMatrix(a, true), std::move(l_tilde), std::move(index_map), eta, mode);
  if (state.q() != q || std::abs(state.s_tilde() - s_tilde) > 1e-9 * std::max(1.0, s_tilde) ||
      std::abs(state.logdet_identity_plus_A() - logdet) > 1e-9 * std::max(1.0, std::abs(logdet))) {
    throw FormatError("state file: header does not match the stored matrix");
  }
  return state;
}

inline void save_state(const PreprocessedState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw FormatError("cannot open '" + path.string() + "' for writing");
  }
  write_state(state, out);
}

inline PreprocessedState load_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open '" + path.string() + "'");
  }
  return read_state(in);
}

}  // namespace rdpp
