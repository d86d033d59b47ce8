#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "rdpp/error.hpp"
#include "rdpp/rng.hpp"

namespace rdpp {

/// Walker/Vose alias table: O(n) build, O(1) draw.
class AliasTable {
 public:
  AliasTable() = default;

  explicit AliasTable(std::span<const double> weights) {
    const std::size_t n = weights.size();
    if (n == 0) {
      throw PreconditionError("AliasTable: no weights");
    }
    double total = 0.0;
    for (const double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw PreconditionError("AliasTable: weights must be finite and non-negative");
      }
      total += w;
    }
    if (!(total > 0.0)) {
      throw PreconditionError("AliasTable: weights sum to zero");
    }

    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    std::vector<std::size_t> small;
    std::vector<std::size_t> large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = weights[i] * static_cast<double>(n) / total;
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back();
      small.pop_back();
      const std::size_t l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    // Leftovers carry probability 1 up to rounding.
    for (const std::size_t i : large) {
      prob_[i] = 1.0;
      alias_[i] = i;
    }
    for (const std::size_t i : small) {
      prob_[i] = 1.0;
      alias_[i] = i;
    }
  }

  std::size_t size() const { return prob_.size(); }

  std::size_t sample(Rng& rng) const {
    const std::size_t column = static_cast<std::size_t>(rng.below(prob_.size()));
    return rng.uniform() < prob_[column] ? column : alias_[column];
  }

  /// Probability the table assigns to index i (reconstructed from the columns).
  std::vector<double> probabilities() const {
    const std::size_t n = prob_.size();
    std::vector<double> p(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      p[c] += prob_[c] / static_cast<double>(n);
      p[alias_[c]] += (1.0 - prob_[c]) / static_cast<double>(n);
    }
    return p;
  }

 private:
  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
};

}  // namespace rdpp
