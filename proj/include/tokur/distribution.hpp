#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tokur/errors.hpp"

namespace tokur {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Probability vector over the vocabulary for one decoding position.
struct DistributionVector {
  std::vector<double> p;

  DistributionVector() = default;
  explicit DistributionVector(std::vector<double> probs) : p(std::move(probs)) {}

  int size() const { return static_cast<int>(p.size()); }
  double operator[](int i) const { return p[static_cast<size_t>(i)]; }

  // Entrywise >= 0, finite, sums to 1 within 1e-12.
  void validate() const {
    double sum = 0.0;
    for (double x : p) {
      if (!std::isfinite(x) || x < 0.0)
        throw_invalid("DistributionVector: negative or non-finite entry");
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw_invalid("DistributionVector: entries do not sum to 1");
  }
};

}  // namespace tokur
