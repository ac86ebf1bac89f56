#include "fence/dataset.hpp"

#include <cmath>
#include <string>

#include "fence/error.hpp"

namespace fence {

FunctionalDataset::FunctionalDataset(int n, int p)
    : n_(n), p_(p), curves_(static_cast<std::size_t>(n > 0 && p > 0 ? n * p : 0)) {
  if (n < 0 || p < 0) throw InvalidConfiguration("dataset dimensions must be non-negative");
}

std::size_t FunctionalDataset::total_points() const {
  std::size_t total = 0;
  for (const auto& c : curves_) total += c.t.size();
  return total;
}

void FunctionalDataset::validate() const {
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < p_; ++j) {
      const Curve& c = curve(i, j);
      if (c.t.size() != c.x.size()) {
        throw DomainError("curve (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) +
                          ") has mismatched location/value counts");
      }
      for (std::size_t u = 0; u < c.t.size(); ++u) {
        if (!(c.t[u] >= 0.0 && c.t[u] <= 1.0)) {
          throw DomainError("curve (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) +
                            ") has location outside [0, 1]");
        }
        if (!std::isfinite(c.x[u])) {
          throw DomainError("curve (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) +
                            ") has a non-finite value");
        }
      }
    }
  }
}

}  // namespace fence
