#pragma once

#include <cstddef>
#include <vector>

namespace fence {

/// Discrete noisy measurements of one random function.
struct Curve {
  std::vector<double> t;  ///< locations in [0, 1]
  std::vector<double> x;  ///< measured values, same length as t
};

/// n replicates of p functional variables, each on its own (possibly irregular) grid.
class FunctionalDataset {
public:
  FunctionalDataset() = default;
  FunctionalDataset(int n, int p);

  int n() const { return n_; }
  int p() const { return p_; }
  Curve& curve(int i, int j) { return curves_[static_cast<std::size_t>(i * p_ + j)]; }
  const Curve& curve(int i, int j) const { return curves_[static_cast<std::size_t>(i * p_ + j)]; }
  std::size_t total_points() const;

  /// Throws DomainError on a location outside [0, 1] or mismatched t/x lengths.
  void validate() const;

private:
  int n_ = 0;
  int p_ = 0;
  std::vector<Curve> curves_;
};

}  // namespace fence
