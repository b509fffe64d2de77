#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <vector>

namespace ppscm {

/// Threshold theta with sum_i max(v_i - theta, 0) == total (total > 0).
inline double simplex_threshold(const Eigen::Ref<const Eigen::VectorXd>& v, double total) {
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double running = 0;
  double theta = sorted.front() - total;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    running += sorted[k];
    const double candidate = (running - total) / static_cast<double>(k + 1);
    if (sorted[k] - candidate > 0) theta = candidate;
  }
  return theta;
}

/// Euclidean projection onto {w >= 0, sum w = total}.
inline Eigen::VectorXd project_simplex(const Eigen::Ref<const Eigen::VectorXd>& v,
                                       double total = 1.0) {
  const double theta = simplex_threshold(v, total);
  return (v.array() - theta).max(0.0).matrix();
}

}  // namespace ppscm
