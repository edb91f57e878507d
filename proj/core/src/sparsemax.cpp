// SPDX-License-Identifier: Apache-2.0
#include "moesim/sparsemax.hpp"

#include <algorithm>
#include <functional>
#include <vector>

#include "moesim/error.hpp"

namespace moesim {

Eigen::VectorXd sparsemax(const Eigen::Ref<const Eigen::VectorXd>& z) {
  if (z.size() == 0) throw ConfigError("sparsemax of an empty vector");
  if (!z.allFinite()) throw NumericError("sparsemax input is not finite");

  std::vector<double> sorted(z.data(), z.data() + z.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  // Support size k is the largest k with 1 + k * z_(k) > sum_{i<=k} z_(i).
  double cumsum = 0.0;
  double support_sum = 0.0;
  std::size_t support = 0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumsum += sorted[k];
    if (1.0 + static_cast<double>(k + 1) * sorted[k] > cumsum) {
      support = k + 1;
      support_sum = cumsum;
    }
  }
  const double tau = (support_sum - 1.0) / static_cast<double>(support);
  return (z.array() - tau).cwiseMax(0.0).matrix();
}

int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) throw ConfigError("argmax of an empty vector");
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace moesim
