// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

namespace moesim {

// Euclidean projection of `z` onto the probability simplex, computed with the
// sorted-threshold method. Throws NumericError on non-finite input.
Eigen::VectorXd sparsemax(const Eigen::Ref<const Eigen::VectorXd>& z);

// Index of the largest entry; ties go to the lowest index.
int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v);

}  // namespace moesim
