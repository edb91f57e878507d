// SPDX-License-Identifier: Apache-2.0
#pragma once

// Simple Recurrent Unit. For input x_t and previous cell c_{t-1}:
//   x'_t = W x_t
//   f_t  = sigmoid(W_f x_t + b_f)
//   r_t  = sigmoid(W_r x_t + b_r)
//   c_t  = f_t * c_{t-1} + (1 - f_t) * x'_t
//   h_t  = r_t * tanh(c_t) + (1 - r_t) * x_t
// Only the elementwise cell update is sequential; the three projections can be
// computed for the whole sequence at once, which sru_forward does.

#include <vector>

#include <Eigen/Dense>

namespace moesim {

struct SruLayerParams {
  Eigen::MatrixXd w;    // d x d
  Eigen::MatrixXd w_f;  // d x d
  Eigen::MatrixXd w_r;  // d x d
  Eigen::VectorXd b_f;
  Eigen::VectorXd b_r;

  int width() const { return static_cast<int>(w.rows()); }
};

struct SruStep {
  Eigen::VectorXd h;
  Eigen::VectorXd c;
};

// Cell state per SRU layer.
struct SruState {
  std::vector<Eigen::VectorXd> c;
};

double sigmoid(double a);

// One time step. Throws NumericError if any output is non-finite.
SruStep sru_cell(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& c_prev,
                 const SruLayerParams& layer);

// Runs the stack over a token sequence (rows of `x`, in position order).
// Layer k+1 consumes layer k's hidden sequence; every layer starts from c = 0.
// Returns the top layer's hidden sequence; `final_state` receives the last
// cell state of each layer when non-null.
Eigen::MatrixXd sru_forward(const Eigen::MatrixXd& x, const std::vector<SruLayerParams>& layers,
                            SruState* final_state = nullptr);

}  // namespace moesim
