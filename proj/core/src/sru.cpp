// SPDX-License-Identifier: Apache-2.0
#include "moesim/sru.hpp"

#include <cmath>
#include <string>

#include "moesim/error.hpp"

namespace moesim {

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

namespace {

void check_layer(const SruLayerParams& p, Eigen::Index width) {
  const bool ok = p.w.rows() == width && p.w.cols() == width && p.w_f.rows() == width && p.w_f.cols() == width &&
                  p.w_r.rows() == width && p.w_r.cols() == width && p.b_f.size() == width && p.b_r.size() == width;
  if (!ok) throw ConfigError("SRU layer parameters do not match width " + std::to_string(width));
}

}  // namespace

SruStep sru_cell(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& c_prev,
                 const SruLayerParams& layer) {
  check_layer(layer, x.size());
  if (c_prev.size() != x.size()) throw ConfigError("SRU cell state width mismatch");

  const Eigen::VectorXd x_proj = layer.w * x;
  const Eigen::VectorXd f = (layer.w_f * x + layer.b_f).unaryExpr(&sigmoid);
  const Eigen::VectorXd r = (layer.w_r * x + layer.b_r).unaryExpr(&sigmoid);

  SruStep out;
  out.c = f.cwiseProduct(c_prev) + (1.0 - f.array()).matrix().cwiseProduct(x_proj);
  out.h = r.cwiseProduct(out.c.array().tanh().matrix()) + (1.0 - r.array()).matrix().cwiseProduct(x);
  if (!out.c.allFinite() || !out.h.allFinite()) throw NumericError("SRU cell produced a non-finite value");
  return out;
}

Eigen::MatrixXd sru_forward(const Eigen::MatrixXd& x, const std::vector<SruLayerParams>& layers,
                            SruState* final_state) {
  if (x.rows() == 0) throw ConfigError("sru_forward needs at least one token");
  if (final_state) final_state->c.clear();

  Eigen::MatrixXd input = x;
  const Eigen::Index width = x.cols();
  for (const SruLayerParams& layer : layers) {
    check_layer(layer, width);
    const Eigen::MatrixXd proj = input * layer.w.transpose();
    const Eigen::MatrixXd f = ((input * layer.w_f.transpose()).rowwise() + layer.b_f.transpose()).unaryExpr(&sigmoid);
    const Eigen::MatrixXd r = ((input * layer.w_r.transpose()).rowwise() + layer.b_r.transpose()).unaryExpr(&sigmoid);

    Eigen::MatrixXd hidden(input.rows(), width);
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(width);
    for (Eigen::Index t = 0; t < input.rows(); ++t) {
      c = f.row(t).cwiseProduct(c) + (1.0 - f.row(t).array()).matrix().cwiseProduct(proj.row(t));
      hidden.row(t) = r.row(t).cwiseProduct(c.array().tanh().matrix()) +
                      (1.0 - r.row(t).array()).matrix().cwiseProduct(input.row(t));
    }
    if (!hidden.allFinite()) throw NumericError("SRU stack produced a non-finite value");
    if (final_state) final_state->c.push_back(c.transpose());
    input = std::move(hidden);
  }
  return input;
}

}  // namespace moesim
