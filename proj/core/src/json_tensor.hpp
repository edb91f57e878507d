// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "moesim/error.hpp"

namespace moesim::detail {

// Matrices are stored row-major as {"rows", "cols", "data"}.
inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) throw NumericError("refusing to serialize a non-finite tensor");
  nlohmann::json data = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& what) {
  try {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (rows < 0 || cols < 0 || !data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw ParseError(what + ": tensor size does not match rows x cols", 0);
    }
    Eigen::MatrixXd m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + ": " + e.what(), 0);
  }
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j, const std::string& what) {
  Eigen::MatrixXd m = matrix_from_json(j, what);
  if (m.cols() != 1) throw ParseError(what + ": expected a column vector", 0);
  return m.col(0);
}

}  // namespace moesim::detail
