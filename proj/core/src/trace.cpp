// SPDX-License-Identifier: Apache-2.0
#include "moesim/trace.hpp"

#include <string>

#include "moesim/error.hpp"

namespace moesim {

void ModelShape::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (experts_per_layer < 2) throw ConfigError("experts_per_layer must be >= 2");
  if (d_model < 2) throw ConfigError("d_model must be >= 2");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

bool operator==(const Batch& a, const Batch& b) {
  if (a.index != b.index || a.oracle_routing != b.oracle_routing) return false;
  if (a.embeddings.rows() != b.embeddings.rows() || a.embeddings.cols() != b.embeddings.cols()) {
    return false;
  }
  return (a.embeddings.array() == b.embeddings.array()).all();
}

void RoutingTrace::validate() const {
  meta.shape.validate();
  if (batches.empty()) throw ValidationError("trace has no batches");
  if (static_cast<int>(batches.size()) != meta.num_batches) {
    throw ValidationError("trace declares " + std::to_string(meta.num_batches) + " batches but holds " +
                          std::to_string(batches.size()));
  }
  const auto& s = meta.shape;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Batch& b = batches[i];
    const std::string where = "batch " + std::to_string(i);
    if (b.index != static_cast<int>(i)) throw ValidationError(where + ": out-of-order batch index");
    if (b.embeddings.rows() != s.batch_size || b.embeddings.cols() != s.d_model) {
      throw ValidationError(where + ": embedding matrix does not match shape");
    }
    if (!b.embeddings.allFinite()) throw ValidationError(where + ": non-finite embedding");
    if (static_cast<int>(b.oracle_routing.size()) != s.num_layers) {
      throw ValidationError(where + ": routing layer count does not match shape");
    }
    for (const auto& row : b.oracle_routing) {
      if (static_cast<int>(row.size()) != s.batch_size) {
        throw ValidationError(where + ": routing row length does not match batch size");
      }
      for (ExpertId e : row) {
        if (e < 0 || e >= s.experts_per_layer) {
          throw ValidationError(where + ": expert index " + std::to_string(e) + " outside [0, " +
                                std::to_string(s.experts_per_layer) + ")");
        }
      }
    }
  }
}

}  // namespace moesim
