// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace moesim {

using ExpertId = int;

// Routing decisions for one batch: routing[layer][token].
using LayerRouting = std::vector<std::vector<ExpertId>>;

struct ModelShape {
  int num_layers = 1;
  int experts_per_layer = 2;
  int d_model = 2;
  int batch_size = 64;

  // Throws ConfigError unless L >= 1, E >= 2, d_model >= 2 and B >= 1.
  void validate() const;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// How token traffic is spread over experts when a trace is synthesized.
// hot_experts > 0 selects a balanced mode where every batch splits tokens
// evenly over that many experts; otherwise expert popularity is Zipf(skew).
struct Popularity {
  double skew = 1.0;
  int hot_experts = 0;

  friend bool operator==(const Popularity&, const Popularity&) = default;
};

struct TraceMeta {
  ModelShape shape;
  int num_batches = 0;
  Popularity popularity;
  std::uint64_t seed = 0;

  friend bool operator==(const TraceMeta&, const TraceMeta&) = default;
};

struct Batch {
  int index = 0;
  Eigen::MatrixXd embeddings;   // B x d_model, one row per token
  LayerRouting oracle_routing;  // L x B

  int size() const { return static_cast<int>(embeddings.rows()); }
};

bool operator==(const Batch& a, const Batch& b);

struct RoutingTrace {
  TraceMeta meta;
  std::vector<Batch> batches;

  const ModelShape& shape() const { return meta.shape; }

  // Throws ValidationError when a batch does not conform to the shape, an
  // oracle expert is out of range, or an embedding is not finite.
  void validate() const;

  friend bool operator==(const RoutingTrace&, const RoutingTrace&) = default;
};

}  // namespace moesim
