// SPDX-License-Identifier: Apache-2.0
#pragma once

// A miniature Switch-style MoE stack used as ground truth. Each layer routes a
// token top-1 through a bias-free linear router, applies the chosen expert's
// FFN (down * relu(up * x)), and adds the result residually before the next
// layer routes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "moesim/trace.hpp"

namespace moesim {

struct ExpertWeights {
  Eigen::MatrixXd up;    // d_ff x d_model
  Eigen::MatrixXd down;  // d_model x d_ff
};

struct ToyMoeParams {
  int d_model = 0;
  int d_ff = 0;
  std::vector<Eigen::MatrixXd> router;               // per layer, E x d_model
  std::vector<std::vector<ExpertWeights>> experts;   // [layer][expert]

  int num_layers() const { return static_cast<int>(router.size()); }
  int num_experts() const { return router.empty() ? 0 : static_cast<int>(router.front().rows()); }

  void validate() const;
};

bool operator==(const ToyMoeParams& a, const ToyMoeParams& b);

// Deterministic toy model for a shape. Layer-0 router rows are random unit
// centroids; router l holds the same centroids under a seeded row permutation,
// so routing at layer l is a fixed relabelling of layer-0 routing. Expert
// outputs are small relative to router margins. d_ff = 0 selects 2 * d_model.
ToyMoeParams make_toy_model(const ModelShape& shape, std::uint64_t seed, int d_ff = 0);

// Argmax of router logits; ties resolve to the lowest expert index.
ExpertId route_top1(int layer, const Eigen::Ref<const Eigen::VectorXd>& x, const ToyMoeParams& params);

// Difference between the best and second-best router logit.
double route_margin(int layer, const Eigen::Ref<const Eigen::VectorXd>& x, const ToyMoeParams& params);

Eigen::VectorXd expert_forward(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::MatrixXd& up,
                               const Eigen::MatrixXd& down);

// One resident copy of an expert's weights.
struct SlotRef {
  ExpertId expert = 0;
  int ordinal = 0;

  friend auto operator<=>(const SlotRef&, const SlotRef&) = default;
};

// Token-to-slot assignment for one layer. `slots` are logical slots; each maps
// onto a physical device slot. Physical slots are shared only when a layer had
// to fall back to time-sharing (more distinct experts than capacity).
struct PlacementLayer {
  std::vector<SlotRef> slots;
  std::vector<int> physical_slot;  // per logical slot
  std::vector<int> token_slot;     // per token, index into `slots`
  bool fallback = false;

  int physical_count() const;

  friend bool operator==(const PlacementLayer&, const PlacementLayer&) = default;
};

struct Placement {
  std::vector<PlacementLayer> layers;

  friend bool operator==(const Placement&, const Placement&) = default;
};

struct DenseBaseline {};
inline constexpr DenseBaseline dense_baseline{};

// Baseline forward: every expert resident, routing via route_top1.
Eigen::MatrixXd moe_forward(const Batch& batch, const ToyMoeParams& params, DenseBaseline);

// Forward through materialized replica copies. Each token runs on the expert
// held by its assigned slot. Throws PlacementError for unknown slots.
Eigen::MatrixXd moe_forward(const Batch& batch, const ToyMoeParams& params, const Placement& placement);

// Routing the baseline forward actually takes, layer by layer (L x B).
LayerRouting route_batch(const Eigen::MatrixXd& embeddings, const ToyMoeParams& params);

void write_toy_model(const ToyMoeParams& params, std::ostream& out);
void write_toy_model(const ToyMoeParams& params, const std::filesystem::path& path);
ToyMoeParams read_toy_model(std::istream& in);
ToyMoeParams read_toy_model(const std::filesystem::path& path);

}  // namespace moesim
