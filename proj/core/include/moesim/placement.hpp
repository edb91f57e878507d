// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-batch device placement. For each layer, in order:
//   1. experts resident but absent from the table are offloaded;
//   2. replicas above a demanded expert's cap are reclaimed, highest ordinal
//      first;
//   3. tokens are visited in position order. A token whose expert has no slot
//      loads replica 0; otherwise it reuses the next already-resident replica,
//      appends a new replica while the expert is under its cap, and past the
//      cap is assigned round-robin over the expert's replicas.
// Offloads precede loads so residency never exceeds capacity between events.
//
// When a layer's plan cannot fit (caps above capacity, or a demanded expert
// without a cap) the layer falls back to one replica per demanded expert. If
// even that exceeds capacity, experts time-share the C physical slots: the
// i-th expert in (resident first, then index) order runs on physical slot
// i mod C, swapping out the previous occupant.

#include <iosfwd>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "moesim/planner.hpp"
#include "moesim/predictor.hpp"
#include "moesim/router.hpp"

namespace moesim {

class DeviceState {
 public:
  DeviceState(int num_layers, int num_experts, int capacity);

  // Every expert resident once per layer (capacity = num_experts).
  static DeviceState all_resident(int num_layers, int num_experts);

  int num_layers() const { return static_cast<int>(resident_.size()); }
  int num_experts() const { return num_experts_; }
  int capacity() const { return capacity_; }

  // expert -> replica count; replicas of an expert hold ordinals 0..n-1.
  const std::map<ExpertId, int>& resident(int layer) const { return resident_.at(layer); }
  std::map<ExpertId, int>& resident(int layer) { return resident_.at(layer); }
  int replicas(int layer, ExpertId expert) const;
  int resident_slots(int layer) const;
  std::vector<ExpertId> host_experts(int layer) const;

  friend bool operator==(const DeviceState&, const DeviceState&) = default;

 private:
  int num_experts_;
  int capacity_;
  std::vector<std::map<ExpertId, int>> resident_;
};

enum class TransferKind { load, replicate, offload };

std::string_view to_string(TransferKind kind);

// ordinal is the replica affected. A whole-expert offload carries ordinal 0
// and frees every remaining replica of that expert.
struct TransferEvent {
  TransferKind kind = TransferKind::load;
  int layer = 0;
  ExpertId expert = 0;
  int ordinal = 0;

  friend bool operator==(const TransferEvent&, const TransferEvent&) = default;
};

struct TransferLog {
  std::vector<TransferEvent> events;
  std::vector<int> fallback_layers;

  void append(const TransferLog& other);
  std::span<const TransferEvent> layer_events(int layer) const;

  friend bool operator==(const TransferLog&, const TransferLog&) = default;
};

// CSV columns: sequence,event,layer,expert,ordinal. Fallback layers are listed
// as "fallback" rows with expert and ordinal -1.
void write_transfer_csv(const TransferLog& log, std::ostream& out);

struct LayerPlacement {
  PlacementLayer placement;
  TransferLog log;
};

struct BatchPlacement {
  Placement placement;
  TransferLog log;
};

LayerPlacement apply_layer(DeviceState& state, const HashTable& table, const ReplicaPlan& plan, int layer);
BatchPlacement apply_batch(DeviceState& state, const HashTable& table, const ReplicaPlan& plan);

}  // namespace moesim
