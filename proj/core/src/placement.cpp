// SPDX-License-Identifier: Apache-2.0
#include "moesim/placement.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>

#include "moesim/error.hpp"

namespace moesim {

DeviceState::DeviceState(int num_layers, int num_experts, int capacity)
    : num_experts_(num_experts), capacity_(capacity), resident_(num_layers) {
  if (num_layers < 1 || num_experts < 1) throw ConfigError("device needs at least one layer and one expert");
  if (capacity < 1) throw ConfigError("capacity must be >= 1");
}

DeviceState DeviceState::all_resident(int num_layers, int num_experts) {
  DeviceState state(num_layers, num_experts, num_experts);
  for (auto& layer : state.resident_)
    for (ExpertId e = 0; e < num_experts; ++e) layer[e] = 1;
  return state;
}

int DeviceState::replicas(int layer, ExpertId expert) const {
  const auto& m = resident_.at(layer);
  auto it = m.find(expert);
  return it == m.end() ? 0 : it->second;
}

int DeviceState::resident_slots(int layer) const {
  const auto& m = resident_.at(layer);
  return std::accumulate(m.begin(), m.end(), 0, [](int acc, const auto& kv) { return acc + kv.second; });
}

std::vector<ExpertId> DeviceState::host_experts(int layer) const {
  std::vector<ExpertId> host;
  for (ExpertId e = 0; e < num_experts_; ++e) {
    if (!resident_.at(layer).contains(e)) host.push_back(e);
  }
  return host;
}

std::string_view to_string(TransferKind kind) {
  switch (kind) {
    case TransferKind::load:
      return "load";
    case TransferKind::replicate:
      return "replicate";
    case TransferKind::offload:
      return "offload";
  }
  return "unknown";
}

void TransferLog::append(const TransferLog& other) {
  events.insert(events.end(), other.events.begin(), other.events.end());
  fallback_layers.insert(fallback_layers.end(), other.fallback_layers.begin(), other.fallback_layers.end());
}

std::span<const TransferEvent> TransferLog::layer_events(int layer) const {
  auto first = std::find_if(events.begin(), events.end(), [&](const TransferEvent& e) { return e.layer == layer; });
  auto last = std::find_if(first, events.end(), [&](const TransferEvent& e) { return e.layer != layer; });
  return {first, last};
}

void write_transfer_csv(const TransferLog& log, std::ostream& out) {
  out << "sequence,event,layer,expert,ordinal\n";
  std::size_t seq = 0;
  for (const TransferEvent& e : log.events) {
    out << seq++ << ',' << to_string(e.kind) << ',' << e.layer << ',' << e.expert << ',' << e.ordinal << '\n';
  }
  for (int layer : log.fallback_layers) out << seq++ << ",fallback," << layer << ",-1,-1\n";
}

namespace {

void check_inputs(const DeviceState& state, const HashTable& table, const ReplicaPlan& plan, int layer) {
  if (layer < 0 || layer >= state.num_layers()) throw ConfigError("layer " + std::to_string(layer) + " outside device");
  if (table.num_layers() != state.num_layers()) throw ConfigError("hash table layer count does not match device");
  if (static_cast<int>(plan.caps.size()) != state.num_layers()) {
    throw ConfigError("replica plan layer count does not match device");
  }
  for (ExpertId e : table.assignment[layer]) {
    if (e < 0 || e >= state.num_experts()) {
      throw ValidationError("layer " + std::to_string(layer) + ": expert " + std::to_string(e) + " out of range");
    }
  }
}

}  // namespace

LayerPlacement apply_layer(DeviceState& state, const HashTable& table, const ReplicaPlan& plan, int layer) {
  check_inputs(state, table, plan, layer);
  const std::vector<ExpertId>& row = table.assignment[layer];
  const DemandMap demand = demand_counts(table, layer);
  const int capacity = state.capacity();

  bool feasible = true;
  long long planned = 0;
  std::map<ExpertId, int> limits;
  for (const auto& [e, d] : demand) {
    const int cap = plan.cap(layer, e);
    if (cap < 1) feasible = false;
    planned += cap;
    limits[e] = cap;
  }
  if (planned > capacity) feasible = false;
  if (!feasible) {
    for (auto& [e, cap] : limits) cap = 1;
  }
  const bool time_share = !feasible && static_cast<int>(demand.size()) > capacity;

  LayerPlacement out;
  TransferLog& log = out.log;
  PlacementLayer& placed = out.placement;
  auto& resident = state.resident(layer);
  if (!feasible) log.fallback_layers.push_back(layer);

  for (auto it = resident.begin(); it != resident.end();) {
    if (!demand.contains(it->first)) {
      log.events.push_back({TransferKind::offload, layer, it->first, 0});
      it = resident.erase(it);
    } else {
      ++it;
    }
  }
  for (auto& [e, n] : resident) {
    while (n > limits.at(e)) {
      --n;
      log.events.push_back({TransferKind::offload, layer, e, n});
    }
  }

  if (!time_share) {
    std::map<ExpertId, int> seen;
    std::vector<SlotRef> token_ref(row.size());
    for (std::size_t s = 0; s < row.size(); ++s) {
      const ExpertId e = row[s];
      const int k = seen[e]++;
      const int n = state.replicas(layer, e);
      int ordinal = 0;
      if (k < n) {
        ordinal = k;
      } else if (n < limits.at(e)) {
        ordinal = n;
        log.events.push_back({n == 0 ? TransferKind::load : TransferKind::replicate, layer, e, n});
        resident[e] = n + 1;
      } else {
        ordinal = k % n;
      }
      token_ref[s] = {e, ordinal};
    }
    std::map<SlotRef, int> index;
    for (const auto& [e, n] : resident) {
      for (int o = 0; o < n; ++o) {
        index[{e, o}] = static_cast<int>(placed.slots.size());
        placed.slots.push_back({e, o});
      }
    }
    placed.physical_slot.resize(placed.slots.size());
    std::iota(placed.physical_slot.begin(), placed.physical_slot.end(), 0);
    placed.token_slot.reserve(row.size());
    for (const SlotRef& ref : token_ref) placed.token_slot.push_back(index.at(ref));
    placed.fallback = !feasible;
    return out;
  }

  // Time-sharing: resident demanded experts first, then the rest by index.
  std::vector<ExpertId> order;
  for (const auto& [e, n] : resident) order.push_back(e);
  const std::size_t already = order.size();
  for (const auto& [e, d] : demand) {
    if (!resident.contains(e)) order.push_back(e);
  }
  std::vector<ExpertId> occupant(capacity, -1);
  std::map<ExpertId, int> position;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const ExpertId e = order[i];
    const int p = static_cast<int>(i % capacity);
    position[e] = static_cast<int>(i);
    if (i >= already) {
      if (occupant[p] >= 0) {
        log.events.push_back({TransferKind::offload, layer, occupant[p], 0});
        resident.erase(occupant[p]);
      }
      log.events.push_back({TransferKind::load, layer, e, 0});
      resident[e] = 1;
    }
    occupant[p] = e;
    placed.slots.push_back({e, 0});
    placed.physical_slot.push_back(p);
  }
  placed.token_slot.reserve(row.size());
  for (ExpertId e : row) placed.token_slot.push_back(position.at(e));
  placed.fallback = true;
  return out;
}

BatchPlacement apply_batch(DeviceState& state, const HashTable& table, const ReplicaPlan& plan) {
  BatchPlacement out;
  for (int l = 0; l < state.num_layers(); ++l) {
    LayerPlacement lp = apply_layer(state, table, plan, l);
    out.placement.layers.push_back(std::move(lp.placement));
    out.log.append(lp.log);
  }
  return out;
}

}  // namespace moesim
