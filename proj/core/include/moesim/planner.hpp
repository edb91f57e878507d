// SPDX-License-Identifier: Apache-2.0
#pragma once

// Turns per-expert replica demand into per-layer replica caps that fit in C
// slots.
//
// When total demand fits, caps equal demand. Otherwise every distinct expert
// keeps one replica, and the R = C - #distinct spare slots are shared out:
// each expert with unmet demand first receives floor(R / #unmet) extra
// replicas (never beyond its demand), then the leftover goes one slot at a
// time, in passes, to experts ordered by larger remaining unmet demand and
// then lower expert index.

#include <map>
#include <vector>

#include "moesim/predictor.hpp"
#include "moesim/trace.hpp"

namespace moesim {

using DemandMap = std::map<ExpertId, int>;

struct ReplicaPlan {
  int capacity = 0;
  std::vector<std::map<ExpertId, int>> caps;  // per layer

  int cap(int layer, ExpertId expert) const;
  int total(int layer) const;
};

DemandMap demand_counts(const HashTable& table, int layer);

// Throws InfeasibleCapacityError when capacity < number of demanded experts,
// ConfigError when capacity < 1 or a demand is not positive.
std::map<ExpertId, int> cap_replicas(const DemandMap& demand, int capacity);

// cap_replicas for every layer; infeasible layers are reported by index.
ReplicaPlan plan_all_layers(const HashTable& table, int capacity);

// One replica per demanded expert, regardless of capacity.
ReplicaPlan distinct_plan(const HashTable& table, int capacity);

}  // namespace moesim
