// SPDX-License-Identifier: Apache-2.0
#include "moesim/planner.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "moesim/error.hpp"

namespace moesim {

int ReplicaPlan::cap(int layer, ExpertId expert) const {
  const auto& m = caps.at(layer);
  auto it = m.find(expert);
  return it == m.end() ? 0 : it->second;
}

int ReplicaPlan::total(int layer) const {
  const auto& m = caps.at(layer);
  return std::accumulate(m.begin(), m.end(), 0, [](int acc, const auto& kv) { return acc + kv.second; });
}

DemandMap demand_counts(const HashTable& table, int layer) {
  if (table.assignment.empty() && layer == 0) return {};
  if (layer < 0 || layer >= table.num_layers()) throw ConfigError("layer outside the hash table");
  DemandMap demand;
  for (ExpertId e : table.assignment[layer]) ++demand[e];
  return demand;
}

std::map<ExpertId, int> cap_replicas(const DemandMap& demand, int capacity) {
  if (capacity < 1) throw ConfigError("capacity must be >= 1");
  long long total = 0;
  for (const auto& [e, d] : demand) {
    if (d < 1) throw ConfigError("demand for expert " + std::to_string(e) + " must be positive");
    total += d;
  }
  if (total <= capacity) return demand;

  const int distinct = static_cast<int>(demand.size());
  if (capacity < distinct) {
    throw InfeasibleCapacityError("capacity " + std::to_string(capacity) + " is below " + std::to_string(distinct) +
                                      " distinct experts",
                                  std::nullopt);
  }

  std::map<ExpertId, int> plan;
  for (const auto& [e, d] : demand) plan[e] = 1;
  int remaining = capacity - distinct;

  auto unmet = [&](ExpertId e) { return demand.at(e) - plan.at(e); };

  int unmet_count = 0;
  for (const auto& [e, d] : demand) unmet_count += unmet(e) > 0 ? 1 : 0;
  if (unmet_count > 0) {
    const int share = remaining / unmet_count;
    for (const auto& [e, d] : demand) {
      const int extra = std::min(share, unmet(e));
      plan[e] += extra;
      remaining -= extra;
    }
  }

  // Leftover slots, one per expert per pass.
  std::vector<ExpertId> order;
  order.reserve(demand.size());
  for (const auto& [e, d] : demand) order.push_back(e);
  std::stable_sort(order.begin(), order.end(), [&](ExpertId a, ExpertId b) { return unmet(a) > unmet(b); });
  while (remaining > 0) {
    bool gave = false;
    for (ExpertId e : order) {
      if (remaining == 0) break;
      if (unmet(e) > 0) {
        ++plan[e];
        --remaining;
        gave = true;
      }
    }
    if (!gave) break;
  }
  return plan;
}

ReplicaPlan plan_all_layers(const HashTable& table, int capacity) {
  ReplicaPlan plan;
  plan.capacity = capacity;
  for (int l = 0; l < table.num_layers(); ++l) {
    try {
      plan.caps.push_back(cap_replicas(demand_counts(table, l), capacity));
    } catch (const InfeasibleCapacityError& e) {
      throw InfeasibleCapacityError("capacity " + std::to_string(capacity) + " cannot hold every demanded expert",
                                    l);
    }
  }
  return plan;
}

ReplicaPlan distinct_plan(const HashTable& table, int capacity) {
  if (capacity < 1) throw ConfigError("capacity must be >= 1");
  ReplicaPlan plan;
  plan.capacity = capacity;
  for (int l = 0; l < table.num_layers(); ++l) {
    std::map<ExpertId, int> caps;
    for (const auto& [e, d] : demand_counts(table, l)) caps[e] = 1;
    plan.caps.push_back(std::move(caps));
  }
  return plan;
}

}  // namespace moesim
