// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "moesim/error.hpp"
#include "moesim/placement.hpp"
#include "moesim/planner.hpp"

using namespace moesim;

namespace {

HashTable two_hot_table() {
  std::vector<ExpertId> row(64);
  for (int s = 0; s < 64; ++s) row[s] = s % 2;
  return HashTable::from_assignment(0, {row});
}

// Replays a log against per-layer replica counts, checking the event rules
// and the capacity bound after every event.
void replay(const TransferLog& log, std::vector<std::map<ExpertId, int>>& counts, int capacity) {
  for (const TransferEvent& e : log.events) {
    auto& layer = counts.at(e.layer);
    switch (e.kind) {
      case TransferKind::load:
        ASSERT_EQ(layer.count(e.expert), 0u);
        ASSERT_EQ(e.ordinal, 0);
        layer[e.expert] = 1;
        break;
      case TransferKind::replicate:
        ASSERT_EQ(layer.at(e.expert), e.ordinal);
        ++layer[e.expert];
        break;
      case TransferKind::offload:
        ASSERT_TRUE(layer.count(e.expert));
        if (e.ordinal == 0) {
          layer.erase(e.expert);
        } else {
          ASSERT_EQ(layer.at(e.expert), e.ordinal + 1);
          --layer[e.expert];
        }
        break;
    }
    int total = 0;
    for (const auto& kv : layer) total += kv.second;
    ASSERT_LE(total, capacity);
  }
}

void check_safety(const Placement& p, const HashTable& t) {
  for (int l = 0; l < t.num_layers(); ++l) {
    const PlacementLayer& layer = p.layers[l];
    ASSERT_EQ(layer.token_slot.size(), t.assignment[l].size());
    ASSERT_EQ(layer.physical_slot.size(), layer.slots.size());
    std::set<SlotRef> unique(layer.slots.begin(), layer.slots.end());
    ASSERT_EQ(unique.size(), layer.slots.size());
    for (std::size_t s = 0; s < layer.token_slot.size(); ++s) {
      ASSERT_EQ(layer.slots.at(layer.token_slot[s]).expert, t.assignment[l][s]);
    }
  }
}

}  // namespace

TEST(Placement, TwoHotExpertsFillTheDevice) {
  DeviceState state(1, 64, 64);
  const HashTable t = two_hot_table();
  const BatchPlacement b = apply_batch(state, t, plan_all_layers(t, 64));
  int loads = 0, replicates = 0;
  for (const TransferEvent& e : b.log.events) {
    loads += e.kind == TransferKind::load;
    replicates += e.kind == TransferKind::replicate;
  }
  EXPECT_EQ(loads, 2);
  EXPECT_EQ(replicates, 62);
  std::set<int> slots(b.placement.layers[0].token_slot.begin(), b.placement.layers[0].token_slot.end());
  EXPECT_EQ(slots.size(), 64u);
  check_safety(b.placement, t);
}

TEST(Placement, WarmCacheNeedsNoTransfers) {
  DeviceState state(2, 8, 16);
  const HashTable t = HashTable::from_assignment(0, {{0, 0, 3, 5, 5, 5}, {1, 2, 2, 7, 7, 7}});
  const ReplicaPlan plan = plan_all_layers(t, 16);
  const BatchPlacement first = apply_batch(state, t, plan);
  EXPECT_FALSE(first.log.events.empty());
  const BatchPlacement second = apply_batch(state, t, plan);
  EXPECT_TRUE(second.log.events.empty());
  EXPECT_EQ(second.placement, first.placement);
}

TEST(Placement, RoundRobinPastCap) {
  DeviceState state(1, 4, 4);
  const HashTable t = HashTable::from_assignment(0, {{0, 0, 0, 0, 0}});
  const ReplicaPlan plan{4, {{{0, 2}}}};
  const LayerPlacement lp = apply_layer(state, t, plan, 0);
  EXPECT_EQ(lp.placement.slots, (std::vector<SlotRef>{{0, 0}, {0, 1}}));
  EXPECT_EQ(lp.placement.token_slot, (std::vector<int>{0, 1, 0, 1, 0}));
  EXPECT_FALSE(lp.placement.fallback);
}

TEST(Placement, SingleLayerBatchEqualsLayer) {
  const HashTable t = HashTable::from_assignment(0, {{2, 2, 1, 0, 2}});
  const ReplicaPlan plan = plan_all_layers(t, 4);
  DeviceState a(1, 3, 4), b(1, 3, 4);
  const LayerPlacement lp = apply_layer(a, t, plan, 0);
  const BatchPlacement bp = apply_batch(b, t, plan);
  EXPECT_EQ(bp.placement.layers.at(0), lp.placement);
  EXPECT_EQ(bp.log, lp.log);
  EXPECT_EQ(a, b);
}

TEST(Placement, OffloadsAbsentAndReclaimsSurplus) {
  DeviceState state(1, 4, 4);
  const HashTable first = HashTable::from_assignment(0, {{0, 0, 0, 1}});
  apply_batch(state, first, plan_all_layers(first, 4));
  EXPECT_EQ(state.replicas(0, 0), 3);
  const HashTable second = HashTable::from_assignment(1, {{0, 2, 2, 2}});
  const BatchPlacement b = apply_batch(state, second, plan_all_layers(second, 4));
  EXPECT_EQ(b.log.events.at(0), (TransferEvent{TransferKind::offload, 0, 1, 0}));
  EXPECT_EQ(b.log.events.at(1), (TransferEvent{TransferKind::offload, 0, 0, 2}));
  EXPECT_EQ(b.log.events.at(2), (TransferEvent{TransferKind::offload, 0, 0, 1}));
  EXPECT_EQ(state.replicas(0, 0), 1);
  EXPECT_EQ(state.replicas(0, 2), 3);
  EXPECT_EQ(state.replicas(0, 1), 0);
  EXPECT_EQ(state.host_experts(0), (std::vector<ExpertId>{1, 3}));
}

TEST(Placement, RandomSequencesKeepInvariants) {
  std::mt19937_64 rng(2024);
  for (int seed = 0; seed < 1000; ++seed) {
    std::uniform_int_distribution<int> layers_d(1, 3), experts_d(2, 8), tokens_d(1, 24);
    const int L = layers_d(rng), E = experts_d(rng), B = tokens_d(rng);
    std::uniform_int_distribution<int> cap_d(1, B + 2);
    const int C = cap_d(rng);
    DeviceState state(L, E, C);
    std::vector<std::map<ExpertId, int>> counts(L);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int batch = 0; batch < 3; ++batch) {
      const double hot = u(rng);
      LayerRouting rows(L, std::vector<ExpertId>(B));
      std::uniform_int_distribution<int> expert(0, E - 1);
      for (auto& r : rows)
        for (auto& e : r) e = u(rng) < hot ? 0 : expert(rng);
      const HashTable t = HashTable::from_assignment(batch, rows);
      ReplicaPlan plan{C, {}};
      bool feasible = true;
      for (int l = 0; l < L; ++l) {
        const DemandMap d = demand_counts(t, l);
        if (static_cast<int>(d.size()) > C) {
          feasible = false;
          plan.caps.push_back(distinct_plan(t, C).caps[l]);
        } else {
          plan.caps.push_back(cap_replicas(d, C));
        }
      }
      const BatchPlacement b = apply_batch(state, t, plan);
      check_safety(b.placement, t);
      replay(b.log, counts, C);
      for (int l = 0; l < L; ++l) {
        ASSERT_EQ(counts[l], state.resident(l));
        ASSERT_LE(state.resident_slots(l), C);
        ASSERT_LE(b.placement.layers[l].physical_count(), C);
        for (const auto& [e, n] : state.resident(l)) ASSERT_TRUE(t.replica_count[l].count(e));
      }
      if (feasible) ASSERT_TRUE(b.log.fallback_layers.empty());
    }
  }
}

TEST(Placement, InfeasibleCapsFallBackToDistinct) {
  DeviceState state(1, 4, 3);
  const HashTable t = HashTable::from_assignment(0, {{0, 0, 0, 1, 1, 2}});
  const ReplicaPlan plan{3, {{{0, 3}, {1, 2}, {2, 1}}}};
  const BatchPlacement b = apply_batch(state, t, plan);
  EXPECT_EQ(b.log.fallback_layers, (std::vector<int>{0}));
  EXPECT_TRUE(b.placement.layers[0].fallback);
  EXPECT_EQ(state.resident_slots(0), 3);
  check_safety(b.placement, t);
}

TEST(Placement, TimeSharingWhenExpertsOutnumberSlots) {
  DeviceState state(1, 6, 2);
  const HashTable t = HashTable::from_assignment(0, {{0, 1, 2, 3, 4, 5, 0}});
  const BatchPlacement b = apply_batch(state, t, distinct_plan(t, 2));
  const PlacementLayer& layer = b.placement.layers[0];
  EXPECT_TRUE(layer.fallback);
  EXPECT_EQ(layer.slots.size(), 6u);
  EXPECT_EQ(layer.physical_count(), 2);
  EXPECT_EQ(layer.physical_slot, (std::vector<int>{0, 1, 0, 1, 0, 1}));
  check_safety(b.placement, t);
  std::vector<std::map<ExpertId, int>> counts(1);
  replay(b.log, counts, 2);
  EXPECT_EQ(counts[0], state.resident(0));
}

TEST(Placement, BadInputs) {
  DeviceState state(1, 4, 4);
  const HashTable t = HashTable::from_assignment(0, {{0, 9}});
  EXPECT_THROW(apply_batch(state, t, ReplicaPlan{4, {{{0, 1}, {9, 1}}}}), ValidationError);
  EXPECT_THROW(DeviceState(1, 4, 0), ConfigError);
  const HashTable two = HashTable::from_assignment(0, {{0}, {1}});
  EXPECT_THROW(apply_batch(state, two, plan_all_layers(two, 4)), ConfigError);
}

TEST(TransferLog, CsvAndSlices) {
  TransferLog log;
  log.events = {{TransferKind::load, 0, 3, 0}, {TransferKind::replicate, 0, 3, 1}, {TransferKind::offload, 1, 2, 0}};
  log.fallback_layers = {1};
  EXPECT_EQ(log.layer_events(0).size(), 2u);
  EXPECT_EQ(log.layer_events(1).size(), 1u);
  EXPECT_TRUE(log.layer_events(2).empty());
  std::ostringstream out;
  write_transfer_csv(log, out);
  EXPECT_EQ(out.str(),
            "sequence,event,layer,expert,ordinal\n0,load,0,3,0\n1,replicate,0,3,1\n2,offload,1,2,0\n3,fallback,1,-1,-1\n");
}
