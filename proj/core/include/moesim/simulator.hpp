// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic cost model for one batch. Within a layer, transfers run first
// and serially; then every physical slot works through its token queue at
// t_compute per token while slots run in parallel.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "moesim/placement.hpp"
#include "moesim/planner.hpp"
#include "moesim/predictor.hpp"
#include "moesim/router.hpp"
#include "moesim/trace.hpp"

namespace moesim {

struct CostModel {
  double t_compute = 1.0;
  double t_load = 10.0;
  double t_replicate = 2.0;
  double t_offload = 5.0;

  // Throws ConfigError unless every cost is finite and nonnegative.
  void validate() const;

  // Whole-expert offloads (ordinal 0) cost t_offload; dropping a surplus
  // replica of a still-resident expert is free. Transient loads carry
  // ordinal -1 and cost t_load.
  double transfer_cost(const TransferEvent& event) const;

  friend bool operator==(const CostModel&, const CostModel&) = default;
};

struct LayerTiming {
  double transfer_time = 0.0;
  double compute_time = 0.0;  // longest slot queue x t_compute
  double makespan = 0.0;
  double busy_time = 0.0;     // sum over slots of queue x t_compute
};

// token_slot[s] is the physical slot of token s, in [0, slot_count).
// Throws ConfigError on an empty map or an out-of-range slot.
LayerTiming simulate_layer(std::span<const int> token_slot, int slot_count, std::span<const TransferEvent> transfers,
                           const CostModel& cost);

// busy / (slots x makespan), clamped to [0, 1]. Throws MetricError when the
// makespan is not positive.
double utilization(double busy_time, int slots, double makespan);

enum class Strategy { resident_all, distinct_only, replicated };

std::string_view to_string(Strategy strategy);
// Accepts resident-all, distinct, distinct-only and replicated.
Strategy parse_strategy(std::string_view name);

struct BatchMetrics {
  int batch = 0;
  Strategy strategy = Strategy::replicated;
  int layers = 0;
  int experts = 0;
  int capacity = 0;
  int tokens = 0;
  double latency = 0.0;
  double throughput = 0.0;
  // Busy time over resident slots (resident-all: all E experts).
  double utilization = 0.0;
  // Busy time over all C capacity slots.
  double capacity_utilization = 0.0;
  double stall = 0.0;
  double transfer_time = 0.0;
  double prediction_accuracy = 0.0;
  double busy_time = 0.0;
  double slot_time = 0.0;           // sum over layers of resident slots x makespan
  double capacity_slot_time = 0.0;  // sum over layers of C x makespan
  int fallback_layers = 0;
  int corrective_loads = 0;
  double start_time = 0.0;
  double end_time = 0.0;

  friend bool operator==(const BatchMetrics&, const BatchMetrics&) = default;
};

struct BatchRun {
  HashTable table;
  Placement placement;  // from the predicted table
  Placement execution;  // what actually ran, after correcting mispredictions
  TransferLog log;
  BatchMetrics metrics;
};

// Runs batches one after another against a persistent device. The device
// starts empty, except for resident-all where every expert is preloaded and
// capacity is E.
//
// Tokens whose predicted expert was wrong run on their true expert: on the
// least-loaded resident replica if there is one, otherwise on a transient
// slot fed by a corrective load that leaves residency unchanged.
class InferenceEngine {
 public:
  InferenceEngine(const ModelShape& shape, Strategy strategy, int capacity, const CostModel& cost);

  BatchRun run(const Batch& batch, const HashTable& table);

  const DeviceState& device() const { return device_; }
  Strategy strategy() const { return strategy_; }
  int capacity() const { return device_.capacity(); }

 private:
  ReplicaPlan make_plan(const HashTable& table) const;

  ModelShape shape_;
  Strategy strategy_;
  CostModel cost_;
  DeviceState device_;
};

struct Aggregate {
  int batches = 0;
  long long tokens = 0;
  double latency = 0.0;     // total
  double throughput = 0.0;  // total tokens / total latency
  double utilization = 0.0;           // time-weighted
  double capacity_utilization = 0.0;  // time-weighted
  double stall = 0.0;
  double transfer_time = 0.0;
  double prediction_accuracy = 0.0;   // mean over batches
  double busy_time = 0.0;
  double slot_time = 0.0;
  double capacity_slot_time = 0.0;

  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

// Sums are taken in batch-index order so the result does not depend on the
// order of `rows`. Throws MetricError on an empty span.
Aggregate aggregate(std::span<const BatchMetrics> rows);

struct StrategyResult {
  std::vector<BatchMetrics> batches;
  Aggregate total;
};

StrategyResult simulate_strategy(const RoutingTrace& trace, Strategy strategy, int capacity, const TableSource& source,
                                 const CostModel& cost);

// CSV columns, in order:
//   batch,strategy,layers,experts,capacity,tokens,latency,throughput,
//   utilization,capacity_utilization,stall,transfer_time,prediction_accuracy,
//   busy_time,slot_time,capacity_slot_time,fallback_layers,corrective_loads,
//   start_time,end_time
void write_metrics_header(std::ostream& out);
void write_metrics_row(const BatchMetrics& row, std::ostream& out);
void write_metrics_csv(std::span<const BatchMetrics> rows, std::ostream& out);
void write_metrics_csv(std::span<const BatchMetrics> rows, const std::filesystem::path& path);

// Throws ParseError (with line number) on malformed input.
std::vector<BatchMetrics> read_metrics_csv(std::istream& in);
std::vector<BatchMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace moesim
