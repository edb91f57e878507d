// SPDX-License-Identifier: Apache-2.0
#include "moesim/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <string>

#include "moesim/error.hpp"
#include "moesim/float_text.hpp"

namespace moesim {

void CostModel::validate() const {
  for (double c : {t_compute, t_load, t_replicate, t_offload}) {
    if (!std::isfinite(c) || c < 0.0) throw ConfigError("costs must be finite and nonnegative");
  }
}

double CostModel::transfer_cost(const TransferEvent& event) const {
  switch (event.kind) {
    case TransferKind::load:
      return t_load;
    case TransferKind::replicate:
      return t_replicate;
    case TransferKind::offload:
      return event.ordinal == 0 ? t_offload : 0.0;
  }
  return 0.0;
}

LayerTiming simulate_layer(std::span<const int> token_slot, int slot_count, std::span<const TransferEvent> transfers,
                           const CostModel& cost) {
  if (token_slot.empty()) throw ConfigError("simulate_layer needs at least one token");
  if (slot_count < 1) throw ConfigError("simulate_layer needs at least one slot");
  std::vector<long long> queue(slot_count, 0);
  for (int s : token_slot) {
    if (s < 0 || s >= slot_count) throw ConfigError("token mapped to slot " + std::to_string(s) + " outside device");
    ++queue[s];
  }
  LayerTiming t;
  for (const TransferEvent& e : transfers) t.transfer_time += cost.transfer_cost(e);
  const long long longest = *std::max_element(queue.begin(), queue.end());
  t.compute_time = static_cast<double>(longest) * cost.t_compute;
  t.busy_time = static_cast<double>(token_slot.size()) * cost.t_compute;
  t.makespan = t.transfer_time + t.compute_time;
  return t;
}

double utilization(double busy_time, int slots, double makespan) {
  if (!(makespan > 0.0)) throw MetricError("utilization undefined for a zero makespan");
  if (slots < 1) throw MetricError("utilization undefined without slots");
  return std::clamp(busy_time / (static_cast<double>(slots) * makespan), 0.0, 1.0);
}

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::resident_all:
      return "resident-all";
    case Strategy::distinct_only:
      return "distinct-only";
    case Strategy::replicated:
      return "replicated";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "resident-all") return Strategy::resident_all;
  if (name == "distinct" || name == "distinct-only") return Strategy::distinct_only;
  if (name == "replicated") return Strategy::replicated;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

InferenceEngine::InferenceEngine(const ModelShape& shape, Strategy strategy, int capacity, const CostModel& cost)
    : shape_(shape),
      strategy_(strategy),
      cost_(cost),
      device_(strategy == Strategy::resident_all
                  ? DeviceState::all_resident(shape.num_layers, shape.experts_per_layer)
                  : DeviceState(shape.num_layers, shape.experts_per_layer, capacity)) {
  shape_.validate();
  cost_.validate();
}

ReplicaPlan InferenceEngine::make_plan(const HashTable& table) const {
  const int capacity = device_.capacity();
  if (strategy_ == Strategy::distinct_only) return distinct_plan(table, capacity);
  ReplicaPlan plan;
  plan.capacity = capacity;
  for (int l = 0; l < table.num_layers(); ++l) {
    const DemandMap demand = demand_counts(table, l);
    try {
      plan.caps.push_back(cap_replicas(demand, capacity));
    } catch (const InfeasibleCapacityError&) {
      // Placement notices the overflow and falls back for this layer.
      std::map<ExpertId, int> ones;
      for (const auto& [e, d] : demand) ones[e] = 1;
      plan.caps.push_back(std::move(ones));
    }
  }
  return plan;
}

namespace {

PlacementLayer all_resident_layer(int num_experts, const std::vector<ExpertId>& predicted) {
  PlacementLayer layer;
  for (ExpertId e = 0; e < num_experts; ++e) {
    layer.slots.push_back({e, 0});
    layer.physical_slot.push_back(e);
  }
  layer.token_slot = predicted;
  return layer;
}

// Reroutes mispredicted tokens to their true expert. Appends one transient
// load per token whose true expert has no slot.
PlacementLayer correct_layer(const PlacementLayer& predicted, const std::vector<ExpertId>& guess,
                             const std::vector<ExpertId>& truth, int layer, std::vector<TransferEvent>& corrective) {
  PlacementLayer exec = predicted;
  std::vector<long long> load(exec.physical_count(), 0);
  std::map<ExpertId, std::vector<int>> slots_of;
  for (std::size_t i = 0; i < exec.slots.size(); ++i) slots_of[exec.slots[i].expert].push_back(static_cast<int>(i));
  for (std::size_t s = 0; s < truth.size(); ++s) {
    if (truth[s] == guess[s]) ++load[exec.physical_slot[exec.token_slot[s]]];
  }
  for (std::size_t s = 0; s < truth.size(); ++s) {
    if (truth[s] == guess[s]) continue;
    const ExpertId e = truth[s];
    auto it = slots_of.find(e);
    if (it != slots_of.end()) {
      int best = it->second.front();
      for (int i : it->second) {
        if (load[exec.physical_slot[i]] < load[exec.physical_slot[best]]) best = i;
      }
      exec.token_slot[s] = best;
      ++load[exec.physical_slot[best]];
    } else {
      exec.token_slot[s] = static_cast<int>(exec.slots.size());
      exec.slots.push_back({e, -1});
      exec.physical_slot.push_back(static_cast<int>(load.size()));
      load.push_back(1);
      corrective.push_back({TransferKind::load, layer, e, -1});
    }
  }
  return exec;
}

}  // namespace

BatchRun InferenceEngine::run(const Batch& batch, const HashTable& table) {
  const int L = shape_.num_layers;
  if (batch.size() < 1) throw ConfigError("batch " + std::to_string(batch.index) + " is empty");
  if (static_cast<int>(batch.oracle_routing.size()) != L || table.num_layers() != L) {
    throw ConfigError("batch " + std::to_string(batch.index) + ": layer count does not match the model");
  }
  if (table.batch_size() != batch.size()) {
    throw ConfigError("batch " + std::to_string(batch.index) + ": hash table covers a different batch size");
  }
  table.validate(shape_.experts_per_layer);

  BatchRun run;
  run.table = table;
  if (strategy_ == Strategy::resident_all) {
    for (int l = 0; l < L; ++l) {
      run.placement.layers.push_back(all_resident_layer(shape_.experts_per_layer, table.assignment[l]));
    }
  } else {
    BatchPlacement placed = apply_batch(device_, table, make_plan(table));
    run.placement = std::move(placed.placement);
    run.log = std::move(placed.log);
  }

  BatchMetrics& m = run.metrics;
  m.batch = batch.index;
  m.strategy = strategy_;
  m.layers = L;
  m.experts = shape_.experts_per_layer;
  m.capacity = device_.capacity();
  m.tokens = batch.size();
  m.fallback_layers = static_cast<int>(run.log.fallback_layers.size());
  for (int l = 0; l < L; ++l) {
    std::vector<TransferEvent> transfers;
    const auto logged = run.log.layer_events(l);
    transfers.assign(logged.begin(), logged.end());
    const std::size_t before = transfers.size();
    PlacementLayer exec =
        correct_layer(run.placement.layers[l], table.assignment[l], batch.oracle_routing[l], l, transfers);
    m.corrective_loads += static_cast<int>(transfers.size() - before);

    std::vector<int> physical(exec.token_slot.size());
    for (std::size_t s = 0; s < physical.size(); ++s) physical[s] = exec.physical_slot[exec.token_slot[s]];
    const int slots = exec.physical_count();
    const LayerTiming t = simulate_layer(physical, slots, transfers, cost_);
    m.latency += t.makespan;
    m.transfer_time += t.transfer_time;
    m.busy_time += t.busy_time;
    m.slot_time += static_cast<double>(slots) * t.makespan;
    m.capacity_slot_time += static_cast<double>(m.capacity) * t.makespan;
    run.execution.layers.push_back(std::move(exec));
  }
  if (!(m.latency > 0.0)) throw MetricError("batch " + std::to_string(batch.index) + " has zero latency");
  m.throughput = static_cast<double>(m.tokens) / m.latency;
  m.utilization = std::clamp(m.busy_time / m.slot_time, 0.0, 1.0);
  m.capacity_utilization = std::clamp(m.busy_time / m.capacity_slot_time, 0.0, 1.0);
  m.prediction_accuracy = evaluate_accuracy(table, batch.oracle_routing);
  m.end_time = m.latency;
  return run;
}

Aggregate aggregate(std::span<const BatchMetrics> rows) {
  if (rows.empty()) throw MetricError("cannot aggregate zero batches");
  std::vector<const BatchMetrics*> sorted;
  for (const BatchMetrics& r : rows) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const BatchMetrics* a, const BatchMetrics* b) {
    if (a->batch != b->batch) return a->batch < b->batch;
    return a->strategy < b->strategy;
  });
  Aggregate a;
  double accuracy = 0.0;
  for (const BatchMetrics* r : sorted) {
    ++a.batches;
    a.tokens += r->tokens;
    a.latency += r->latency;
    a.stall += r->stall;
    a.transfer_time += r->transfer_time;
    a.busy_time += r->busy_time;
    a.slot_time += r->slot_time;
    a.capacity_slot_time += r->capacity_slot_time;
    accuracy += r->prediction_accuracy;
  }
  if (!(a.latency > 0.0) || !(a.slot_time > 0.0) || !(a.capacity_slot_time > 0.0)) {
    throw MetricError("aggregate undefined for zero total latency");
  }
  a.throughput = static_cast<double>(a.tokens) / a.latency;
  a.utilization = std::clamp(a.busy_time / a.slot_time, 0.0, 1.0);
  a.capacity_utilization = std::clamp(a.busy_time / a.capacity_slot_time, 0.0, 1.0);
  a.prediction_accuracy = accuracy / a.batches;
  return a;
}

StrategyResult simulate_strategy(const RoutingTrace& trace, Strategy strategy, int capacity, const TableSource& source,
                                 const CostModel& cost) {
  trace.validate();
  if (trace.batches.empty()) throw ConfigError("trace has no batches");
  InferenceEngine engine(trace.shape(), strategy, capacity, cost);
  StrategyResult result;
  double clock = 0.0;
  for (const Batch& batch : trace.batches) {
    BatchMetrics m = engine.run(batch, source(batch)).metrics;
    m.start_time = clock;
    clock += m.latency;
    m.end_time = clock;
    result.batches.push_back(m);
  }
  result.total = aggregate(result.batches);
  return result;
}

namespace {

constexpr std::string_view kMetricsHeader =
    "batch,strategy,layers,experts,capacity,tokens,latency,throughput,utilization,capacity_utilization,stall,"
    "transfer_time,prediction_accuracy,busy_time,slot_time,capacity_slot_time,fallback_layers,corrective_loads,"
    "start_time,end_time";
constexpr std::size_t kMetricsColumns = 20;

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace

void write_metrics_header(std::ostream& out) { out << kMetricsHeader << '\n'; }

void write_metrics_row(const BatchMetrics& r, std::ostream& out) {
  std::string line = std::to_string(r.batch);
  line += ',';
  line += to_string(r.strategy);
  for (int v : {r.layers, r.experts, r.capacity, r.tokens}) line += ',' + std::to_string(v);
  for (double v : {r.latency, r.throughput, r.utilization, r.capacity_utilization, r.stall, r.transfer_time,
                   r.prediction_accuracy, r.busy_time, r.slot_time, r.capacity_slot_time}) {
    line += ',';
    append_double(line, v);
  }
  for (int v : {r.fallback_layers, r.corrective_loads}) line += ',' + std::to_string(v);
  for (double v : {r.start_time, r.end_time}) {
    line += ',';
    append_double(line, v);
  }
  out << line << '\n';
}

void write_metrics_csv(std::span<const BatchMetrics> rows, std::ostream& out) {
  write_metrics_header(out);
  for (const BatchMetrics& r : rows) write_metrics_row(r, out);
  if (!out) throw IoError("failed writing metrics");
}

void write_metrics_csv(std::span<const BatchMetrics> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_metrics_csv(rows, out);
}

std::vector<BatchMetrics> read_metrics_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("missing metrics header", line_no);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw ParseError("unexpected metrics header", line_no);
  std::vector<BatchMetrics> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != kMetricsColumns) {
      throw ParseError("expected " + std::to_string(kMetricsColumns) + " fields, got " + std::to_string(f.size()),
                       line_no);
    }
    auto integer = [&](std::size_t i) {
      const auto v = parse_integer(f[i]);
      if (!v || *v < std::numeric_limits<int>::min() || *v > std::numeric_limits<int>::max()) {
        throw ParseError("bad integer '" + std::string(f[i]) + "'", line_no);
      }
      return static_cast<int>(*v);
    };
    auto real = [&](std::size_t i) {
      const auto v = parse_double(f[i]);
      if (!v) throw ParseError("bad number '" + std::string(f[i]) + "'", line_no);
      return *v;
    };
    BatchMetrics r;
    r.batch = integer(0);
    try {
      r.strategy = parse_strategy(f[1]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
    r.layers = integer(2);
    r.experts = integer(3);
    r.capacity = integer(4);
    r.tokens = integer(5);
    r.latency = real(6);
    r.throughput = real(7);
    r.utilization = real(8);
    r.capacity_utilization = real(9);
    r.stall = real(10);
    r.transfer_time = real(11);
    r.prediction_accuracy = real(12);
    r.busy_time = real(13);
    r.slot_time = real(14);
    r.capacity_slot_time = real(15);
    r.fallback_layers = integer(16);
    r.corrective_loads = integer(17);
    r.start_time = real(18);
    r.end_time = real(19);
    rows.push_back(r);
  }
  return rows;
}

std::vector<BatchMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_metrics_csv(in);
}

}  // namespace moesim
