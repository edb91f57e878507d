// SPDX-License-Identifier: Apache-2.0
#include "moesim/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <string>
#include <thread>
#include <utility>

namespace moesim {

std::string_view to_string(PipelineMode mode) {
  return mode == PipelineMode::simulated ? "sim" : "concurrent";
}

PipelineMode parse_pipeline_mode(std::string_view name) {
  if (name == "sim" || name == "simulated") return PipelineMode::simulated;
  if (name == "concurrent") return PipelineMode::concurrent;
  throw ConfigError("unknown pipeline mode '" + std::string(name) + "'");
}

void PipelineConfig::validate() const {
  if (queue_capacity < 1) throw ConfigError("queue capacity must be >= 1");
  if (!std::isfinite(hash_build_cost) || hash_build_cost < 0.0) {
    throw ConfigError("hash build cost must be finite and nonnegative");
  }
}

std::vector<ScheduleEntry> schedule_pipeline(std::span<const double> inference_times, double hash_build_cost,
                                             int queue_capacity) {
  if (queue_capacity < 1) throw ConfigError("queue capacity must be >= 1");
  const std::size_t n = inference_times.size();
  const auto cap = static_cast<std::size_t>(queue_capacity);
  std::vector<ScheduleEntry> s(n);
  double producer_free = 0.0;
  double consumer_free = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ScheduleEntry& e = s[i];
    e.build_start = producer_free;
    e.build_end = e.build_start + hash_build_cost;
    e.enqueue = i >= cap ? std::max(e.build_end, s[i - cap].start) : e.build_end;
    e.start = std::max(consumer_free, e.enqueue);
    e.stall = e.start - consumer_free;
    e.end = e.start + inference_times[i];
    e.queue_depth = 1;
    for (std::size_t j = i >= cap ? i - cap + 1 : 0; j < i; ++j) {
      if (s[j].start > e.enqueue) ++e.queue_depth;
    }
    producer_free = e.enqueue;
    consumer_free = e.end;
  }
  return s;
}

namespace {

struct Consumer {
  InferenceEngine engine;
  std::vector<PipelineRecord> records;

  void consume(const Batch& batch, const HashTable& table) {
    BatchRun run = engine.run(batch, table);
    records.push_back({std::move(run.table), std::move(run.placement), std::move(run.execution), run.metrics});
  }
};

std::optional<PipelineFailure> run_simulated(const RoutingTrace& trace, const TableSource& source, Consumer& consumer) {
  for (const Batch& batch : trace.batches) {
    HashTable table;
    try {
      table = source(batch);
      consumer.consume(batch, table);
    } catch (const std::exception& e) {
      return PipelineFailure{batch.index, e.what()};
    }
  }
  return std::nullopt;
}

std::optional<PipelineFailure> run_concurrent(const RoutingTrace& trace, const TableSource& source,
                                              Consumer& consumer, int queue_capacity) {
  BoundedQueue<std::pair<std::size_t, HashTable>> queue(static_cast<std::size_t>(queue_capacity));
  std::optional<PipelineFailure> producer_failure;
  std::thread producer([&] {
    for (std::size_t i = 0; i < trace.batches.size(); ++i) {
      HashTable table;
      try {
        table = source(trace.batches[i]);
      } catch (const std::exception& e) {
        producer_failure = PipelineFailure{trace.batches[i].index, e.what()};
        queue.poison(std::current_exception());
        return;
      }
      if (!queue.push({i, std::move(table)})) return;
    }
    queue.close();
  });

  std::optional<PipelineFailure> failure;
  while (auto item = queue.pop()) {
    const Batch& batch = trace.batches[item->first];
    try {
      consumer.consume(batch, item->second);
    } catch (const std::exception& e) {
      failure = PipelineFailure{batch.index, e.what()};
      queue.close();
      break;
    }
  }
  producer.join();
  if (!failure) failure = producer_failure;
  return failure;
}

}  // namespace

PipelineResult run_pipeline(const RoutingTrace& trace, Strategy strategy, int capacity, const TableSource& source,
                            const CostModel& cost, const PipelineConfig& config) {
  config.validate();
  trace.validate();
  const auto wall_start = std::chrono::steady_clock::now();
  Consumer consumer{InferenceEngine(trace.shape(), strategy, capacity, cost), {}};

  PipelineResult result;
  result.failure = config.mode == PipelineMode::simulated
                       ? run_simulated(trace, source, consumer)
                       : run_concurrent(trace, source, consumer, config.queue_capacity);
  result.records = std::move(consumer.records);

  std::vector<double> inference;
  for (const PipelineRecord& r : result.records) inference.push_back(r.metrics.latency);
  result.schedule = schedule_pipeline(inference, config.hash_build_cost, config.queue_capacity);
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    BatchMetrics& m = result.records[i].metrics;
    m.stall = result.schedule[i].stall;
    m.start_time = result.schedule[i].start;
    m.end_time = result.schedule[i].end;
    result.max_queue_depth = std::max(result.max_queue_depth, result.schedule[i].queue_depth);
  }
  result.total_time = result.schedule.empty() ? 0.0 : result.schedule.back().end;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return result;
}

bool mode_equivalence_check(const RoutingTrace& trace, Strategy strategy, int capacity, const TableSource& source,
                            const CostModel& cost, const PipelineConfig& config) {
  return mode_equivalence_check(trace, strategy, capacity, source, source, cost, config);
}

bool mode_equivalence_check(const RoutingTrace& trace, Strategy strategy, int capacity,
                            const TableSource& simulated_source, const TableSource& concurrent_source,
                            const CostModel& cost, const PipelineConfig& config) {
  PipelineConfig sim = config;
  sim.mode = PipelineMode::simulated;
  PipelineConfig conc = config;
  conc.mode = PipelineMode::concurrent;
  try {
    const PipelineResult a = run_pipeline(trace, strategy, capacity, simulated_source, cost, sim);
    const PipelineResult b = run_pipeline(trace, strategy, capacity, concurrent_source, cost, conc);
    return a.records == b.records && a.failure == b.failure && a.schedule == b.schedule &&
           a.total_time == b.total_time && a.max_queue_depth == b.max_queue_depth;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace moesim
