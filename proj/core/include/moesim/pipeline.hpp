// SPDX-License-Identifier: Apache-2.0
#pragma once

// Two actors joined by a bounded FIFO: a producer builds the hash table for
// each batch in order, a consumer places and executes batches as tables
// arrive. Timing always comes from the deterministic schedule below, so the
// simulated and concurrent modes report the same metrics; only wall-clock
// time differs.

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moesim/error.hpp"
#include "moesim/predictor.hpp"
#include "moesim/simulator.hpp"
#include "moesim/trace.hpp"

namespace moesim {

template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity < 1) throw ConfigError("queue capacity must be >= 1");
  }

  // Blocks while full. Returns false if the queue was closed.
  bool push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    max_depth_ = std::max(max_depth_, items_.size());
    not_empty_.notify_one();
    return true;
  }

  // Blocks while empty. Returns nullopt once closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  // Closes the queue and records why; pending items are still delivered.
  void poison(std::exception_ptr error) {
    std::lock_guard lock(mutex_);
    error_ = std::move(error);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::exception_ptr error() const {
    std::lock_guard lock(mutex_);
    return error_;
  }

  std::size_t capacity() const { return capacity_; }

  std::size_t max_depth() const {
    std::lock_guard lock(mutex_);
    return max_depth_;
  }

 private:
  const std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  std::size_t max_depth_ = 0;
  bool closed_ = false;
  std::exception_ptr error_;
};

enum class PipelineMode { simulated, concurrent };

std::string_view to_string(PipelineMode mode);
// Accepts sim, simulated and concurrent.
PipelineMode parse_pipeline_mode(std::string_view name);

struct PipelineConfig {
  int queue_capacity = 2;
  PipelineMode mode = PipelineMode::simulated;
  double hash_build_cost = 1.0;  // simulated time to build one table

  void validate() const;
};

struct ScheduleEntry {
  double build_start = 0.0;
  double build_end = 0.0;
  double enqueue = 0.0;
  double start = 0.0;  // dequeue time
  double end = 0.0;
  double stall = 0.0;  // start minus the previous batch's end
  int queue_depth = 0;  // tables pending right after this one is enqueued

  friend bool operator==(const ScheduleEntry&, const ScheduleEntry&) = default;
};

// Table i is built in [build_start, build_end] and enqueued once table
// i - capacity has been dequeued; the producer then starts table i + 1.
// Batch i starts at max(end of batch i - 1, enqueue of table i).
std::vector<ScheduleEntry> schedule_pipeline(std::span<const double> inference_times, double hash_build_cost,
                                             int queue_capacity);

struct PipelineRecord {
  HashTable table;
  Placement placement;
  Placement execution;
  BatchMetrics metrics;  // stall, start_time and end_time from the schedule

  friend bool operator==(const PipelineRecord&, const PipelineRecord&) = default;
};

struct PipelineFailure {
  int batch = 0;
  std::string message;

  friend bool operator==(const PipelineFailure&, const PipelineFailure&) = default;
};

struct PipelineResult {
  std::vector<PipelineRecord> records;  // batches completed before any failure
  std::optional<PipelineFailure> failure;
  std::vector<ScheduleEntry> schedule;
  double total_time = 0.0;
  int max_queue_depth = 0;
  double wall_seconds = 0.0;  // excluded from every comparison
};

PipelineResult run_pipeline(const RoutingTrace& trace, Strategy strategy, int capacity, const TableSource& source,
                            const CostModel& cost, const PipelineConfig& config);

// True iff both modes give identical tables, placements, metrics, schedules
// and failures. The second overload feeds each mode its own table source.
bool mode_equivalence_check(const RoutingTrace& trace, Strategy strategy, int capacity, const TableSource& source,
                            const CostModel& cost, const PipelineConfig& config);
bool mode_equivalence_check(const RoutingTrace& trace, Strategy strategy, int capacity,
                            const TableSource& simulated_source, const TableSource& concurrent_source,
                            const CostModel& cost, const PipelineConfig& config);

}  // namespace moesim
