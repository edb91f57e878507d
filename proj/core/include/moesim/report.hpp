// SPDX-License-Identifier: Apache-2.0
#pragma once

// Aggregation of per-batch metrics into comparison rows, one per strategy
// and configuration. Utilization is time-weighted: sum(busy) over
// sum(slots x makespan). Throughput is total tokens over total latency.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "moesim/simulator.hpp"

namespace moesim {

struct SummaryRow {
  Strategy strategy = Strategy::replicated;
  int layers = 0;
  int experts = 0;
  int capacity = 0;
  int batch_size = 0;
  Aggregate total;

  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

// Each stream must describe one configuration (layers, experts, batch size)
// and give each strategy a single capacity; otherwise AggregationError.
// Rows from different streams with the same strategy and configuration are
// pooled. Output is sorted by configuration, then strategy, and does not
// depend on row order.
std::vector<SummaryRow> summarize(std::span<const std::vector<BatchMetrics>> streams);
std::vector<SummaryRow> summarize(std::span<const BatchMetrics> stream);
std::vector<SummaryRow> summarize_files(std::span<const std::filesystem::path> paths);

// Columns: strategy,layers,experts,capacity,batch_size,batches,tokens,latency,
// throughput,utilization,capacity_utilization,stall,transfer_time,
// prediction_accuracy
void write_summary_csv(std::span<const SummaryRow> rows, std::ostream& out);
void write_summary_table(std::span<const SummaryRow> rows, std::ostream& out);

enum class PlotMetric { latency, throughput, utilization, capacity_utilization, stall, transfer_time, accuracy };

std::string_view to_string(PlotMetric metric);
PlotMetric parse_plot_metric(std::string_view name);
double metric_value(const BatchMetrics& row, PlotMetric metric);

// "x,y" with x the batch index, for one strategy, sorted by batch.
void write_batch_plot(std::span<const BatchMetrics> rows, Strategy strategy, PlotMetric metric, std::ostream& out);
// "x,y" with x the expert count and y the aggregate metric, for one strategy.
void write_experts_plot(std::span<const SummaryRow> rows, Strategy strategy, PlotMetric metric, std::ostream& out);

}  // namespace moesim
