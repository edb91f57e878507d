// SPDX-License-Identifier: Apache-2.0
#include "moesim/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <tuple>

#include "moesim/error.hpp"
#include "moesim/float_text.hpp"

namespace moesim {

namespace {

// (layers, experts, batch size, capacity, strategy)
using GroupKey = std::tuple<int, int, int, int, Strategy>;

void check_stream(const std::vector<BatchMetrics>& stream, std::size_t index) {
  if (stream.empty()) return;
  const BatchMetrics& first = stream.front();
  std::map<Strategy, int> capacity;
  for (const BatchMetrics& r : stream) {
    if (r.layers != first.layers || r.experts != first.experts || r.tokens != first.tokens) {
      throw AggregationError("stream " + std::to_string(index) + " mixes configurations (batch " +
                             std::to_string(r.batch) + ")");
    }
    auto [it, inserted] = capacity.emplace(r.strategy, r.capacity);
    if (!inserted && it->second != r.capacity) {
      throw AggregationError("stream " + std::to_string(index) + " mixes capacities for " +
                             std::string(to_string(r.strategy)));
    }
  }
}

}  // namespace

std::vector<SummaryRow> summarize(std::span<const std::vector<BatchMetrics>> streams) {
  std::map<GroupKey, std::vector<BatchMetrics>> groups;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    check_stream(streams[i], i);
    for (const BatchMetrics& r : streams[i]) {
      groups[{r.layers, r.experts, r.tokens, r.capacity, r.strategy}].push_back(r);
    }
  }
  if (groups.empty()) throw AggregationError("no batches to summarize");
  std::vector<SummaryRow> out;
  for (const auto& [key, rows] : groups) {
    const auto& [layers, experts, batch_size, capacity, strategy] = key;
    out.push_back({strategy, layers, experts, capacity, batch_size, aggregate(rows)});
  }
  return out;
}

std::vector<SummaryRow> summarize(std::span<const BatchMetrics> stream) {
  const std::vector<std::vector<BatchMetrics>> one{std::vector<BatchMetrics>(stream.begin(), stream.end())};
  return summarize(one);
}

std::vector<SummaryRow> summarize_files(std::span<const std::filesystem::path> paths) {
  std::vector<std::vector<BatchMetrics>> streams;
  for (const auto& p : paths) streams.push_back(read_metrics_csv(p));
  return summarize(streams);
}

void write_summary_csv(std::span<const SummaryRow> rows, std::ostream& out) {
  out << "strategy,layers,experts,capacity,batch_size,batches,tokens,latency,throughput,utilization,"
         "capacity_utilization,stall,transfer_time,prediction_accuracy\n";
  for (const SummaryRow& r : rows) {
    std::string line(to_string(r.strategy));
    for (long long v : {static_cast<long long>(r.layers), static_cast<long long>(r.experts),
                        static_cast<long long>(r.capacity), static_cast<long long>(r.batch_size),
                        static_cast<long long>(r.total.batches), r.total.tokens}) {
      line += ',' + std::to_string(v);
    }
    for (double v : {r.total.latency, r.total.throughput, r.total.utilization, r.total.capacity_utilization,
                     r.total.stall, r.total.transfer_time, r.total.prediction_accuracy}) {
      line += ',';
      append_double(line, v);
    }
    out << line << '\n';
  }
  if (!out) throw IoError("failed writing summary");
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void write_summary_table(std::span<const SummaryRow> rows, std::ostream& out) {
  const std::vector<std::string> header{"strategy", "L", "E", "C", "B", "batches", "latency", "throughput",
                                        "util", "cap_util", "stall", "transfer", "accuracy"};
  std::vector<std::vector<std::string>> cells{header};
  for (const SummaryRow& r : rows) {
    cells.push_back({std::string(to_string(r.strategy)), std::to_string(r.layers), std::to_string(r.experts),
                     std::to_string(r.capacity), std::to_string(r.batch_size), std::to_string(r.total.batches),
                     fixed(r.total.latency, 2), fixed(r.total.throughput, 4), fixed(100.0 * r.total.utilization, 2) + "%",
                     fixed(100.0 * r.total.capacity_utilization, 2) + "%", fixed(r.total.stall, 2),
                     fixed(r.total.transfer_time, 2), fixed(r.total.prediction_accuracy, 4)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) line += "  ";
      const std::string pad(width[c] - row[c].size(), ' ');
      line += c == 0 ? row[c] + pad : pad + row[c];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  }
  if (!out) throw IoError("failed writing summary table");
}

std::string_view to_string(PlotMetric metric) {
  switch (metric) {
    case PlotMetric::latency:
      return "latency";
    case PlotMetric::throughput:
      return "throughput";
    case PlotMetric::utilization:
      return "utilization";
    case PlotMetric::capacity_utilization:
      return "capacity_utilization";
    case PlotMetric::stall:
      return "stall";
    case PlotMetric::transfer_time:
      return "transfer_time";
    case PlotMetric::accuracy:
      return "prediction_accuracy";
  }
  return "unknown";
}

PlotMetric parse_plot_metric(std::string_view name) {
  for (PlotMetric m : {PlotMetric::latency, PlotMetric::throughput, PlotMetric::utilization,
                       PlotMetric::capacity_utilization, PlotMetric::stall, PlotMetric::transfer_time,
                       PlotMetric::accuracy}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown plot metric '" + std::string(name) + "'");
}

double metric_value(const BatchMetrics& row, PlotMetric metric) {
  switch (metric) {
    case PlotMetric::latency:
      return row.latency;
    case PlotMetric::throughput:
      return row.throughput;
    case PlotMetric::utilization:
      return row.utilization;
    case PlotMetric::capacity_utilization:
      return row.capacity_utilization;
    case PlotMetric::stall:
      return row.stall;
    case PlotMetric::transfer_time:
      return row.transfer_time;
    case PlotMetric::accuracy:
      return row.prediction_accuracy;
  }
  return 0.0;
}

namespace {

double aggregate_value(const Aggregate& a, PlotMetric metric) {
  switch (metric) {
    case PlotMetric::latency:
      return a.latency;
    case PlotMetric::throughput:
      return a.throughput;
    case PlotMetric::utilization:
      return a.utilization;
    case PlotMetric::capacity_utilization:
      return a.capacity_utilization;
    case PlotMetric::stall:
      return a.stall;
    case PlotMetric::transfer_time:
      return a.transfer_time;
    case PlotMetric::accuracy:
      return a.prediction_accuracy;
  }
  return 0.0;
}

}  // namespace

void write_batch_plot(std::span<const BatchMetrics> rows, Strategy strategy, PlotMetric metric, std::ostream& out) {
  std::vector<const BatchMetrics*> picked;
  for (const BatchMetrics& r : rows)
    if (r.strategy == strategy) picked.push_back(&r);
  std::stable_sort(picked.begin(), picked.end(),
                   [](const BatchMetrics* a, const BatchMetrics* b) { return a->batch < b->batch; });
  out << "x,y\n";
  for (const BatchMetrics* r : picked) {
    std::string line = std::to_string(r->batch) + ',';
    append_double(line, metric_value(*r, metric));
    out << line << '\n';
  }
}

void write_experts_plot(std::span<const SummaryRow> rows, Strategy strategy, PlotMetric metric, std::ostream& out) {
  std::vector<const SummaryRow*> picked;
  for (const SummaryRow& r : rows)
    if (r.strategy == strategy) picked.push_back(&r);
  std::stable_sort(picked.begin(), picked.end(),
                   [](const SummaryRow* a, const SummaryRow* b) { return a->experts < b->experts; });
  out << "x,y\n";
  for (const SummaryRow* r : picked) {
    std::string line = std::to_string(r->experts) + ',';
    append_double(line, aggregate_value(r->total, metric));
    out << line << '\n';
  }
}

}  // namespace moesim
