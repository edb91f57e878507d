// SPDX-License-Identifier: Apache-2.0
// moesim: generate traces, train the predictor, simulate and compare
// placement strategies, and summarize metrics.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "moesim/error.hpp"
#include "moesim/pipeline.hpp"
#include "moesim/predictor.hpp"
#include "moesim/report.hpp"
#include "moesim/router.hpp"
#include "moesim/simulator.hpp"
#include "moesim/workload.hpp"

namespace fs = std::filesystem;
using namespace moesim;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

struct RunConfig {
  std::uint64_t seed = 0;
  fs::path out = ".";

  ModelShape shape{4, 8, 32, 64};
  int batches = 100;
  double skew = 1.1;
  int hot_experts = 0;
  bool emit_model = false;

  fs::path trace;
  fs::path params;
  int epochs = 20;
  double lr = 1e-3;
  int sru_layers = kDefaultSruLayers;

  std::string strategy = "replicated";
  int capacity = 0;  // 0: batch size of the trace
  CostModel cost;
  int queue_capacity = 2;
  std::string mode = "sim";
  double hash_build_cost = 1.0;

  std::vector<fs::path> metrics;
  std::vector<std::string> plot_metrics;
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void prepare_out(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out.string() + ": " + ec.message());
}

void add_sim_flags(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--trace", cfg.trace, "Trace file")->required();
  cmd->add_option("--params", cfg.params, "Predictor parameters (default: oracle tables)");
  cmd->add_option("--capacity", cfg.capacity, "Device slots per layer (default: batch size)");
  cmd->add_option("--t-compute", cfg.cost.t_compute, "Time per token per expert pass");
  cmd->add_option("--t-load", cfg.cost.t_load, "Host to device load time per expert");
  cmd->add_option("--t-replicate", cfg.cost.t_replicate, "On-device copy time per replica");
  cmd->add_option("--t-offload", cfg.cost.t_offload, "Device to host time per expert");
  cmd->add_option("--queue-capacity", cfg.queue_capacity, "Hash table queue capacity");
  cmd->add_option("--mode", cfg.mode, "Pipeline mode")->check(CLI::IsMember({"sim", "concurrent"}));
  cmd->add_option("--hash-build-cost", cfg.hash_build_cost, "Simulated time to build one hash table");
}

struct SimInputs {
  RoutingTrace trace;
  TableSource source;
  int capacity = 0;
  PipelineConfig pipeline;
};

SimInputs load_sim_inputs(const RunConfig& cfg) {
  cfg.cost.validate();
  PipelineConfig pipeline{cfg.queue_capacity, parse_pipeline_mode(cfg.mode), cfg.hash_build_cost};
  pipeline.validate();
  if (cfg.capacity < 0) throw ConfigError("--capacity must be >= 1");
  SimInputs in{read_trace(cfg.trace), oracle_source(), cfg.capacity, pipeline};
  if (!cfg.params.empty()) {
    auto params = std::make_shared<const SruParams>(read_predictor(cfg.params));
    if (params->d_model != in.trace.shape().d_model || params->num_moe_layers() != in.trace.shape().num_layers ||
        params->num_experts() != in.trace.shape().experts_per_layer) {
      throw ConfigError("predictor parameters do not match the trace shape");
    }
    in.source = predictor_source(params);
  }
  if (in.capacity == 0) in.capacity = in.trace.shape().batch_size;
  return in;
}

struct StrategyRun {
  std::vector<BatchMetrics> rows;
  std::optional<PipelineFailure> failure;
};

StrategyRun run_strategy(const SimInputs& in, Strategy strategy, const CostModel& cost) {
  PipelineResult result = run_pipeline(in.trace, strategy, in.capacity, in.source, cost, in.pipeline);
  StrategyRun run{{}, result.failure};
  for (const PipelineRecord& r : result.records) run.rows.push_back(r.metrics);
  return run;
}

int report_failure(Strategy strategy, const PipelineFailure& f) {
  std::cerr << "moesim: " << to_string(strategy) << " failed at batch " << f.batch << ": " << f.message
            << " (partial metrics written)\n";
  return kRuntime;
}

int cmd_gen_trace(const RunConfig& cfg) {
  cfg.shape.validate();
  if (cfg.batches < 1) throw ConfigError("--batches must be >= 1");
  prepare_out(cfg);
  const RoutingTrace trace = cfg.hot_experts > 0
                                 ? generate_hot_trace(cfg.shape, cfg.batches, cfg.hot_experts, cfg.seed)
                                 : generate_trace(cfg.shape, cfg.batches, cfg.skew, cfg.seed);
  write_trace(trace, cfg.out / "trace.txt");
  if (cfg.emit_model) write_toy_model(make_toy_model(cfg.shape, cfg.seed), cfg.out / "toy_model.json");
  std::cout << "wrote " << (cfg.out / "trace.txt").string() << " (" << trace.batches.size() << " batches)\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg) {
  TrainConfig train;
  train.epochs = cfg.epochs;
  train.learning_rate = cfg.lr;
  train.seed = cfg.seed;
  train.num_sru_layers = cfg.sru_layers;
  train.validate();
  const RoutingTrace trace = read_trace(cfg.trace);
  prepare_out(cfg);
  const TrainResult result = train_predictor(trace, train);
  write_predictor(result.params, cfg.out / "params.json");
  std::ofstream loss = open_out(cfg.out / "loss.csv");
  write_loss_csv(result.loss_curve, loss);
  double accuracy = 0.0;
  for (const Batch& b : trace.batches) accuracy += evaluate_accuracy(predict_batch(b, result.params), b.oracle_routing);
  std::cout << "final loss " << result.loss_curve.back() << ", training agreement "
            << accuracy / static_cast<double>(trace.batches.size()) << '\n';
  return kOk;
}

int cmd_simulate(const RunConfig& cfg) {
  const Strategy strategy = parse_strategy(cfg.strategy);
  const SimInputs in = load_sim_inputs(cfg);
  prepare_out(cfg);
  const StrategyRun run = run_strategy(in, strategy, cfg.cost);
  write_metrics_csv(run.rows, cfg.out / ("metrics_" + std::string(to_string(strategy)) + ".csv"));
  if (run.failure) return report_failure(strategy, *run.failure);
  write_summary_table(summarize(run.rows), std::cout);
  return kOk;
}

int cmd_compare(const RunConfig& cfg) {
  const SimInputs in = load_sim_inputs(cfg);
  prepare_out(cfg);
  std::vector<BatchMetrics> combined;
  for (Strategy s : {Strategy::resident_all, Strategy::distinct_only, Strategy::replicated}) {
    const StrategyRun run = run_strategy(in, s, cfg.cost);
    combined.insert(combined.end(), run.rows.begin(), run.rows.end());
    if (run.failure) {
      write_metrics_csv(combined, cfg.out / "compare.csv");
      return report_failure(s, *run.failure);
    }
  }
  write_metrics_csv(combined, cfg.out / "compare.csv");
  const std::vector<SummaryRow> summary = summarize(combined);
  std::ofstream csv = open_out(cfg.out / "summary.csv");
  write_summary_csv(summary, csv);
  std::ofstream txt = open_out(cfg.out / "summary.txt");
  write_summary_table(summary, txt);
  write_summary_table(summary, std::cout);
  return kOk;
}

int cmd_report(const RunConfig& cfg) {
  std::vector<PlotMetric> plots;
  for (const std::string& m : cfg.plot_metrics) plots.push_back(parse_plot_metric(m));
  std::vector<std::vector<BatchMetrics>> streams;
  for (const fs::path& p : cfg.metrics) streams.push_back(read_metrics_csv(p));
  const std::vector<SummaryRow> summary = summarize(streams);
  prepare_out(cfg);
  std::ofstream csv = open_out(cfg.out / "summary.csv");
  write_summary_csv(summary, csv);
  std::ofstream txt = open_out(cfg.out / "summary.txt");
  write_summary_table(summary, txt);
  write_summary_table(summary, std::cout);

  std::vector<BatchMetrics> all;
  for (const auto& s : streams) all.insert(all.end(), s.begin(), s.end());
  for (PlotMetric metric : plots) {
    for (Strategy s : {Strategy::resident_all, Strategy::distinct_only, Strategy::replicated}) {
      const bool present =
          std::any_of(summary.begin(), summary.end(), [&](const SummaryRow& r) { return r.strategy == s; });
      if (!present) continue;
      const std::string stem = std::string(to_string(s)) + "_" + std::string(to_string(metric));
      if (streams.size() == 1) {
        std::ofstream out = open_out(cfg.out / ("plot_batch_" + stem + ".csv"));
        write_batch_plot(all, s, metric, out);
      }
      std::ofstream out = open_out(cfg.out / ("plot_experts_" + stem + ".csv"));
      write_experts_plot(summary, s, metric, out);
    }
  }
  return kOk;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kUsage;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const IoError*>(&e) || dynamic_cast<const AggregationError*>(&e)) {
    return kData;
  }
  return kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  CLI::App app{"Mixture-of-experts inference scheduling simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", cfg.seed, "Random seed");
  app.add_option("--out", cfg.out, "Output directory");

  CLI::App* gen = app.add_subcommand("gen-trace", "Synthesize a routing trace");
  gen->add_option("--layers", cfg.shape.num_layers, "MoE layers");
  gen->add_option("--experts", cfg.shape.experts_per_layer, "Experts per layer");
  gen->add_option("--d-model", cfg.shape.d_model, "Embedding width");
  gen->add_option("--batch-size", cfg.shape.batch_size, "Tokens per batch");
  gen->add_option("--batches", cfg.batches, "Number of batches");
  gen->add_option("--skew", cfg.skew, "Zipf exponent of expert popularity");
  gen->add_option("--hot-experts", cfg.hot_experts, "Split every batch evenly over this many experts");
  gen->add_flag("--emit-model", cfg.emit_model, "Also write the toy model weights");

  CLI::App* train = app.add_subcommand("train", "Train the routing predictor on a trace");
  train->add_option("--trace", cfg.trace, "Trace file")->required();
  train->add_option("--epochs", cfg.epochs, "Training epochs");
  train->add_option("--lr", cfg.lr, "Learning rate");
  train->add_option("--sru-layers", cfg.sru_layers, "Stacked SRU layers");

  CLI::App* sim = app.add_subcommand("simulate", "Simulate one placement strategy");
  add_sim_flags(sim, cfg);
  sim->add_option("--strategy", cfg.strategy, "Placement strategy")
      ->check(CLI::IsMember({"resident-all", "distinct", "distinct-only", "replicated"}));

  CLI::App* cmp = app.add_subcommand("compare", "Simulate all three strategies on one trace");
  add_sim_flags(cmp, cfg);

  CLI::App* rep = app.add_subcommand("report", "Summarize metrics CSV files");
  rep->add_option("--metrics", cfg.metrics, "Metrics CSV files")->required();
  rep->add_option("--plot", cfg.plot_metrics, "Write x,y plot data for this metric");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_trace(cfg);
    if (*train) return cmd_train(cfg);
    if (*sim) return cmd_simulate(cfg);
    if (*cmp) return cmd_compare(cfg);
    return cmd_report(cfg);
  } catch (const Error& e) {
    std::cerr << "moesim: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "moesim: " << e.what() << '\n';
    return kRuntime;
  }
}
