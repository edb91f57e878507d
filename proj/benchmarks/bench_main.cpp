// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <memory>
#include <random>
#include <sstream>
#include <thread>

#include "moesim/pipeline.hpp"
#include "moesim/placement.hpp"
#include "moesim/planner.hpp"
#include "moesim/predictor.hpp"
#include "moesim/report.hpp"
#include "moesim/simulator.hpp"
#include "moesim/sparsemax.hpp"
#include "moesim/workload.hpp"

using namespace moesim;

static void BM_Sparsemax(benchmark::State& state) {
  const Eigen::VectorXd z = Eigen::VectorXd::Random(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sparsemax(z));
}
BENCHMARK(BM_Sparsemax)->Arg(8)->Arg(64)->Arg(128);

static void BM_SruForward(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const SruParams p = init_predictor(d, 4, 8, 10, 1);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(64, d);
  for (auto _ : state) benchmark::DoNotOptimize(sru_forward(x, p));
}
BENCHMARK(BM_SruForward)->Arg(16)->Arg(32)->Arg(64);

static void BM_TrainStep(benchmark::State& state) {
  const RoutingTrace t = generate_trace({4, 8, 32, 64}, 1, 1.1, 2);
  const SruParams p = init_predictor(32, 4, 8, 10, 2);
  SruParams grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(batch_loss_and_gradient(p, t.batches[0].embeddings, t.batches[0].oracle_routing, grad));
  }
}
BENCHMARK(BM_TrainStep);

static void BM_CapReplicas(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> count(1, 50);
  DemandMap demand;
  for (int e = 0; e < state.range(0); ++e) demand[e] = count(rng);
  for (auto _ : state) benchmark::DoNotOptimize(cap_replicas(demand, static_cast<int>(state.range(0)) * 4));
}
BENCHMARK(BM_CapReplicas)->Arg(8)->Arg(64)->Arg(128);

static void BM_ApplyBatch(benchmark::State& state) {
  const int experts = static_cast<int>(state.range(0));
  const RoutingTrace t = generate_trace({4, experts, 16, 64}, 8, 1.2, 4);
  std::vector<HashTable> tables;
  for (const Batch& b : t.batches) tables.push_back(oracle_table(b));
  DeviceState device(4, experts, 64);
  std::size_t i = 0;
  for (auto _ : state) {
    const HashTable& table = tables[i++ % tables.size()];
    benchmark::DoNotOptimize(apply_batch(device, table, plan_all_layers(table, 64)));
  }
}
BENCHMARK(BM_ApplyBatch)->Arg(8)->Arg(64);

static void BM_SimulateStrategy(benchmark::State& state) {
  const RoutingTrace t = generate_trace({4, 64, 16, 64}, 50, 1.2, 5);
  const auto strategy = static_cast<Strategy>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(simulate_strategy(t, strategy, 64, oracle_source(), CostModel{}));
  state.SetLabel(std::string(to_string(strategy)));
}
BENCHMARK(BM_SimulateStrategy)->DenseRange(0, 2);

static void BM_QueueHandoff(benchmark::State& state) {
  for (auto _ : state) {
    BoundedQueue<int> q(static_cast<std::size_t>(state.range(0)));
    std::thread producer([&] {
      for (int i = 0; i < 10000; ++i) q.push(i);
      q.close();
    });
    long long sum = 0;
    while (auto v = q.pop()) sum += *v;
    producer.join();
    benchmark::DoNotOptimize(sum);
  }
}
BENCHMARK(BM_QueueHandoff)->Arg(1)->Arg(2)->Arg(16);

static void BM_PipelineConcurrent(benchmark::State& state) {
  const RoutingTrace t = generate_trace({2, 8, 16, 64}, 40, 1.1, 6);
  const auto params = std::make_shared<const SruParams>(init_predictor(16, 2, 8, 4, 6));
  const PipelineConfig cfg{2, static_cast<PipelineMode>(state.range(0)), 1.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_pipeline(t, Strategy::replicated, 64, predictor_source(params), CostModel{}, cfg));
  }
  state.SetLabel(std::string(to_string(cfg.mode)));
}
BENCHMARK(BM_PipelineConcurrent)->Arg(0)->Arg(1);

static void BM_Summarize(benchmark::State& state) {
  const RoutingTrace t = generate_trace({2, 8, 16, 64}, 200, 1.1, 7);
  const auto rows = simulate_strategy(t, Strategy::replicated, 64, oracle_source(), CostModel{}).batches;
  std::ostringstream csv;
  write_metrics_csv(rows, csv);
  const std::string text = csv.str();
  for (auto _ : state) {
    std::istringstream in(text);
    benchmark::DoNotOptimize(summarize(read_metrics_csv(in)));
  }
}
BENCHMARK(BM_Summarize);
BENCHMARK_MAIN();
