// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include "moesim/error.hpp"
#include "moesim/pipeline.hpp"
#include "moesim/workload.hpp"

using namespace moesim;

TEST(Schedule, BuildFasterThanInference) {
  const std::vector<double> inf{5, 5, 5};
  const auto s = schedule_pipeline(inf, 2.0, 1);
  EXPECT_EQ(s.back().end, 17.0);
  EXPECT_EQ(s[0].stall, 2.0);
  EXPECT_EQ(s[1].stall, 0.0);
  EXPECT_EQ(s[2].stall, 0.0);
}

TEST(Schedule, BuildSlowerThanInference) {
  const std::vector<double> inf{5, 5, 5, 5};
  const auto s = schedule_pipeline(inf, 8.0, 1);
  EXPECT_EQ(s[0].stall, 8.0);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_EQ(s[i].stall, 3.0);
}

TEST(Schedule, FreeBuildsOverlapPerfectly) {
  const std::vector<double> inf{3, 1, 4, 1, 5};
  const auto s = schedule_pipeline(inf, 0.0, 100);
  EXPECT_EQ(s.back().end, 14.0);
  for (const auto& e : s) EXPECT_EQ(e.stall, 0.0);
}

TEST(Schedule, OverlapBoundsAndQueueDepth) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::uniform_int_distribution<int> cap(1, 4);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> inf(20);
    for (double& v : inf) v = u(rng);
    const double build = u(rng);
    const int q = cap(rng);
    const auto s = schedule_pipeline(inf, build, q);
    double sum_inf = 0.0, stalls = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      sum_inf += inf[i];
      stalls += s[i].stall;
      ASSERT_LE(s[i].queue_depth, q);
      ASSERT_GE(s[i].queue_depth, 1);
      ASSERT_GE(s[i].start, s[i].enqueue);
      if (i > 0) ASSERT_GE(s[i].start, s[i - 1].end);
    }
    const double total = s.back().end;
    ASSERT_GE(total + 1e-9, std::max(sum_inf, build * static_cast<double>(inf.size())));
    ASSERT_LE(total, build + sum_inf + stalls + 1e-9);
  }
}

TEST(BoundedQueue, FifoAndBounded) {
  BoundedQueue<int> q(2);
  std::thread producer([&] {
    for (int i = 0; i < 1000; ++i) q.push(i);
    q.close();
  });
  int expected = 0;
  while (auto v = q.pop()) EXPECT_EQ(*v, expected++);
  producer.join();
  EXPECT_EQ(expected, 1000);
  EXPECT_LE(q.max_depth(), 2u);
  EXPECT_THROW(BoundedQueue<int>(0), ConfigError);
}

TEST(BoundedQueue, PoisonDeliversPendingThenStops) {
  BoundedQueue<int> q(3);
  q.push(1);
  q.poison(std::make_exception_ptr(std::runtime_error("boom")));
  EXPECT_FALSE(q.push(2));
  EXPECT_EQ(q.pop(), 1);
  EXPECT_FALSE(q.pop().has_value());
  EXPECT_TRUE(q.error());
}

TEST(Pipeline, ModesAgree) {
  const RoutingTrace t = generate_trace({2, 8, 6, 16}, 12, 1.1, 3);
  const auto params = std::make_shared<const SruParams>(init_predictor(6, 2, 8, 2, 3));
  for (int q : {1, 2, 5}) {
    PipelineConfig cfg{q, PipelineMode::simulated, 3.0};
    for (Strategy s : {Strategy::resident_all, Strategy::distinct_only, Strategy::replicated}) {
      EXPECT_TRUE(mode_equivalence_check(t, s, 16, predictor_source(params), CostModel{}, cfg));
      EXPECT_TRUE(mode_equivalence_check(t, s, 16, oracle_source(), CostModel{}, cfg));
    }
  }
}

TEST(Pipeline, DifferentInputsDisagree) {
  const RoutingTrace t = generate_trace({2, 8, 6, 16}, 6, 1.1, 3);
  const auto a = std::make_shared<const SruParams>(init_predictor(6, 2, 8, 2, 3));
  const auto b = std::make_shared<const SruParams>(init_predictor(6, 2, 8, 2, 4));
  EXPECT_FALSE(mode_equivalence_check(t, Strategy::replicated, 16, predictor_source(a), predictor_source(b),
                                      CostModel{}, PipelineConfig{}));
}

TEST(Pipeline, StallAccountingMatchesSchedule) {
  const RoutingTrace t = generate_trace({1, 4, 4, 8}, 3, 1.0, 1);
  PipelineConfig cfg{1, PipelineMode::concurrent, 1000.0};
  const PipelineResult r = run_pipeline(t, Strategy::replicated, 8, oracle_source(), CostModel{}, cfg);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[0].metrics.stall, 1000.0);
  EXPECT_EQ(r.records[0].metrics.start_time, 1000.0);
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_EQ(r.records[i].metrics.stall, 1000.0 - r.records[i - 1].metrics.latency);
    EXPECT_EQ(r.records[i].metrics.start_time, 1000.0 * static_cast<double>(i + 1));
  }
  EXPECT_EQ(r.total_time, 3000.0 + r.records[2].metrics.latency);
}

TEST(Pipeline, ProducerFailureYieldsPartialResults) {
  const RoutingTrace t = generate_trace({1, 4, 4, 8}, 6, 1.0, 1);
  std::atomic<int> calls{0};
  const TableSource flaky = [&](const Batch& b) {
    ++calls;
    if (b.index == 3) throw NumericError("predictor produced NaN");
    return oracle_table(b);
  };
  for (PipelineMode mode : {PipelineMode::simulated, PipelineMode::concurrent}) {
    PipelineConfig cfg{2, mode, 1.0};
    const PipelineResult r = run_pipeline(t, Strategy::replicated, 8, flaky, CostModel{}, cfg);
    ASSERT_TRUE(r.failure.has_value());
    EXPECT_EQ(r.failure->batch, 3);
    EXPECT_NE(r.failure->message.find("NaN"), std::string::npos);
    ASSERT_EQ(r.records.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(r.records[i].table.batch_index, i);
  }
}

TEST(Pipeline, ConsumerFailureStopsProducer) {
  const RoutingTrace t = generate_trace({1, 4, 4, 8}, 50, 1.0, 1);
  const TableSource bad = [](const Batch& b) {
    HashTable h = oracle_table(b);
    if (b.index == 2) h.assignment[0][0] = 99;
    return HashTable::from_assignment(b.index, h.assignment);
  };
  PipelineConfig cfg{1, PipelineMode::concurrent, 1.0};
  const PipelineResult r = run_pipeline(t, Strategy::replicated, 8, bad, CostModel{}, cfg);
  ASSERT_TRUE(r.failure.has_value());
  EXPECT_EQ(r.failure->batch, 2);
  EXPECT_EQ(r.records.size(), 2u);
}

TEST(Pipeline, ModeNames) {
  EXPECT_EQ(parse_pipeline_mode("sim"), PipelineMode::simulated);
  EXPECT_EQ(parse_pipeline_mode("concurrent"), PipelineMode::concurrent);
  EXPECT_THROW(parse_pipeline_mode("async"), ConfigError);
  EXPECT_THROW((PipelineConfig{0, PipelineMode::simulated, 1.0}.validate()), ConfigError);
}
