#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "test_support.hpp"

using namespace sloth;

namespace {

std::vector<InferenceRecord> at_costs(std::initializer_list<double> costs) {
  std::vector<InferenceRecord> r;
  for (double c : costs) r.push_back({1, c, 0, 0.0});
  return r;
}

constexpr double kTwoOverG = 2.0 / 1001.0;

}  // namespace

TEST(EEC, AllAtFinalExit) {
  const EECCurve c = build_eec(at_costs({1.0, 1.0, 1.0}));
  ASSERT_EQ(c.grid.size(), 1001u);
  for (std::size_t k = 0; k + 1 < c.values.size(); ++k) EXPECT_EQ(c.values[k], 0.0);
  EXPECT_EQ(c.values.back(), 1.0);
  EXPECT_LE(efficacy(c), 1.0 / 1001.0);
}

TEST(EEC, AllAtZeroCost) {
  const EECCurve c = build_eec(at_costs({0.0, 0.0}));
  for (double v : c.values) EXPECT_EQ(v, 1.0);
  EXPECT_NEAR(efficacy(c), 1.0, 1e-12);
}

TEST(EEC, HalfAndFull) {
  const EECCurve c = build_eec(at_costs({0.5, 1.0}));
  for (std::size_t k = 0; k < c.grid.size(); ++k) {
    const double expect = c.grid[k] < 0.5 ? 0.0 : (c.grid[k] < 1.0 ? 0.5 : 1.0);
    EXPECT_EQ(c.values[k], expect) << "at " << c.grid[k];
  }
  EXPECT_NEAR(efficacy(c), 0.25, kTwoOverG);
}

TEST(EEC, CurveIsMonotoneCdf) {
  std::mt19937_64 rng(1);
  const auto recs = fixtures::random_records(rng, 50, 4);
  const EECCurve c = build_eec(recs);
  for (std::size_t k = 1; k < c.values.size(); ++k) EXPECT_GE(c.values[k], c.values[k - 1]);
  EXPECT_EQ(c.values.back(), 1.0);
}

TEST(EEC, EfficacyMatchesMeanCostIdentity) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 300; ++t) {
    const auto recs = fixtures::random_records(rng, 1 + rng() % 200, 1 + rng() % 6);
    double mean = 0.0;
    for (const auto& r : recs) mean += r.cost_fraction;
    mean /= static_cast<double>(recs.size());
    EXPECT_NEAR(efficacy(build_eec(recs)), 1.0 - mean, kTwoOverG);
  }
}

TEST(EEC, Errors) {
  EXPECT_THROW(build_eec(std::vector<InferenceRecord>{}), Error);
  EXPECT_THROW(build_eec(at_costs({0.5}), 1), Error);
  EXPECT_THROW(efficacy(EECCurve{{0.0, 1.0}, {1.0}}), Error);
}

TEST(EEC, CsvHasOneRowPerGridPoint) {
  std::ostringstream os;
  write_eec_csv(os, build_eec(at_costs({0.3})));
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "cost_fraction,cumulative_fraction");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 1001u);
}

TEST(Evaluate, NeverThresholdsKeepFullAccuracy) {
  std::mt19937_64 rng(3);
  const MultiExitNetwork net = fixtures::random_net(rng, true);
  std::vector<Tensor> xs;
  std::vector<std::uint32_t> ys;
  for (int s = 0; s < 30; ++s) {
    xs.push_back(fixtures::random_tensor(net.input_shape(), rng, 0, 1));
    ys.push_back(static_cast<std::uint32_t>(argmax(forward_all_exits(net, xs.back(), false).logits.back().data())));
  }
  const EvalReport r = evaluate(net, ExitPolicy::never(Criterion::confidence, net.num_exits()), xs, ys);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_LE(r.efficacy, 1.0 / 1001.0);
  EXPECT_EQ(r.per_exit_counts.back(), 30u);
}

TEST(Evaluate, UniformNetNeverExitsEarly) {
  // All-zero weights give constant uniform logits at every exit.
  MultiExitNetwork net = make_conv4(1, 8, 8, 4, 2);
  std::mt19937_64 rng(4);
  std::vector<Tensor> xs;
  std::vector<std::uint32_t> ys;
  for (int s = 0; s < 10; ++s) {
    xs.push_back(fixtures::random_tensor(net.input_shape(), rng, 0, 1));
    ys.push_back(s % 4);
  }
  for (double t : {0.26, 0.5, 0.99}) {
    const EvalReport r = evaluate(net, ExitPolicy::shared(Criterion::confidence, 4, t), xs, ys);
    EXPECT_EQ(r.per_exit_counts, (std::vector<std::size_t>{0, 0, 0, 10}));
  }
}

TEST(Evaluate, MatchesRecomputationFromRecords) {
  std::mt19937_64 rng(5);
  const MultiExitNetwork net = fixtures::random_net(rng, true);
  std::vector<Tensor> xs;
  std::vector<std::uint32_t> ys;
  for (int s = 0; s < 60; ++s) {
    xs.push_back(fixtures::random_tensor(net.input_shape(), rng, 0, 1));
    ys.push_back(static_cast<std::uint32_t>(rng() % net.num_classes()));
  }
  const ExitPolicy p = ExitPolicy::shared(Criterion::entropy, net.num_exits(), 0.6);
  const EvalReport r = evaluate(net, p, xs, ys);
  double correct = 0.0, cost = 0.0;
  std::vector<std::size_t> counts(net.num_exits(), 0);
  for (std::size_t s = 0; s < xs.size(); ++s) {
    const auto rec = adaptive_infer(net, p, xs[s]);
    EXPECT_EQ(rec, r.records[s]);
    correct += rec.predicted_label == ys[s];
    cost += rec.cost_fraction;
    ++counts[rec.exit_index - 1];
  }
  EXPECT_EQ(r.accuracy, correct / 60.0);
  EXPECT_EQ(r.per_exit_counts, counts);
  EXPECT_NEAR(r.efficacy, 1.0 - cost / 60.0, kTwoOverG);
  EXPECT_EQ(r.n, 60u);
}

TEST(Evaluate, RejectsOutOfRangeLabels) {
  std::mt19937_64 rng(6);
  const MultiExitNetwork net = fixtures::random_net(rng, false);
  std::vector<Tensor> xs{fixtures::random_tensor(net.input_shape(), rng, 0, 1)};
  std::vector<std::uint32_t> ys{static_cast<std::uint32_t>(net.num_classes())};
  EXPECT_THROW(evaluate(net, ExitPolicy::never(Criterion::confidence, net.num_exits()), xs, ys), Error);
}

TEST(Report, RowFormat) {
  EvalReport r;
  r.efficacy = 0.25;
  r.accuracy = 0.5;
  r.mean_cost_fraction = 0.75;
  r.n = 2;
  EXPECT_EQ(report_row("rad5/clean", r), "rad5/clean,0.25,0.5,0.75,2");
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}
