#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "test_support.hpp"

using namespace sloth;

namespace {

MultiExitNetwork trained_like_conv4(std::uint64_t seed) {
  MultiExitNetwork net = make_conv4(1, 8, 8, 5, 2);
  net.initialize(seed);
  std::mt19937_64 rng(seed + 1);
  fixtures::randomize_biases(net, rng);
  return net;
}

}  // namespace

TEST(MultiExit, SingleExitIsPlainClassifier) {
  Dense d(4, 3);
  std::mt19937_64 rng(1);
  d.weight = fixtures::random_tensor({3, 4}, rng);
  MultiExitNetwork net({4, 1, 1}, 3, {{Flatten{}, d}}, {{0, {}}});
  EXPECT_EQ(net.cost_fractions(), std::vector<double>{1.0});
  const Tensor x({4, 1, 1}, {0.1, 0.2, 0.3, 0.4});
  const ExitOutputs out = forward_all_exits(net, x, false);
  ASSERT_EQ(out.logits.size(), 1u);
  EXPECT_EQ(out.logits[0], layer_forward(d, x.reshaped({4})));
}

TEST(MultiExit, ShapeContract) {
  std::mt19937_64 rng(2);
  std::vector<std::vector<Layer>> blocks{{Flatten{}, Dense(6, 5), Relu{}}, {Dense(5, 5), Relu{}}, {Dense(5, 4), Relu{}}};
  std::vector<ExitHead> exits{{0, {Dense(5, 7)}}, {1, {Dense(5, 7)}}, {2, {Dense(4, 7)}}};
  MultiExitNetwork net({6, 1, 1}, 7, blocks, exits);
  net.initialize(3);
  const ExitOutputs out = forward_all_exits(net, fixtures::random_tensor({6, 1, 1}, rng, 0, 1), false);
  ASSERT_EQ(out.logits.size(), 3u);
  for (const Tensor& l : out.logits) EXPECT_EQ(l.shape(), Shape{7});
}

TEST(MultiExit, BlockTamperingOnlyAffectsLaterExits) {
  MultiExitNetwork net = trained_like_conv4(4);
  std::mt19937_64 rng(5);
  const Tensor x = fixtures::random_tensor(net.input_shape(), rng, 0, 1);
  const ExitOutputs before = forward_all_exits(net, x, false);
  for (std::size_t block = 0; block < net.num_blocks(); ++block) {
    MultiExitNetwork tampered = net;
    for (Layer& l : tampered.blocks()[block]) {
      for (Tensor* p : parameters(l))
        for (double& v : p->data()) v += 0.5;
    }
    const ExitOutputs after = forward_all_exits(tampered, x, false);
    for (std::size_t i = 0; i < net.num_exits(); ++i) {
      if (net.exits()[i].attach_block < block) {
        EXPECT_EQ(after.logits[i], before.logits[i]) << "block " << block << " exit " << i;
      } else {
        EXPECT_NE(after.logits[i], before.logits[i]) << "block " << block << " exit " << i;
      }
    }
  }
}

TEST(MultiExit, HeadTamperingOnlyAffectsItsExit) {
  MultiExitNetwork net = trained_like_conv4(6);
  std::mt19937_64 rng(7);
  const Tensor x = fixtures::random_tensor(net.input_shape(), rng, 0, 1);
  const ExitOutputs before = forward_all_exits(net, x, false);
  for (std::size_t h = 0; h < net.num_exits(); ++h) {
    MultiExitNetwork tampered = net;
    for (Layer& l : tampered.exits()[h].layers) {
      for (Tensor* p : parameters(l))
        for (double& v : p->data()) v -= 0.25;
    }
    const ExitOutputs after = forward_all_exits(tampered, x, false);
    for (std::size_t i = 0; i < net.num_exits(); ++i) {
      EXPECT_EQ(after.logits[i] == before.logits[i], i != h);
    }
  }
}

TEST(MultiExit, ForwardMatchesStepwiseInference) {
  const MultiExitNetwork net = trained_like_conv4(8);
  std::mt19937_64 rng(9);
  const Tensor x = fixtures::random_tensor(net.input_shape(), rng, 0, 1);
  const ExitOutputs out = forward_all_exits(net, x, false);
  const std::vector<ExitScore> trace = trace_exits(net, x);
  ASSERT_EQ(trace.size(), out.logits.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    EXPECT_EQ(trace[i].prediction, argmax(out.logits[i].data()));
  }
}

TEST(CostFractions, BlockArithmetic) {
  const CostModel cm{{100, 100, 200}, {0, 0, 0}};
  EXPECT_EQ(compute_cost_fractions({0, 1, 2}, cm), (std::vector<double>{0.25, 0.5, 1.0}));
  EXPECT_EQ(compute_cost_fractions({2}, CostModel{{100, 100, 200}, {0}}), std::vector<double>{1.0});
}

TEST(CostFractions, HeadsCountTowardTheirExit) {
  const CostModel cm{{100, 100, 200}, {20, 20, 0}};
  const auto fr = compute_cost_fractions({0, 1, 2}, cm);
  EXPECT_DOUBLE_EQ(fr[0], 120.0 / 400.0);
  EXPECT_DOUBLE_EQ(fr[1], 220.0 / 400.0);
  EXPECT_EQ(fr[2], 1.0);
}

TEST(CostFractions, InvalidModels) {
  EXPECT_THROW(compute_cost_fractions({0, 1}, CostModel{{100, 0}, {0, 0}}), Error);
  EXPECT_THROW(compute_cost_fractions({0, 1}, CostModel{{100}, {0, 0}}), Error);
  EXPECT_THROW(compute_cost_fractions({0, 1}, CostModel{{100, 100}, {0}}), Error);
  // A head heavier than the rest of the network breaks monotonicity.
  EXPECT_THROW(compute_cost_fractions({0, 1}, CostModel{{100, 100}, {500, 0}}), Error);
}

TEST(CostFractions, HandCountedFlops) {
  // conv 1->2, 3x3, pad 1 on 4x4: 2*9*1*2*4*4 = 576; dense 32->8: 512; heads 32->3: 192, 8->3: 48.
  std::vector<std::vector<Layer>> blocks{{Conv2d(1, 2, 3, 1, 1), Relu{}}, {Flatten{}, Dense(32, 8), Relu{}}};
  std::vector<ExitHead> exits{{0, {Flatten{}, Dense(32, 3)}}, {1, {Dense(8, 3)}}};
  const MultiExitNetwork net({1, 4, 4}, 3, blocks, exits);
  const CostModel cm = net.flop_cost_model();
  EXPECT_EQ(cm.block_flops, (std::vector<std::uint64_t>{576, 512}));
  EXPECT_EQ(cm.head_flops, (std::vector<std::uint64_t>{192, 48}));
  EXPECT_DOUBLE_EQ(net.cost_fractions()[0], (576.0 + 192.0) / (576.0 + 512.0 + 48.0));
  EXPECT_EQ(net.cost_fractions()[1], 1.0);
}

TEST(CostFractions, StockModelsAreIncreasing) {
  for (const char* arch : {"conv4", "mlp4"}) {
    const MultiExitNetwork net = make_architecture(arch, {1, 16, 16}, 8);
    const auto& fr = net.cost_fractions();
    ASSERT_EQ(fr.size(), 4u);
    for (std::size_t i = 0; i + 1 < fr.size(); ++i) EXPECT_LT(fr[i], fr[i + 1]);
    EXPECT_EQ(fr.back(), 1.0);
  }
}

TEST(MultiExit, RejectsInvalidConstructions) {
  using Blocks = std::vector<std::vector<Layer>>;
  EXPECT_THROW(MultiExitNetwork({4, 1, 1}, 3, Blocks{}, {{0, {}}}), ShapeError);
  EXPECT_THROW(MultiExitNetwork({4, 1, 1}, 3, Blocks{{Flatten{}, Dense(4, 3)}}, {}), ShapeError);
  EXPECT_THROW(MultiExitNetwork({4, 1, 1}, 3, Blocks{{Flatten{}, Dense(4, 2)}}, {{0, {}}}), ShapeError);
  EXPECT_THROW(MultiExitNetwork({4, 1, 1}, 3, Blocks{{Flatten{}, Dense(4, 3)}, {Dense(3, 3)}}, {{0, {}}}),
               ShapeError);
  EXPECT_THROW(MultiExitNetwork({4, 1, 1}, 3, Blocks{{Flatten{}, Dense(5, 3)}}, {{0, {}}}), ShapeError);
  const MultiExitNetwork net = make_conv4(1, 8, 8, 3, 2);
  EXPECT_THROW(forward_all_exits(net, Tensor({1, 4, 4}), false), ShapeError);
}

TEST(ModelIO, RoundTripIsBitExact) {
  MultiExitNetwork net = trained_like_conv4(10);
  net.metadata()["note"] = "round trip";
  const MultiExitNetwork back = deserialize_model(serialize_model(net));
  EXPECT_TRUE(back == net);
  std::mt19937_64 rng(11);
  const Tensor x = fixtures::random_tensor(net.input_shape(), rng, 0, 1);
  EXPECT_EQ(forward_all_exits(back, x, false).logits, forward_all_exits(net, x, false).logits);
  EXPECT_EQ(back.cost_fractions(), net.cost_fractions());
}

TEST(ModelIO, FileRoundTrip) {
  const MultiExitNetwork net = make_mlp4(1, 4, 4, 3, 6);
  const auto path = std::filesystem::temp_directory_path() / "sloth_model_roundtrip.mxnn";
  save_model(net, path.string());
  EXPECT_TRUE(load_model(path.string()) == net);
  std::filesystem::remove(path);
  EXPECT_THROW(load_model(path.string()), Error);
}

TEST(ModelIO, CorruptionIsDetected) {
  const auto bytes = serialize_model(trained_like_conv4(12));
  auto expect_message = [](std::vector<unsigned char> b, const std::string& needle) {
    try {
      deserialize_model(std::move(b));
      ADD_FAILURE() << "no error for " << needle;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  expect_message(bad_magic, "bad magic");

  auto future = bytes;
  future[4] = 99;
  expect_message(future, "version");

  auto flipped = bytes;
  flipped[bytes.size() - 10] ^= 0x01;
  expect_message(flipped, "checksum");

  expect_message(std::vector<unsigned char>(bytes.begin(), bytes.end() - 3), "truncated");
  expect_message(std::vector<unsigned char>(bytes.begin(), bytes.begin() + 2), "bad magic");

  auto trailing = bytes;
  trailing.push_back(0);
  expect_message(trailing, "trailing");
}
