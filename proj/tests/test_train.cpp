#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"

using namespace sloth;

namespace {

MultiExitNetwork blob_net(std::size_t d, std::size_t m, std::uint64_t seed) {
  MultiExitNetwork net = make_mlp4(d, 1, 1, m, 8);
  net.initialize(seed);
  return net;
}

std::vector<double> head_params(const MultiExitNetwork& net, std::size_t i) {
  std::vector<double> out;
  for (const Layer& l : net.exits()[i].layers)
    for (const Tensor* t : parameters(l)) out.insert(out.end(), t->data().begin(), t->data().end());
  return out;
}

std::vector<double> trunk_params(const MultiExitNetwork& net) {
  std::vector<double> out;
  for (const auto& block : net.blocks())
    for (const Layer& l : block)
      for (const Tensor* t : parameters(l)) out.insert(out.end(), t->data().begin(), t->data().end());
  return out;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const Dataset data = fixtures::blobs(3, 30, 4, 1);
  MultiExitNetwork net = blob_net(4, 3, 2);
  const auto before = fixtures::flat_parameters(net);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 0.0;
  const TrainResult r = train(net, data, cfg);
  EXPECT_EQ(fixtures::flat_parameters(net), before);
  ASSERT_EQ(r.loss_history.size(), 3u);
  EXPECT_EQ(r.loss_history[0], r.loss_history[2]);
}

TEST(Train, LossDecreasesOnSeparableBlobs) {
  const Dataset data = fixtures::blobs(3, 90, 4, 3);
  MultiExitNetwork net = blob_net(4, 3, 4);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 0.1;
  cfg.batch_size = 8;
  const TrainResult r = train(net, data, cfg);
  ASSERT_EQ(r.loss_history.size(), 30u);
  EXPECT_LT(r.loss_history.back(), 0.5 * r.loss_history.front());
  std::size_t correct = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    correct += argmax(forward_all_exits(net, data.inputs[s], false).logits.back().data()) == data.labels[s];
  }
  EXPECT_GE(correct, 60u);  // chance is 30
}

TEST(Train, FinalOnlyWeightsLeaveInternalHeadsUnchanged) {
  const Dataset data = fixtures::blobs(3, 30, 4, 5);
  MultiExitNetwork net = blob_net(4, 3, 6);
  std::vector<std::vector<double>> heads;
  for (std::size_t i = 0; i < net.num_exits(); ++i) heads.push_back(head_params(net, i));
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.exit_weights = {0.0, 0.0, 0.0, 1.0};
  train(net, data, cfg);
  for (std::size_t i = 0; i + 1 < net.num_exits(); ++i) EXPECT_EQ(head_params(net, i), heads[i]) << "head " << i;
  EXPECT_NE(head_params(net, 3), heads[3]);
}

TEST(Train, SameSeedIsBitIdentical) {
  const Dataset data = fixtures::blobs(3, 40, 4, 7);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 7;
  cfg.seed = 11;
  MultiExitNetwork a = blob_net(4, 3, 8), b = blob_net(4, 3, 8), c = blob_net(4, 3, 8);
  train(a, data, cfg);
  train(b, data, cfg);
  EXPECT_TRUE(a == b);
  cfg.seed = 12;
  train(c, data, cfg);
  EXPECT_FALSE(a == c);
}

TEST(Train, RejectsBadConfigurations) {
  const Dataset data = fixtures::blobs(3, 10, 4, 9);
  MultiExitNetwork net = blob_net(4, 3, 10);
  TrainConfig cfg;
  cfg.exit_weights = {1.0, 1.0};
  EXPECT_THROW(train(net, data, cfg), Error);
  cfg.exit_weights = {1.0, 1.0, 1.0, 0.0};
  EXPECT_THROW(train(net, data, cfg), Error);
  cfg.exit_weights = {-1.0, 1.0, 1.0, 1.0};
  EXPECT_THROW(train(net, data, cfg), Error);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(train(net, data, cfg), Error);
  cfg = TrainConfig{};
  EXPECT_THROW(train(net, data.empty_like(), cfg), Error);
  MultiExitNetwork wrong = blob_net(5, 3, 10);
  EXPECT_THROW(train(wrong, data, cfg), ShapeError);
}

TEST(AdvTrain, NoInnerIterationsMatchesStandardTraining) {
  const Dataset data = fixtures::blobs(3, 30, 4, 13);
  AdvTrainConfig at;
  at.base_epochs = 2;
  at.head_epochs = 2;
  at.batch_size = 8;
  at.inner_iterations = 0;
  at.seed = 5;
  MultiExitNetwork adv = blob_net(4, 3, 14);
  adversarial_train(adv, data, Regime::deepsloth, at);

  MultiExitNetwork plain = blob_net(4, 3, 14);
  TrainConfig base;
  base.epochs = 2;
  base.batch_size = 8;
  base.seed = 5;
  base.exit_weights = {0.0, 0.0, 0.0, 1.0};
  base.train_heads = {false, false, false, true};
  train(plain, data, base);
  TrainConfig heads;
  heads.epochs = 2;
  heads.batch_size = 8;
  heads.seed = 6;
  heads.train_trunk = false;
  heads.train_heads = {true, true, true, false};
  train(plain, data, heads);
  EXPECT_TRUE(adv == plain);
}

TEST(AdvTrain, FrozenPhaseOnlyMovesInternalHeads) {
  const Dataset data = fixtures::blobs(3, 20, 4, 15);
  MultiExitNetwork net = blob_net(4, 3, 16);
  const auto trunk = trunk_params(net);
  const auto final_head = head_params(net, 3);
  const auto first_head = head_params(net, 0);
  AdvTrainConfig at;
  at.base_epochs = 0;
  at.head_epochs = 1;
  at.inner_iterations = 2;
  at.epsilon = 0.05;
  at.batch_size = 5;
  for (Regime r : {Regime::pgd10, Regime::deepsloth_plus_pgd10}) {
    MultiExitNetwork copy = net;
    adversarial_train(copy, data, r, at);
    EXPECT_EQ(trunk_params(copy), trunk) << to_string(r);
    EXPECT_EQ(head_params(copy, 3), final_head) << to_string(r);
    EXPECT_NE(head_params(copy, 0), first_head) << to_string(r);
  }
}

TEST(AdvTrain, InnerStepDefault) {
  AdvTrainConfig at;
  at.epsilon = 0.04;
  at.inner_iterations = 10;
  EXPECT_DOUBLE_EQ(at.step(), 0.01);
  at.inner_step = 0.003;
  EXPECT_DOUBLE_EQ(at.step(), 0.003);
}

TEST(AdvTrain, RegimeNames) {
  for (Regime r : {Regime::pgd10, Regime::pgd10_avg, Regime::pgd10_max, Regime::deepsloth,
                   Regime::deepsloth_plus_pgd10}) {
    EXPECT_EQ(regime_from_string(to_string(r)), r);
  }
  EXPECT_THROW(regime_from_string("fgsm"), Error);
}
