#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sloth/autodiff.hpp"

namespace sloth {

/// Internal classifier attached after a trunk block (0-based block index).
struct ExitHead {
  std::size_t attach_block = 0;
  std::vector<Layer> layers;

  friend bool operator==(const ExitHead&, const ExitHead&) = default;
};

/// FLOP counts per trunk block and per exit head.
struct CostModel {
  std::vector<std::uint64_t> block_flops;
  std::vector<std::uint64_t> head_flops;

  friend bool operator==(const CostModel&, const CostModel&) = default;
};

/// cost_i = (blocks up to the attach point + head i) / (all blocks + final head).
inline std::vector<double> compute_cost_fractions(const std::vector<std::size_t>& attach_points,
                                                  const CostModel& cost) {
  if (attach_points.empty()) throw Error("cost fractions need at least one exit");
  if (cost.head_flops.size() != attach_points.size()) {
    throw Error("cost model is missing exit-head entries");
  }
  if (cost.block_flops.size() <= attach_points.back()) {
    throw Error("cost model is missing block entries");
  }
  for (std::uint64_t f : cost.block_flops) {
    if (f == 0) throw Error("cost model block FLOPs must be positive");
  }
  const std::size_t K = attach_points.size();
  std::vector<double> prefix(cost.block_flops.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < cost.block_flops.size(); ++j) {
    acc += static_cast<double>(cost.block_flops[j]);
    prefix[j] = acc;
  }
  const double full = prefix.back() + static_cast<double>(cost.head_flops.back());
  std::vector<double> fr(K);
  for (std::size_t i = 0; i < K; ++i) {
    fr[i] = (prefix[attach_points[i]] + static_cast<double>(cost.head_flops[i])) / full;
  }
  fr.back() = 1.0;
  for (std::size_t i = 0; i + 1 < K; ++i) {
    if (!(fr[i] > 0.0 && fr[i] < fr[i + 1])) {
      throw Error("cost fractions must be strictly increasing in (0, 1]");
    }
  }
  return fr;
}

/// Trunk blocks with K exit heads; the last head is the final classifier.
class MultiExitNetwork {
 public:
  MultiExitNetwork() = default;

  MultiExitNetwork(Shape input_shape, std::size_t num_classes, std::vector<std::vector<Layer>> blocks,
                   std::vector<ExitHead> exits)
      : input_shape_(std::move(input_shape)), num_classes_(num_classes), blocks_(std::move(blocks)),
        exits_(std::move(exits)) {
    validate();
    set_cost_model(flop_cost_model());
  }

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t num_blocks() const noexcept { return blocks_.size(); }
  std::size_t num_exits() const noexcept { return exits_.size(); }
  const std::vector<std::vector<Layer>>& blocks() const noexcept { return blocks_; }
  std::vector<std::vector<Layer>>& blocks() noexcept { return blocks_; }
  const std::vector<ExitHead>& exits() const noexcept { return exits_; }
  std::vector<ExitHead>& exits() noexcept { return exits_; }
  const std::vector<double>& cost_fractions() const noexcept { return cost_fractions_; }
  const Shape& block_output_shape(std::size_t j) const { return block_shapes_.at(j); }

  std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
  const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

  std::vector<std::size_t> attach_points() const {
    std::vector<std::size_t> a;
    for (const ExitHead& e : exits_) a.push_back(e.attach_block);
    return a;
  }

  CostModel flop_cost_model() const {
    CostModel cm;
    Shape s = input_shape_;
    for (const auto& b : blocks_) {
      cm.block_flops.push_back(chain_flops(b, s));
      s = chain_output_shape(b, s);
    }
    for (const ExitHead& e : exits_) {
      cm.head_flops.push_back(chain_flops(e.layers, block_shapes_[e.attach_block]));
    }
    return cm;
  }

  /// Replace the default FLOP-derived cost fractions.
  void set_cost_model(const CostModel& cm) {
    cost_fractions_ = compute_cost_fractions(attach_points(), cm);
    cost_model_ = cm;
  }

  const CostModel& cost_model() const noexcept { return cost_model_; }

  /// He-uniform weights, zero biases, drawn in a fixed parameter order.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for_each_layer([&](Layer& l) {
      if (auto* d = std::get_if<Dense>(&l)) init_weights(d->weight, d->in, rng);
      if (auto* c = std::get_if<Conv2d>(&l)) init_weights(c->weight, c->in_ch * c->kernel * c->kernel, rng);
    });
  }

  /// Visits blocks in order, then heads in order.
  template <typename Fn>
  void for_each_layer(Fn&& fn) {
    for (auto& b : blocks_)
      for (Layer& l : b) fn(l);
    for (ExitHead& e : exits_)
      for (Layer& l : e.layers) fn(l);
  }

  template <typename Fn>
  void for_each_layer(Fn&& fn) const {
    for (const auto& b : blocks_)
      for (const Layer& l : b) fn(l);
    for (const ExitHead& e : exits_)
      for (const Layer& l : e.layers) fn(l);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_layer([&](const Layer& l) {
      for (const Tensor* p : parameters(l)) n += p->size();
    });
    return n;
  }

  friend bool operator==(const MultiExitNetwork& a, const MultiExitNetwork& b) {
    return a.input_shape_ == b.input_shape_ && a.num_classes_ == b.num_classes_ &&
           a.blocks_ == b.blocks_ && a.exits_ == b.exits_ && a.metadata_ == b.metadata_ &&
           a.cost_model_ == b.cost_model_ && a.cost_fractions_ == b.cost_fractions_;
  }

 private:
  static void init_weights(Tensor& w, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : w.data()) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      v = (2.0 * u - 1.0) * bound;
    }
  }

  void validate() {
    if (input_shape_.empty() || shape_numel(input_shape_) == 0) throw ShapeError("empty input shape");
    if (num_classes_ < 2) throw ShapeError("need at least two classes");
    if (blocks_.empty()) throw ShapeError("network has no blocks");
    if (exits_.empty()) throw ShapeError("network has no exits");
    block_shapes_.clear();
    Shape s = input_shape_;
    for (const auto& b : blocks_) {
      if (b.empty()) throw ShapeError("empty block");
      s = chain_output_shape(b, s);
      block_shapes_.push_back(s);
    }
    for (std::size_t i = 0; i < exits_.size(); ++i) {
      const ExitHead& e = exits_[i];
      if (e.attach_block >= blocks_.size()) throw ShapeError("exit attaches past the last block");
      if (i > 0 && e.attach_block <= exits_[i - 1].attach_block) {
        throw ShapeError("exit attach points must be strictly increasing");
      }
      const Shape out = chain_output_shape(e.layers, block_shapes_[e.attach_block]);
      if (out != Shape{num_classes_}) {
        throw ShapeError("exit " + std::to_string(i + 1) + " outputs " + shape_str(out) + ", expected [" +
                         std::to_string(num_classes_) + "]");
      }
    }
    if (exits_.back().attach_block != blocks_.size() - 1) {
      throw ShapeError("final exit must attach after the last block");
    }
  }

  Shape input_shape_;
  std::size_t num_classes_ = 0;
  std::vector<std::vector<Layer>> blocks_;
  std::vector<ExitHead> exits_;
  std::vector<Shape> block_shapes_;
  CostModel cost_model_;
  std::vector<double> cost_fractions_;
  std::map<std::string, std::string> metadata_;
};

/// Recorded forward pass through the trunk and every exit head.
class MultiExitTape {
 public:
  MultiExitTape(const MultiExitNetwork& net, std::vector<GradientTape> blocks, std::vector<GradientTape> heads)
      : net_(&net), blocks_(std::move(blocks)), heads_(std::move(heads)) {}

  MultiExitTape(MultiExitTape&&) noexcept = default;
  MultiExitTape& operator=(MultiExitTape&&) noexcept = default;

  bool consumed() const noexcept { return consumed_; }
  const MultiExitNetwork& network() const noexcept { return *net_; }

 private:
  friend struct MultiExitBackward;
  const MultiExitNetwork* net_;
  std::vector<GradientTape> blocks_;
  std::vector<GradientTape> heads_;
  bool consumed_ = false;
};

struct ExitOutputs {
  std::vector<Tensor> logits;
  std::optional<MultiExitTape> tape;
};

/// One shared trunk pass; logits[i] comes from exit i's head.
inline ExitOutputs forward_all_exits(const MultiExitNetwork& net, const Tensor& x, bool record) {
  if (x.shape() != net.input_shape()) {
    throw ShapeError("input shape " + shape_str(x.shape()) + " does not match network input " +
                     shape_str(net.input_shape()));
  }
  ExitOutputs out;
  std::vector<GradientTape> block_tapes, head_tapes;
  std::size_t next_exit = 0;
  Tensor cur = x;
  for (std::size_t j = 0; j < net.num_blocks(); ++j) {
    ForwardResult fr = forward(net.blocks()[j], cur, record);
    cur = fr.output();
    if (record) block_tapes.push_back(std::move(*fr.tape));
    while (next_exit < net.num_exits() && net.exits()[next_exit].attach_block == j) {
      ForwardResult hr = forward(net.exits()[next_exit].layers, cur, record);
      out.logits.push_back(hr.output());
      if (record) head_tapes.push_back(std::move(*hr.tape));
      ++next_exit;
    }
  }
  if (record) out.tape.emplace(net, std::move(block_tapes), std::move(head_tapes));
  return out;
}

struct NetworkGradients {
  Tensor input;
  /// Per block, per layer. Empty unless parameter gradients were requested.
  std::vector<std::vector<LayerGrads>> blocks;
  /// Per exit head, per layer.
  std::vector<std::vector<LayerGrads>> heads;
};

struct MultiExitBackward {
  /// `logit_grads[i]` is dLoss/dlogits of exit i; an empty tensor means zero.
  static NetworkGradients run(MultiExitTape& tape, std::span<const Tensor> logit_grads, bool want_params) {
    if (tape.consumed_) throw Error("gradient tape already consumed");
    tape.consumed_ = true;
    const MultiExitNetwork& net = *tape.net_;
    const std::size_t K = net.num_exits();
    if (logit_grads.size() != K) throw ShapeError("need one logit gradient per exit");

    NetworkGradients out;
    if (want_params) {
      for (const auto& b : net.blocks()) {
        std::vector<LayerGrads> g;
        for (const Layer& l : b) g.push_back(zero_grads(l));
        out.blocks.push_back(std::move(g));
      }
      for (const ExitHead& e : net.exits()) {
        std::vector<LayerGrads> g;
        for (const Layer& l : e.layers) g.push_back(zero_grads(l));
        out.heads.push_back(std::move(g));
      }
    }

    // Deepest block that receives any gradient.
    std::optional<std::size_t> deepest;
    for (std::size_t i = 0; i < K; ++i) {
      if (!logit_grads[i].empty()) deepest = std::max(deepest.value_or(0), net.exits()[i].attach_block);
    }
    if (!deepest) {
      out.input = Tensor(net.input_shape());
      return out;
    }

    std::optional<Tensor> g;
    for (std::size_t j = *deepest + 1; j-- > 0;) {
      for (std::size_t i = 0; i < K; ++i) {
        if (net.exits()[i].attach_block != j || logit_grads[i].empty()) continue;
        Gradients hg = backward(tape.heads_[i], logit_grads[i], want_params);
        if (want_params) out.heads[i] = std::move(hg.params);
        if (g) *g += hg.input;
        else g = std::move(hg.input);
      }
      if (!g) g = Tensor(net.block_output_shape(j));
      Gradients bg = backward(tape.blocks_[j], *g, want_params);
      if (want_params) out.blocks[j] = std::move(bg.params);
      g = std::move(bg.input);
    }
    out.input = std::move(*g);
    return out;
  }
};

inline NetworkGradients backward(MultiExitTape& tape, std::span<const Tensor> logit_grads, bool want_params = true) {
  return MultiExitBackward::run(tape, logit_grads, want_params);
}

}  // namespace sloth
