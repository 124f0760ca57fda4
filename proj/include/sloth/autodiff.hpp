#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sloth/layers.hpp"

namespace sloth {

/// Forward intermediates of one pass through a layer chain. Single use.
class GradientTape {
 public:
  GradientTape(std::span<const Layer> layers, std::vector<Tensor> activations)
      : layers_(layers), activations_(std::move(activations)) {}

  GradientTape(GradientTape&&) noexcept = default;
  GradientTape& operator=(GradientTape&&) noexcept = default;
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  bool consumed() const noexcept { return consumed_; }
  std::span<const Layer> layers() const noexcept { return layers_; }
  const std::vector<Tensor>& activations() const noexcept { return activations_; }
  const Tensor& output() const { return activations_.back(); }

  void mark_consumed() {
    if (consumed_) throw Error("gradient tape already consumed");
    consumed_ = true;
  }

 private:
  std::span<const Layer> layers_;
  std::vector<Tensor> activations_;
  bool consumed_ = false;
};

struct ForwardResult {
  /// activations[0] is the input, activations[i + 1] the output of layer i.
  std::vector<Tensor> activations;
  std::optional<GradientTape> tape;

  const Tensor& output() const { return activations.back(); }
};

/// Runs `x` through `layers`. The layers must outlive the returned tape.
inline ForwardResult forward(std::span<const Layer> layers, const Tensor& x, bool record) {
  require_finite(x, "forward input");
  std::vector<Tensor> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(x);
  for (const Layer& l : layers) {
    acts.push_back(layer_forward(l, acts.back()));
    require_finite(acts.back(), "forward activation");
  }
  ForwardResult result;
  if (record) {
    result.tape.emplace(layers, acts);
  }
  result.activations = std::move(acts);
  return result;
}

/// Output-only forward pass without retaining intermediates.
inline Tensor forward_output(std::span<const Layer> layers, const Tensor& x) {
  Tensor cur = x;
  for (const Layer& l : layers) cur = layer_forward(l, cur);
  require_finite(cur, "forward output");
  return cur;
}

struct Gradients {
  Tensor input;
  /// Empty unless parameter gradients were requested.
  std::vector<LayerGrads> params;
};

/// Reverse pass given dLoss/dOutput; consumes the tape.
inline Gradients backward(GradientTape& tape, const Tensor& output_grad, bool want_params = true) {
  tape.mark_consumed();
  const auto layers = tape.layers();
  const auto& acts = tape.activations();
  output_grad.require_same_shape(acts.back(), "backward seed");
  require_finite(output_grad, "backward seed");

  Gradients out;
  if (want_params) {
    out.params.reserve(layers.size());
    for (const Layer& l : layers) out.params.push_back(zero_grads(l));
  }
  Tensor g = output_grad;
  for (std::size_t i = layers.size(); i-- > 0;) {
    g = layer_backward(layers[i], acts[i], g, want_params ? &out.params[i] : nullptr);
  }
  require_finite(g, "input gradient");
  out.input = std::move(g);
  return out;
}

inline Tensor grad_input(GradientTape& tape, const Tensor& output_grad) {
  return backward(tape, output_grad, false).input;
}

inline std::vector<LayerGrads> grad_params(GradientTape& tape, const Tensor& output_grad) {
  return backward(tape, output_grad, true).params;
}

}  // namespace sloth
