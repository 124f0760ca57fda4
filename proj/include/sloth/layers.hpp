#pragma once

#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "sloth/tensor.hpp"

namespace sloth {

/// Fully connected layer on a rank-1 input. weight is [out, in].
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor weight;
  Tensor bias;

  Dense() = default;
  Dense(std::size_t in_features, std::size_t out_features)
      : in(in_features), out(out_features), weight({out_features, in_features}), bias({out_features}) {}

  friend bool operator==(const Dense&, const Dense&) = default;
};

/// 2-D convolution on a [C, H, W] input. weight is [out_ch, in_ch, k, k].
struct Conv2d {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weight;
  Tensor bias;

  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t k, std::size_t s = 1,
         std::size_t p = 0)
      : in_ch(in_channels), out_ch(out_channels), kernel(k), stride(s), padding(p),
        weight({out_channels, in_channels, k, k}), bias({out_channels}) {}

  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

struct Relu {
  friend bool operator==(const Relu&, const Relu&) = default;
};

/// Max pooling over [C, H, W], no padding.
struct MaxPool {
  std::size_t window = 2;
  std::size_t stride = 2;
  friend bool operator==(const MaxPool&, const MaxPool&) = default;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

using Layer = std::variant<Dense, Conv2d, Relu, MaxPool, Flatten>;

/// Parameter gradients of one layer, in the order returned by parameters().
using LayerGrads = std::vector<Tensor>;

inline std::string layer_kind(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> std::string {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) return "dense";
        else if constexpr (std::is_same_v<T, Conv2d>) return "conv2d";
        else if constexpr (std::is_same_v<T, Relu>) return "relu";
        else if constexpr (std::is_same_v<T, MaxPool>) return "maxpool";
        else return "flatten";
      },
      layer);
}

inline std::vector<Tensor*> parameters(Layer& layer) {
  if (auto* d = std::get_if<Dense>(&layer)) return {&d->weight, &d->bias};
  if (auto* c = std::get_if<Conv2d>(&layer)) return {&c->weight, &c->bias};
  return {};
}

inline std::vector<const Tensor*> parameters(const Layer& layer) {
  if (const auto* d = std::get_if<Dense>(&layer)) return {&d->weight, &d->bias};
  if (const auto* c = std::get_if<Conv2d>(&layer)) return {&c->weight, &c->bias};
  return {};
}

inline LayerGrads zero_grads(const Layer& layer) {
  LayerGrads g;
  for (const Tensor* p : parameters(layer)) g.emplace_back(p->shape());
  return g;
}

namespace detail {

inline std::size_t conv_out(std::size_t n, std::size_t k, std::size_t s, std::size_t p) {
  if (n + 2 * p < k) return 0;
  return (n + 2 * p - k) / s + 1;
}

inline Shape output_shape(const Dense& l, const Shape& in) {
  if (in.size() != 1 || in[0] != l.in) {
    throw ShapeError("dense(" + std::to_string(l.in) + "->" + std::to_string(l.out) +
                     ") got input " + shape_str(in));
  }
  return {l.out};
}

inline Shape output_shape(const Conv2d& l, const Shape& in) {
  if (in.size() != 3 || in[0] != l.in_ch || l.kernel == 0 || l.stride == 0) {
    throw ShapeError("conv2d(" + std::to_string(l.in_ch) + "->" + std::to_string(l.out_ch) +
                     ") got input " + shape_str(in));
  }
  const std::size_t h = conv_out(in[1], l.kernel, l.stride, l.padding);
  const std::size_t w = conv_out(in[2], l.kernel, l.stride, l.padding);
  if (h == 0 || w == 0) throw ShapeError("conv2d kernel larger than padded input " + shape_str(in));
  return {l.out_ch, h, w};
}

inline Shape output_shape(const Relu&, const Shape& in) { return in; }

inline Shape output_shape(const MaxPool& l, const Shape& in) {
  if (in.size() != 3 || l.window == 0 || l.stride == 0) {
    throw ShapeError("maxpool expects [C,H,W], got " + shape_str(in));
  }
  const std::size_t h = conv_out(in[1], l.window, l.stride, 0);
  const std::size_t w = conv_out(in[2], l.window, l.stride, 0);
  if (h == 0 || w == 0) throw ShapeError("maxpool window larger than input " + shape_str(in));
  return {in[0], h, w};
}

inline Shape output_shape(const Flatten&, const Shape& in) { return {shape_numel(in)}; }

// ---- forward ----

inline Tensor forward(const Dense& l, const Tensor& x) {
  Tensor y({l.out});
  const double* w = l.weight.data().data();
  const double* xv = x.data().data();
  for (std::size_t o = 0; o < l.out; ++o) {
    double acc = l.bias[o];
    const double* row = w + o * l.in;
    for (std::size_t i = 0; i < l.in; ++i) acc += row[i] * xv[i];
    y[o] = acc;
  }
  return y;
}

inline Tensor forward(const Conv2d& l, const Tensor& x) {
  const Shape os = output_shape(l, x.shape());
  const std::size_t H = x.dim(1), W = x.dim(2), OH = os[1], OW = os[2], k = l.kernel;
  Tensor y(os);
  const double* xv = x.data().data();
  const double* wv = l.weight.data().data();
  double* yv = y.data().data();
  for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double acc = l.bias[oc];
        for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
          const double* wk = wv + ((oc * l.in_ch + ic) * k) * k;
          const double* xc = xv + ic * H * W;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                      static_cast<std::ptrdiff_t>(l.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                        static_cast<std::ptrdiff_t>(l.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += wk[ky * k + kx] * xc[static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)];
            }
          }
        }
        yv[(oc * OH + oy) * OW + ox] = acc;
      }
    }
  }
  return y;
}

inline Tensor forward(const Relu&, const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

// Index into the input of the max element of one pooling window; first max wins.
inline std::size_t pool_argmax(const MaxPool& l, const Tensor& x, std::size_t c, std::size_t oy,
                               std::size_t ox) {
  const std::size_t H = x.dim(1), W = x.dim(2);
  std::size_t best = (c * H + oy * l.stride) * W + ox * l.stride;
  for (std::size_t ky = 0; ky < l.window; ++ky) {
    for (std::size_t kx = 0; kx < l.window; ++kx) {
      const std::size_t idx = (c * H + oy * l.stride + ky) * W + ox * l.stride + kx;
      if (x[idx] > x[best]) best = idx;
    }
  }
  return best;
}

inline Tensor forward(const MaxPool& l, const Tensor& x) {
  const Shape os = output_shape(l, x.shape());
  Tensor y(os);
  std::size_t o = 0;
  for (std::size_t c = 0; c < os[0]; ++c)
    for (std::size_t oy = 0; oy < os[1]; ++oy)
      for (std::size_t ox = 0; ox < os[2]; ++ox) y[o++] = x[pool_argmax(l, x, c, oy, ox)];
  return y;
}

inline Tensor forward(const Flatten&, const Tensor& x) { return x.reshaped({x.size()}); }

// ---- backward: returns dL/dx, accumulates parameter grads into `grads` if non-null ----

inline Tensor backward(const Dense& l, const Tensor& x, const Tensor& gy, LayerGrads* grads) {
  Tensor gx({l.in});
  const double* w = l.weight.data().data();
  for (std::size_t o = 0; o < l.out; ++o) {
    const double g = gy[o];
    if (g == 0.0) continue;
    const double* row = w + o * l.in;
    for (std::size_t i = 0; i < l.in; ++i) gx[i] += row[i] * g;
  }
  if (grads) {
    double* gw = (*grads)[0].data().data();
    for (std::size_t o = 0; o < l.out; ++o) {
      const double g = gy[o];
      (*grads)[1][o] += g;
      if (g == 0.0) continue;
      double* row = gw + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) row[i] += g * x[i];
    }
  }
  return gx;
}

inline Tensor backward(const Conv2d& l, const Tensor& x, const Tensor& gy, LayerGrads* grads) {
  const std::size_t H = x.dim(1), W = x.dim(2), OH = gy.dim(1), OW = gy.dim(2), k = l.kernel;
  Tensor gx(x.shape());
  const double* xv = x.data().data();
  const double* wv = l.weight.data().data();
  const double* gv = gy.data().data();
  double* gxv = gx.data().data();
  double* gw = grads ? (*grads)[0].data().data() : nullptr;
  for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const double g = gv[(oc * OH + oy) * OW + ox];
        if (grads) (*grads)[1][oc] += g;
        if (g == 0.0) continue;
        for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
          const std::size_t wbase = ((oc * l.in_ch + ic) * k) * k;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                      static_cast<std::ptrdiff_t>(l.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                        static_cast<std::ptrdiff_t>(l.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t xi =
                  (ic * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix);
              gxv[xi] += wv[wbase + ky * k + kx] * g;
              if (gw) gw[wbase + ky * k + kx] += xv[xi] * g;
            }
          }
        }
      }
    }
  }
  return gx;
}

inline Tensor backward(const Relu&, const Tensor& x, const Tensor& gy, LayerGrads*) {
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.size(); ++i)
    if (!(x[i] > 0.0)) gx[i] = 0.0;
  return gx;
}

inline Tensor backward(const MaxPool& l, const Tensor& x, const Tensor& gy, LayerGrads*) {
  Tensor gx(x.shape());
  std::size_t o = 0;
  for (std::size_t c = 0; c < gy.dim(0); ++c)
    for (std::size_t oy = 0; oy < gy.dim(1); ++oy)
      for (std::size_t ox = 0; ox < gy.dim(2); ++ox) gx[pool_argmax(l, x, c, oy, ox)] += gy[o++];
  return gx;
}

inline Tensor backward(const Flatten&, const Tensor& x, const Tensor& gy, LayerGrads*) {
  return gy.reshaped(x.shape());
}

inline std::uint64_t flops(const Dense& l, const Shape&) {
  return 2ULL * l.in * l.out;
}

inline std::uint64_t flops(const Conv2d& l, const Shape& in) {
  const Shape os = output_shape(l, in);
  return 2ULL * l.kernel * l.kernel * l.in_ch * l.out_ch * os[1] * os[2];
}

template <typename L>
std::uint64_t flops(const L&, const Shape&) {
  return 0;
}

}  // namespace detail

inline Shape output_shape(const Layer& layer, const Shape& in) {
  return std::visit([&](const auto& l) { return detail::output_shape(l, in); }, layer);
}

inline Tensor layer_forward(const Layer& layer, const Tensor& x) {
  output_shape(layer, x.shape());
  return std::visit([&](const auto& l) { return detail::forward(l, x); }, layer);
}

inline Tensor layer_backward(const Layer& layer, const Tensor& x, const Tensor& gy, LayerGrads* grads) {
  return std::visit([&](const auto& l) { return detail::backward(l, x, gy, grads); }, layer);
}

/// Floating-point operations of one layer: a multiply-accumulate counts as 2.
inline std::uint64_t layer_flops(const Layer& layer, const Shape& in) {
  return std::visit([&](const auto& l) { return detail::flops(l, in); }, layer);
}

/// Validates a layer chain and returns the output shape.
inline Shape chain_output_shape(std::span<const Layer> layers, Shape in) {
  for (const Layer& l : layers) in = output_shape(l, in);
  return in;
}

inline std::uint64_t chain_flops(std::span<const Layer> layers, Shape in) {
  std::uint64_t total = 0;
  for (const Layer& l : layers) {
    total += layer_flops(l, in);
    in = output_shape(l, in);
  }
  return total;
}

}  // namespace sloth
