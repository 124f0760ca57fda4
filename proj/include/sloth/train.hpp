#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sloth/attacks.hpp"
#include "sloth/dataset.hpp"

namespace sloth {

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 0.05;
  std::size_t batch_size = 32;
  /// Per-exit loss weights; empty means uniform.
  std::vector<double> exit_weights;
  std::uint64_t seed = 0;
  bool train_trunk = true;
  /// Which exit heads receive updates; empty means all.
  std::vector<bool> train_heads;
};

struct TrainResult {
  /// Mean weighted loss per epoch, measured on the examples actually trained on.
  std::vector<double> loss_history;
};

/// Replaces a clean training example (e.g. with an adversarial one) against the
/// network as it stands at the start of the minibatch.
using ExampleCrafter =
    std::function<Tensor(const MultiExitNetwork&, const Tensor& x, std::uint32_t y, std::size_t batch_index)>;

namespace detail {

inline void add_scaled(std::vector<LayerGrads>& acc, const std::vector<LayerGrads>& g) {
  for (std::size_t l = 0; l < acc.size(); ++l)
    for (std::size_t p = 0; p < acc[l].size(); ++p) acc[l][p] += g[l][p];
}

inline void sgd_step(std::vector<Layer>& layers, const std::vector<LayerGrads>& grads, double scale) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto params = parameters(layers[l]);
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto dst = params[p]->data();
      const auto src = grads[l][p].data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= scale * src[i];
    }
  }
}

}  // namespace detail

/// Minibatch SGD on sum_i w_i * CE(F_i(x), one_hot(y)).
inline TrainResult train(MultiExitNetwork& net, const Dataset& data, const TrainConfig& cfg,
                         const ExampleCrafter& crafter = {}) {
  const std::size_t K = net.num_exits();
  std::vector<double> w = cfg.exit_weights.empty() ? std::vector<double>(K, 1.0) : cfg.exit_weights;
  if (w.size() != K) throw Error("need one exit loss weight per exit");
  for (double v : w) {
    if (!(v >= 0.0)) throw Error("exit loss weights must be non-negative");
  }
  if (!(w.back() > 0.0)) throw Error("the final exit's loss weight must be positive");
  if (!cfg.train_heads.empty() && cfg.train_heads.size() != K) throw Error("train_heads needs one flag per exit");
  if (cfg.batch_size == 0) throw Error("batch size must be positive");
  if (data.size() == 0) throw Error("training set is empty");
  if (data.sample_shape() != net.input_shape()) throw ShapeError("training data shape does not match the network");
  auto head_trainable = [&](std::size_t i) { return cfg.train_heads.empty() || cfg.train_heads[i]; };

  TrainResult result;
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> sample_loss(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = seeded_permutation(data.size(), rng());
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      std::vector<std::vector<LayerGrads>> gblocks, gheads;
      for (const auto& b : net.blocks()) {
        std::vector<LayerGrads> g;
        for (const Layer& l : b) g.push_back(zero_grads(l));
        gblocks.push_back(std::move(g));
      }
      for (const ExitHead& e : net.exits()) {
        std::vector<LayerGrads> g;
        for (const Layer& l : e.layers) g.push_back(zero_grads(l));
        gheads.push_back(std::move(g));
      }
      const MultiExitNetwork& snapshot = net;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t s = order[k];
        const std::uint32_t y = data.labels[s];
        const Tensor x = crafter ? crafter(snapshot, data.inputs[s], y, batch) : data.inputs[s];
        const Tensor target = one_hot(net.num_classes(), y);
        ExitOutputs out;
        try {
          out = forward_all_exits(net, x, true);
        } catch (const NumericError& e) {
          throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
        }
        double loss = 0.0;
        std::vector<Tensor> lg(K);
        for (std::size_t i = 0; i < K; ++i) {
          if (w[i] == 0.0) continue;
          loss += w[i] * cross_entropy(out.logits[i], target);
          lg[i] = cross_entropy_grad(out.logits[i], target);
          lg[i] *= w[i];
        }
        if (!std::isfinite(loss)) {
          throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ": non-finite loss");
        }
        sample_loss[s] = loss;
        const NetworkGradients g = backward(*out.tape, lg, true);
        for (std::size_t j = 0; j < gblocks.size(); ++j) detail::add_scaled(gblocks[j], g.blocks[j]);
        for (std::size_t i = 0; i < K; ++i) detail::add_scaled(gheads[i], g.heads[i]);
      }
      const double scale = cfg.lr / static_cast<double>(end - start);
      if (scale != 0.0) {
        if (cfg.train_trunk) {
          for (std::size_t j = 0; j < gblocks.size(); ++j) detail::sgd_step(net.blocks()[j], gblocks[j], scale);
        }
        for (std::size_t i = 0; i < K; ++i) {
          if (head_trainable(i)) detail::sgd_step(net.exits()[i].layers, gheads[i], scale);
        }
      }
    }
    double total = 0.0;
    for (double v : sample_loss) total += v;
    result.loss_history.push_back(total / static_cast<double>(data.size()));
  }
  return result;
}

enum class Regime { pgd10, pgd10_avg, pgd10_max, deepsloth, deepsloth_plus_pgd10 };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::pgd10: return "pgd10";
    case Regime::pgd10_avg: return "pgd10_avg";
    case Regime::pgd10_max: return "pgd10_max";
    case Regime::deepsloth: return "deepsloth";
    case Regime::deepsloth_plus_pgd10: return "deepsloth_plus_pgd10";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  for (Regime r : {Regime::pgd10, Regime::pgd10_avg, Regime::pgd10_max, Regime::deepsloth,
                   Regime::deepsloth_plus_pgd10}) {
    if (to_string(r) == s) return r;
  }
  throw Error("unknown adversarial training regime '" + s + "'");
}

struct AdvTrainConfig {
  std::size_t base_epochs = 10;
  std::size_t head_epochs = 10;
  double lr = 0.05;
  std::size_t batch_size = 32;
  double epsilon = 0.03;
  std::size_t inner_iterations = 10;
  /// Inner-attack step; 0 selects 2.5 * epsilon / inner_iterations.
  double inner_step = 0.0;
  /// Freeze trunk and final head while the internal heads are trained.
  bool freeze_trunk = true;
  std::uint64_t seed = 0;

  double step() const {
    if (inner_step > 0.0) return inner_step;
    return inner_iterations ? 2.5 * epsilon / static_cast<double>(inner_iterations) : epsilon;
  }
};

struct AdvTrainResult {
  TrainResult base;
  TrainResult heads;
};

namespace detail {

inline ExampleCrafter regime_crafter(Regime regime, const AdvTrainConfig& cfg, bool base_phase) {
  if (cfg.inner_iterations == 0) return {};
  const PerturbationBudget budget{Norm::linf, cfg.epsilon};
  AttackConfig ac;
  ac.iterations = cfg.inner_iterations;
  ac.step_size = cfg.step();
  ac.scope = Scope::per_sample;
  auto pgd_final = [=](const MultiExitNetwork& n, const Tensor& x, std::uint32_t y) {
    return apply_perturbation(x, pgd(n, x, y, budget, ac));
  };
  auto slowdown = [=](const MultiExitNetwork& n, const Tensor& x, std::uint32_t y) {
    const std::uint32_t ys[1] = {y};
    return apply_perturbation(x, deepsloth_linf(n, std::span<const Tensor>(&x, 1), ys, budget, ac));
  };
  if (base_phase) {
    return [=](const MultiExitNetwork& n, const Tensor& x, std::uint32_t y, std::size_t) { return pgd_final(n, x, y); };
  }
  switch (regime) {
    case Regime::pgd10:
      return [=](const MultiExitNetwork& n, const Tensor& x, std::uint32_t y, std::size_t) {
        return pgd_final(n, x, y);
      };
    case Regime::pgd10_avg:
      return [=](const MultiExitNetwork& n, const Tensor& x, std::uint32_t y, std::size_t) {
        return apply_perturbation(x, pgd_avg(n, x, y, budget, ac));
      };
    case Regime::pgd10_max:
      return [=](const MultiExitNetwork& n, const Tensor& x, std::uint32_t y, std::size_t) {
        return apply_perturbation(x, pgd_max(n, x, y, budget, ac));
      };
    case Regime::deepsloth:
      return [=](const MultiExitNetwork& n, const Tensor& x, std::uint32_t y, std::size_t) {
        return slowdown(n, x, y);
      };
    case Regime::deepsloth_plus_pgd10:
      return [=](const MultiExitNetwork& n, const Tensor& x, std::uint32_t y, std::size_t batch) {
        return batch % 2 == 0 ? slowdown(n, x, y) : pgd_final(n, x, y);
      };
  }
  return {};
}

}  // namespace detail

/// Two phases: (1) trunk and final exit on PGD examples against the final exit;
/// (2) internal exit heads on examples crafted per `regime`, trunk frozen by default.
inline AdvTrainResult adversarial_train(MultiExitNetwork& net, const Dataset& data, Regime regime,
                                        const AdvTrainConfig& cfg) {
  const std::size_t K = net.num_exits();
  AdvTrainResult res;

  TrainConfig base;
  base.epochs = cfg.base_epochs;
  base.lr = cfg.lr;
  base.batch_size = cfg.batch_size;
  base.seed = cfg.seed;
  base.exit_weights.assign(K, 0.0);
  base.exit_weights.back() = 1.0;
  base.train_heads.assign(K, false);
  base.train_heads.back() = true;
  res.base = train(net, data, base, detail::regime_crafter(regime, cfg, true));

  if (K == 1) return res;
  TrainConfig heads;
  heads.epochs = cfg.head_epochs;
  heads.lr = cfg.lr;
  heads.batch_size = cfg.batch_size;
  heads.seed = cfg.seed + 1;
  heads.train_trunk = !cfg.freeze_trunk;
  heads.exit_weights.assign(K, 1.0);
  heads.train_heads.assign(K, true);
  if (cfg.freeze_trunk) heads.train_heads.back() = false;
  res.heads = train(net, data, heads, detail::regime_crafter(regime, cfg, false));
  return res;
}

}  // namespace sloth
