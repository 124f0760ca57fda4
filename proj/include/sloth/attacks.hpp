#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sloth/policy.hpp"

namespace sloth {

enum class Norm { linf, l2, l1 };

inline std::string to_string(Norm n) {
  switch (n) {
    case Norm::linf: return "linf";
    case Norm::l2: return "l2";
    case Norm::l1: return "l1";
  }
  return "?";
}

inline Norm norm_from_string(const std::string& s) {
  if (s == "linf") return Norm::linf;
  if (s == "l2") return Norm::l2;
  if (s == "l1") return Norm::l1;
  throw Error("unknown norm '" + s + "'");
}

struct PerturbationBudget {
  Norm norm = Norm::linf;
  double epsilon = 0.03;

  /// Reference bounds for 32x32 (CIFAR-10-like) and 64x64 (Tiny-ImageNet-like) inputs.
  static PerturbationBudget reference(Norm n, bool large_images = false) {
    switch (n) {
      case Norm::linf: return {n, 0.03};
      case Norm::l2: return {n, large_images ? 0.6 : 0.35};
      case Norm::l1: return {n, large_images ? 16.0 : 8.0};
    }
    return {n, 0.03};
  }

  double measure(std::span<const double> v) const {
    switch (norm) {
      case Norm::linf: return norm_linf(v);
      case Norm::l2: return norm_l2(v);
      case Norm::l1: return norm_l1(v);
    }
    return 0.0;
  }

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw Error("perturbation budget must be positive");
  }
};

enum class Scope { per_sample, universal, class_universal };
enum class TargetMode { uniform, preserve_accuracy, hurt_accuracy };

inline std::string to_string(Scope s) {
  switch (s) {
    case Scope::per_sample: return "per_sample";
    case Scope::universal: return "universal";
    case Scope::class_universal: return "class_universal";
  }
  return "?";
}

inline Scope scope_from_string(const std::string& s) {
  if (s == "per_sample") return Scope::per_sample;
  if (s == "universal") return Scope::universal;
  if (s == "class_universal") return Scope::class_universal;
  throw Error("unknown attack scope '" + s + "'");
}

inline std::string to_string(TargetMode t) {
  switch (t) {
    case TargetMode::uniform: return "uniform";
    case TargetMode::preserve_accuracy: return "preserve_accuracy";
    case TargetMode::hurt_accuracy: return "hurt_accuracy";
  }
  return "?";
}

inline TargetMode target_mode_from_string(const std::string& s) {
  if (s == "uniform") return TargetMode::uniform;
  if (s == "preserve_accuracy") return TargetMode::preserve_accuracy;
  if (s == "hurt_accuracy") return TargetMode::hurt_accuracy;
  throw Error("unknown target mode '" + s + "'");
}

struct AttackConfig {
  std::size_t iterations = 30;
  double step_size = 0.002;
  Scope scope = Scope::per_sample;
  std::uint32_t target_class = 0;  // class_universal only
  TargetMode target_mode = TargetMode::uniform;
  double delta = 0.2;
  bool include_final_exit = false;
  std::size_t decay_every = 0;  // 0 disables step decay
  double decay_factor = 0.1;
  double sparsity = 99.0;       // l1: percentile of |gradient| that may move
  double norm_adjust = 0.1;     // l2: gamma
  double initial_norm = 1.0;    // l2: starting radius
  std::optional<ExitPolicy> policy;  // l2: defines success
  std::uint64_t seed = 0;

  void validate() const {
    if (!(step_size > 0.0)) throw Error("attack step size must be positive");
    if (!(delta >= 0.0 && delta < 1.0)) throw Error("target mixing weight must lie in [0, 1)");
    if (!(decay_factor > 0.0)) throw Error("decay factor must be positive");
  }

  double step_at(std::size_t t) const {
    if (decay_every == 0) return step_size;
    return step_size * std::pow(decay_factor, static_cast<double>(t / decay_every));
  }
};

/// Hyperparameters for 32x32-scale inputs at linf eps = 0.03; linf step sizes
/// scale linearly with the budget.
inline AttackConfig default_attack_config(Norm norm, Scope scope, TargetMode mode = TargetMode::uniform,
                                          double epsilon = 0.03) {
  AttackConfig c;
  c.scope = scope;
  c.target_mode = mode;
  const bool universal = scope != Scope::per_sample;
  switch (norm) {
    case Norm::linf: {
      const double scale = epsilon / 0.03;
      if (universal) {
        c.iterations = 12;
        c.step_size = 0.005 * scale;
        c.decay_every = 4;
        c.decay_factor = 0.1;
      } else if (mode != TargetMode::uniform) {
        c.iterations = 75;
        c.step_size = 0.001 * scale;
      } else {
        c.iterations = 30;
        c.step_size = 0.002 * scale;
      }
      break;
    }
    case Norm::l2:
      c.iterations = 550;
      c.norm_adjust = 0.1;
      c.initial_norm = 1.0;
      c.step_size = 1.0;
      break;
    case Norm::l1:
      c.iterations = universal ? 100 : 250;
      c.step_size = 0.5;
      c.sparsity = universal ? 90.0 : 99.0;
      break;
  }
  return c;
}

// ---- projections ----

inline void project_linf(std::span<double> v, double eps) {
  for (double& x : v) x = std::clamp(x, -eps, eps);
}

namespace detail {
/// Scales v down until norm(v) <= eps holds in floating point.
template <class NormFn>
inline void shrink_to(std::span<double> v, double eps, NormFn norm) {
  double n = norm(v);
  if (n <= eps) return;
  double s = eps / n;
  for (;;) {
    for (double& x : v) x *= s;
    n = norm(v);
    if (n <= eps) return;
    s = std::nextafter(1.0, 0.0);
  }
}
}  // namespace detail

inline void project_l2(std::span<double> v, double eps) {
  detail::shrink_to(v, eps, [](std::span<const double> u) { return norm_l2(u); });
}

/// Euclidean projection onto the l1 ball (sort-based simplex projection).
inline void project_l1(std::span<double> v, double eps) {
  if (norm_l1(v) <= eps) return;
  std::vector<double> mu(v.size());
  std::transform(v.begin(), v.end(), mu.begin(), [](double x) { return std::abs(x); });
  std::sort(mu.begin(), mu.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    cumsum += mu[j];
    const double t = (cumsum - eps) / static_cast<double>(j + 1);
    if (mu[j] - t > 0.0) theta = t;
  }
  for (double& x : v) x = sign(x) * std::max(std::abs(x) - theta, 0.0);
  // Rounding can leave the norm an ulp or so above eps.
  detail::shrink_to(v, eps, [](std::span<const double> u) { return norm_l1(u); });
}

/// Shrinks v so that x + v stays inside [0, 1] in floating point.
inline void clip_to_domain(std::span<double> v, std::span<const double> x) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    double d = std::clamp(v[i], -x[i], 1.0 - x[i]);
    while (x[i] + d > 1.0) d = std::nextafter(d, -std::numeric_limits<double>::infinity());
    while (x[i] + d < 0.0) d = std::nextafter(d, std::numeric_limits<double>::infinity());
    v[i] = d;
  }
}

inline void project(std::span<double> v, const PerturbationBudget& b) {
  switch (b.norm) {
    case Norm::linf: project_linf(v, b.epsilon); break;
    case Norm::l2: project_l2(v, b.epsilon); break;
    case Norm::l1: project_l1(v, b.epsilon); break;
  }
}

/// The input the victim sees: x + v clipped to [0, 1].
inline Tensor apply_perturbation(const Tensor& x, const Tensor& v) {
  x.require_same_shape(v, "apply_perturbation");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i] + v[i], 0.0, 1.0);
  return out;
}

/// Linear-interpolated percentile (q in [0, 100]) of the values.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// ---- objectives ----

/// (1 - delta) * uniform + delta * one_hot(label); delta = 0 gives uniform.
inline Tensor make_target(TargetMode mode, std::size_t m, std::optional<std::size_t> label = std::nullopt,
                          double delta = 0.2) {
  if (m < 2) throw Error("need at least two classes");
  Tensor t({m}, 1.0 / static_cast<double>(m));
  if (mode == TargetMode::uniform) return t;
  if (!(delta >= 0.0 && delta < 1.0)) throw Error("target mixing weight must lie in [0, 1)");
  if (!label) throw Error(to_string(mode) + " target needs a label");
  if (*label >= m) throw Error("target label out of range");
  for (double& v : t.data()) v *= (1.0 - delta);
  t[*label] += delta;
  return t;
}

/// The targeted label for accuracy-hurting slowdowns: least likely clean prediction of the final exit.
inline std::size_t least_likely_label(const MultiExitNetwork& net, const Tensor& x) {
  const auto out = forward_all_exits(net, x, false);
  return argmin(out.logits.back().data());
}

/// Per-exit weighted cross-entropy and its input gradient for one sample.
struct ExitLoss {
  double value = 0.0;
  Tensor input_grad;
};

inline ExitLoss weighted_exit_loss(const MultiExitNetwork& net, const Tensor& x, std::span<const double> weights,
                                   const Tensor& target, bool want_grad) {
  ExitOutputs out = forward_all_exits(net, x, want_grad);
  std::vector<Tensor> grads(net.num_exits());
  ExitLoss res;
  for (std::size_t i = 0; i < net.num_exits(); ++i) {
    if (weights[i] == 0.0) continue;
    res.value += weights[i] * cross_entropy(out.logits[i], target);
    if (want_grad) {
      grads[i] = cross_entropy_grad(out.logits[i], target);
      grads[i] *= weights[i];
    }
  }
  if (want_grad) res.input_grad = backward(*out.tape, grads, false).input;
  return res;
}

inline std::vector<double> exit_weights_for(std::size_t K, std::span<const std::size_t> exits) {
  if (exits.empty()) throw Error("slowdown loss needs at least one exit");
  std::vector<double> w(K, 0.0);
  for (std::size_t e : exits) {
    if (e < 1 || e > K) throw Error("exit index " + std::to_string(e) + " out of range");
    w[e - 1] = 1.0;
  }
  return w;
}

/// 1-based internal exits {1..K-1}, plus K when requested.
inline std::vector<std::size_t> slowdown_exits(std::size_t K, bool include_final) {
  std::vector<std::size_t> e;
  for (std::size_t i = 1; i < K; ++i) e.push_back(i);
  if (include_final || e.empty()) e.push_back(K);
  return e;
}

struct SlowdownLoss {
  double value = 0.0;
  std::optional<MultiExitTape> tape;
  /// dLoss/dlogits per exit; empty for exits outside the objective.
  std::vector<Tensor> logit_grads;

  Tensor input_gradient() {
    if (!tape) throw Error("slowdown loss was computed without a tape");
    return backward(*tape, logit_grads, false).input;
  }
};

/// Sum over the selected (1-based) exits of cross_entropy(F_i(x), target).
inline SlowdownLoss slowdown_loss(const MultiExitNetwork& net, const Tensor& x_perturbed, const Tensor& target,
                                  std::span<const std::size_t> exits) {
  const std::vector<double> w = exit_weights_for(net.num_exits(), exits);
  ExitOutputs out = forward_all_exits(net, x_perturbed, true);
  SlowdownLoss res;
  res.logit_grads.resize(net.num_exits());
  for (std::size_t i = 0; i < net.num_exits(); ++i) {
    if (w[i] == 0.0) continue;
    res.value += cross_entropy(out.logits[i], target);
    res.logit_grads[i] = cross_entropy_grad(out.logits[i], target);
  }
  res.tape = std::move(out.tape);
  return res;
}

namespace detail {

inline void require_scope_data(const MultiExitNetwork& net, std::span<const Tensor> xs,
                               std::span<const std::uint32_t> ys, const AttackConfig& cfg) {
  if (xs.empty()) throw Error("attack sample set is empty");
  if (!ys.empty() && ys.size() != xs.size()) throw Error("attack inputs and labels differ in length");
  if (cfg.scope == Scope::per_sample && xs.size() != 1) {
    throw Error("per-sample attacks take exactly one input");
  }
  for (const Tensor& x : xs) {
    if (x.shape() != net.input_shape()) throw ShapeError("attack input shape mismatch");
  }
  for (std::uint32_t y : ys) {
    if (y >= net.num_classes()) throw Error("attack label out of range");
  }
  cfg.validate();
}

inline std::vector<Tensor> slowdown_targets(const MultiExitNetwork& net, std::span<const Tensor> xs,
                                            std::span<const std::uint32_t> ys, const AttackConfig& cfg) {
  std::vector<Tensor> t;
  const std::size_t m = net.num_classes();
  for (std::size_t s = 0; s < xs.size(); ++s) {
    switch (cfg.target_mode) {
      case TargetMode::uniform: t.push_back(make_target(TargetMode::uniform, m)); break;
      case TargetMode::preserve_accuracy:
        if (ys.empty()) throw Error("accuracy-preserving slowdown needs labels");
        t.push_back(make_target(cfg.target_mode, m, ys[s], cfg.delta));
        break;
      case TargetMode::hurt_accuracy:
        t.push_back(make_target(cfg.target_mode, m, least_likely_label(net, xs[s]), cfg.delta));
        break;
    }
  }
  return t;
}

/// Gradient of sum_s loss(x_s + v) with respect to v, accumulated in sample order.
inline Tensor scope_gradient(const MultiExitNetwork& net, std::span<const Tensor> xs, std::span<const Tensor> targets,
                             std::span<const std::vector<double>> weights, const Tensor& v) {
  Tensor g(v.shape());
  for (std::size_t s = 0; s < xs.size(); ++s) {
    const Tensor xa = apply_perturbation(xs[s], v);
    g += weighted_exit_loss(net, xa, weights[s % weights.size()], targets[s], true).input_grad;
  }
  return g;
}

inline double scope_loss(const MultiExitNetwork& net, std::span<const Tensor> xs, std::span<const Tensor> targets,
                         std::span<const double> weights, const Tensor& v) {
  double total = 0.0;
  for (std::size_t s = 0; s < xs.size(); ++s) {
    total += weighted_exit_loss(net, apply_perturbation(xs[s], v), weights, targets[s], false).value;
  }
  return total;
}

/// Signed-gradient iterations with linf projection. direction = -1 descends.
inline Tensor signed_gradient_linf(const MultiExitNetwork& net, std::span<const Tensor> xs,
                                   std::span<const Tensor> targets, std::span<const double> weights, double direction,
                                   const PerturbationBudget& budget, const AttackConfig& cfg) {
  Tensor v(net.input_shape());
  const std::vector<std::vector<double>> w{std::vector<double>(weights.begin(), weights.end())};
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const Tensor g = scope_gradient(net, xs, targets, w, v);
    const double step = direction * cfg.step_at(t);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += step * sign(g[i]);
    project_linf(v.data(), budget.epsilon);
    if (cfg.scope == Scope::per_sample) clip_to_domain(v.data(), xs[0].data());
  }
  return v;
}

inline void require_norm(const PerturbationBudget& b, Norm n) {
  b.validate();
  if (b.norm != n) throw Error("attack expects a " + to_string(n) + " budget, got " + to_string(b.norm));
}

/// No internal exit fires on any perturbed sample.
inline bool slowdown_succeeds(const MultiExitNetwork& net, const ExitPolicy& policy, std::span<const Tensor> xs,
                              const Tensor& v) {
  const std::size_t K = net.num_exits();
  for (const Tensor& x : xs) {
    const auto trace = trace_exits(net, apply_perturbation(x, v));
    for (std::size_t i = 0; i + 1 < K; ++i) {
      if (stops(trace[i], policy.criterion, policy.thresholds[i])) return false;
    }
  }
  return true;
}

}  // namespace detail

/// linf DeepSloth: v <- clip_eps(v - alpha * sign(grad_v sum_{x in D'} sum_i CE(F_i(x + v), target))).
inline Tensor deepsloth_linf(const MultiExitNetwork& net, std::span<const Tensor> xs,
                             std::span<const std::uint32_t> ys, const PerturbationBudget& budget,
                             const AttackConfig& cfg) {
  detail::require_norm(budget, Norm::linf);
  detail::require_scope_data(net, xs, ys, cfg);
  const auto targets = detail::slowdown_targets(net, xs, ys, cfg);
  const auto w = exit_weights_for(net.num_exits(), slowdown_exits(net.num_exits(), cfg.include_final_exit));
  return detail::signed_gradient_linf(net, xs, targets, w, -1.0, budget, cfg);
}

/// Radius history of the l2 attack, for inspection.
struct L2Trace {
  std::vector<double> radii;
  std::vector<bool> successes;
};

/// l2 DeepSloth: normalized gradient steps with the radius shrunk by (1 - gamma)
/// after a successful iterate and grown by (1 + gamma) otherwise, capped at eps.
inline Tensor deepsloth_l2(const MultiExitNetwork& net, std::span<const Tensor> xs, std::span<const std::uint32_t> ys,
                           const PerturbationBudget& budget, const AttackConfig& cfg, L2Trace* trace = nullptr) {
  detail::require_norm(budget, Norm::l2);
  detail::require_scope_data(net, xs, ys, cfg);
  if (!cfg.policy) throw Error("l2 slowdown attack needs a calibrated exit policy");
  cfg.policy->validate(net.num_exits());
  const auto targets = detail::slowdown_targets(net, xs, ys, cfg);
  const std::vector<std::vector<double>> w{
      exit_weights_for(net.num_exits(), slowdown_exits(net.num_exits(), cfg.include_final_exit))};

  Tensor v(net.input_shape());
  if (cfg.iterations == 0) return v;
  double radius = std::min(cfg.initial_norm, budget.epsilon);
  std::optional<Tensor> best;
  double best_norm = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const bool success = detail::slowdown_succeeds(net, *cfg.policy, xs, v);
    const double n = norm_l2(v.data());
    if (success && n < best_norm) {
      best = v;
      best_norm = n;
    }
    const Tensor g = detail::scope_gradient(net, xs, targets, w, v);
    const double gn = norm_l2(g.data());
    if (gn > 0.0) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.step_size * g[i] / gn;
    }
    radius = std::min(success ? radius * (1.0 - cfg.norm_adjust) : radius * (1.0 + cfg.norm_adjust),
                      budget.epsilon);
    const double vn = norm_l2(v.data());
    if (vn > 0.0) v *= radius / vn;
    project_l2(v.data(), budget.epsilon);
    if (cfg.scope == Scope::per_sample) clip_to_domain(v.data(), xs[0].data());
    if (trace) {
      trace->radii.push_back(radius);
      trace->successes.push_back(success);
    }
  }
  if (detail::slowdown_succeeds(net, *cfg.policy, xs, v) && norm_l2(v.data()) < best_norm) best = v;
  return best ? *best : v;
}

/// l1 DeepSloth: sign steps on the top (100 - q)% gradient coordinates, then
/// projection onto the l1 ball.
inline Tensor deepsloth_l1(const MultiExitNetwork& net, std::span<const Tensor> xs, std::span<const std::uint32_t> ys,
                           const PerturbationBudget& budget, const AttackConfig& cfg) {
  detail::require_norm(budget, Norm::l1);
  detail::require_scope_data(net, xs, ys, cfg);
  if (!(cfg.sparsity > 0.0 && cfg.sparsity < 100.0)) throw Error("gradient sparsity must lie in (0, 100)");
  const auto targets = detail::slowdown_targets(net, xs, ys, cfg);
  const std::vector<std::vector<double>> w{
      exit_weights_for(net.num_exits(), slowdown_exits(net.num_exits(), cfg.include_final_exit))};

  Tensor v(net.input_shape());
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const Tensor g = detail::scope_gradient(net, xs, targets, w, v);
    std::vector<double> mag(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) mag[i] = std::abs(g[i]);
    const double cut = percentile(mag, cfg.sparsity);
    const double step = cfg.step_at(t);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (mag[i] >= cut) v[i] -= step * sign(g[i]);
    }
    project_l1(v.data(), budget.epsilon);
    if (cfg.scope == Scope::per_sample) clip_to_domain(v.data(), xs[0].data());
  }
  return v;
}

inline Tensor deepsloth(const MultiExitNetwork& net, std::span<const Tensor> xs, std::span<const std::uint32_t> ys,
                        const PerturbationBudget& budget, const AttackConfig& cfg) {
  switch (budget.norm) {
    case Norm::linf: return deepsloth_linf(net, xs, ys, budget, cfg);
    case Norm::l2: return deepsloth_l2(net, xs, ys, budget, cfg);
    case Norm::l1: return deepsloth_l1(net, xs, ys, budget, cfg);
  }
  throw Error("unknown norm");
}

// ---- misclassification baselines (ascent on cross-entropy vs the true label) ----

namespace detail {
inline Tensor pgd_with_weights(const MultiExitNetwork& net, const Tensor& x, std::uint32_t y,
                               std::span<const double> weights, const PerturbationBudget& budget,
                               const AttackConfig& cfg) {
  require_norm(budget, Norm::linf);
  AttackConfig c = cfg;
  c.scope = Scope::per_sample;
  const std::uint32_t ys[1] = {y};
  require_scope_data(net, std::span<const Tensor>(&x, 1), ys, c);
  const Tensor target[1] = {one_hot(net.num_classes(), y)};
  return signed_gradient_linf(net, std::span<const Tensor>(&x, 1), target, weights, +1.0, budget, c);
}
}  // namespace detail

/// PGD on the final exit's loss.
inline Tensor pgd(const MultiExitNetwork& net, const Tensor& x, std::uint32_t y, const PerturbationBudget& budget,
                  const AttackConfig& cfg) {
  std::vector<double> w(net.num_exits(), 0.0);
  w.back() = 1.0;
  return detail::pgd_with_weights(net, x, y, w, budget, cfg);
}

/// PGD on the mean of all exits' losses.
inline Tensor pgd_avg(const MultiExitNetwork& net, const Tensor& x, std::uint32_t y, const PerturbationBudget& budget,
                      const AttackConfig& cfg) {
  const std::vector<double> w(net.num_exits(), 1.0 / static_cast<double>(net.num_exits()));
  return detail::pgd_with_weights(net, x, y, w, budget, cfg);
}

/// One PGD candidate per exit; keeps the one with the highest mean loss over all exits.
inline Tensor pgd_max(const MultiExitNetwork& net, const Tensor& x, std::uint32_t y, const PerturbationBudget& budget,
                      const AttackConfig& cfg) {
  const std::size_t K = net.num_exits();
  const std::vector<double> mean_w(K, 1.0 / static_cast<double>(K));
  const Tensor target = one_hot(net.num_classes(), y);
  std::optional<Tensor> best;
  double best_loss = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> w(K, 0.0);
    w[k] = 1.0;
    Tensor v = detail::pgd_with_weights(net, x, y, w, budget, cfg);
    const double loss = weighted_exit_loss(net, apply_perturbation(x, v), mean_w, target, false).value;
    if (loss > best_loss) {
      best_loss = loss;
      best = std::move(v);
    }
  }
  return *best;
}

/// Universal misclassification perturbation: universal-scope PGD ascent on the final exit.
inline Tensor uap(const MultiExitNetwork& net, std::span<const Tensor> xs, std::span<const std::uint32_t> ys,
                  const PerturbationBudget& budget, const AttackConfig& cfg) {
  detail::require_norm(budget, Norm::linf);
  if (ys.size() != xs.size()) throw Error("universal perturbation needs one label per sample");
  AttackConfig c = cfg;
  if (c.scope == Scope::per_sample) c.scope = Scope::universal;
  detail::require_scope_data(net, xs, ys, c);
  std::vector<Tensor> targets;
  for (std::uint32_t y : ys) targets.push_back(one_hot(net.num_classes(), y));
  std::vector<double> w(net.num_exits(), 0.0);
  w.back() = 1.0;
  return detail::signed_gradient_linf(net, xs, targets, w, +1.0, budget, c);
}

}  // namespace sloth
