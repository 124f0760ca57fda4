#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sloth/multiexit.hpp"

namespace sloth {

enum class Criterion { confidence, entropy };

inline std::string to_string(Criterion c) { return c == Criterion::confidence ? "confidence" : "entropy"; }

inline Criterion criterion_from_string(const std::string& s) {
  if (s == "confidence") return Criterion::confidence;
  if (s == "entropy") return Criterion::entropy;
  throw Error("unknown stopping criterion '" + s + "'");
}

/// Per-exit thresholds; std::nullopt means the exit never fires. The final
/// exit always fires regardless of its threshold.
struct ExitPolicy {
  Criterion criterion = Criterion::confidence;
  std::vector<std::optional<double>> thresholds;

  static ExitPolicy never(Criterion c, std::size_t K) { return {c, std::vector<std::optional<double>>(K)}; }

  static ExitPolicy shared(Criterion c, std::size_t K, double t) {
    return {c, std::vector<std::optional<double>>(K, t)};
  }

  void validate(std::size_t K) const {
    if (thresholds.size() != K) {
      throw Error("policy has " + std::to_string(thresholds.size()) + " thresholds, network has " +
                  std::to_string(K) + " exits");
    }
    for (const auto& t : thresholds) {
      if (!t) continue;
      if (!std::isfinite(*t) || *t < 0.0 || (criterion == Criterion::confidence && *t > 1.0)) {
        throw Error("threshold out of range for " + to_string(criterion) + " criterion");
      }
    }
  }

  friend bool operator==(const ExitPolicy&, const ExitPolicy&) = default;
};

/// Confidence (max softmax) and entropy of one exit's output.
struct ExitScore {
  double confidence = 0.0;
  double entropy = 0.0;
  std::size_t prediction = 0;

  double value(Criterion c) const { return c == Criterion::confidence ? confidence : entropy; }
};

/// Entropy is taken as log(sum e^(z - max)) - sum p (z - max), which is exactly
/// ln m for constant logits.
inline ExitScore score_logits(const Tensor& logits) {
  const Tensor p = softmax(logits);
  ExitScore s;
  s.prediction = argmax(p.data());
  s.confidence = p[s.prediction];
  const auto z = logits.data();
  const double shift = z[argmax(z)];
  double total = 0.0, mean = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    total += std::exp(z[j] - shift);
    mean += p[j] * (z[j] - shift);
  }
  s.entropy = std::max(0.0, std::log(total) - mean);
  return s;
}

inline bool stops(const ExitScore& s, Criterion c, const std::optional<double>& threshold) {
  if (!threshold) return false;
  return c == Criterion::confidence ? s.confidence >= *threshold : s.entropy <= *threshold;
}

inline bool should_stop(const Tensor& logits, Criterion c, const std::optional<double>& threshold) {
  return stops(score_logits(logits), c, threshold);
}

struct InferenceRecord {
  std::size_t exit_index = 0;  // 1-based
  double cost_fraction = 1.0;
  std::size_t predicted_label = 0;
  double score = 0.0;

  friend bool operator==(const InferenceRecord&, const InferenceRecord&) = default;
};

/// Processes one sample block by block and stops at the first firing exit.
inline InferenceRecord adaptive_infer(const MultiExitNetwork& net, const ExitPolicy& policy, const Tensor& x) {
  const std::size_t K = net.num_exits();
  policy.validate(K);
  if (x.shape() != net.input_shape()) {
    throw ShapeError("input shape " + shape_str(x.shape()) + " does not match network input " +
                     shape_str(net.input_shape()));
  }
  Tensor cur = x;
  std::size_t i = 0;
  for (std::size_t j = 0; j < net.num_blocks(); ++j) {
    cur = forward_output(net.blocks()[j], cur);
    for (; i < K && net.exits()[i].attach_block == j; ++i) {
      const ExitScore s = score_logits(forward_output(net.exits()[i].layers, cur));
      if (i + 1 == K || stops(s, policy.criterion, policy.thresholds[i])) {
        return {i + 1, net.cost_fractions()[i], s.prediction, s.value(policy.criterion)};
      }
    }
  }
  throw Error("network has no final exit");
}

/// Scores of every exit for one sample, for repeated policy evaluation.
inline std::vector<ExitScore> trace_exits(const MultiExitNetwork& net, const Tensor& x) {
  std::vector<ExitScore> out;
  for (const Tensor& l : forward_all_exits(net, x, false).logits) out.push_back(score_logits(l));
  return out;
}

inline InferenceRecord infer_from_trace(const MultiExitNetwork& net, const ExitPolicy& policy,
                                        std::span<const ExitScore> trace) {
  const std::size_t K = trace.size();
  for (std::size_t i = 0; i < K; ++i) {
    if (i + 1 == K || stops(trace[i], policy.criterion, policy.thresholds[i])) {
      return {i + 1, net.cost_fractions()[i], trace[i].prediction, trace[i].value(policy.criterion)};
    }
  }
  throw Error("empty exit trace");
}

struct CalibrationResult {
  ExitPolicy policy;
  double rad_budget = 0.0;
  double holdout_accuracy = 0.0;
  double full_accuracy = 0.0;
  double holdout_efficacy = 0.0;
  /// No grid candidate met the budget; policy is all-"never".
  bool fallback = false;
};

/// Shared-threshold grid, ordered from most aggressive to most conservative.
inline std::vector<double> threshold_grid(Criterion c, std::size_t m) {
  std::vector<double> g;
  for (int k = 0; k <= 100; ++k) {
    if (c == Criterion::confidence) g.push_back(k / 100.0);
    else g.push_back(std::log(static_cast<double>(m)) * (100 - k) / 100.0);
  }
  return g;
}

inline double relative_accuracy_drop(double full, double policy) {
  if (full <= 0.0) return 0.0;
  return (full - policy) / full;
}

/// Picks the shared threshold with maximal holdout efficacy among candidates
/// whose relative accuracy drop is within `rad_budget`. Ties on efficacy
/// (1e-12) go to higher accuracy, then to the more aggressive threshold.
inline CalibrationResult calibrate(const MultiExitNetwork& net, std::span<const Tensor> inputs,
                                   std::span<const std::uint32_t> labels, Criterion criterion,
                                   double rad_budget, std::vector<double> grid = {}) {
  if (inputs.empty()) throw Error("calibration holdout set is empty");
  if (inputs.size() != labels.size()) throw Error("holdout inputs and labels differ in length");
  if (!(rad_budget > 0.0)) throw Error("rad_budget must be positive");
  const std::size_t K = net.num_exits();
  if (grid.empty()) grid = threshold_grid(criterion, net.num_classes());

  std::vector<std::vector<ExitScore>> traces;
  traces.reserve(inputs.size());
  for (const Tensor& x : inputs) traces.push_back(trace_exits(net, x));

  const double n = static_cast<double>(inputs.size());
  auto assess = [&](const ExitPolicy& p) {
    double correct = 0.0, cost = 0.0;
    for (std::size_t s = 0; s < traces.size(); ++s) {
      const InferenceRecord r = infer_from_trace(net, p, traces[s]);
      correct += (r.predicted_label == labels[s]) ? 1.0 : 0.0;
      cost += r.cost_fraction;
    }
    return std::pair{correct / n, 1.0 - cost / n};
  };

  CalibrationResult best;
  best.rad_budget = rad_budget;
  best.policy = ExitPolicy::never(criterion, K);
  best.full_accuracy = assess(best.policy).first;
  best.holdout_accuracy = best.full_accuracy;
  best.fallback = true;
  double best_eff = -1.0;

  // Grid runs aggressive -> conservative, so on a full tie the earlier one wins.
  for (double t : grid) {
    const ExitPolicy p = ExitPolicy::shared(criterion, K, t);
    const auto [acc, eff] = assess(p);
    if (relative_accuracy_drop(best.full_accuracy, acc) > rad_budget) continue;
    const bool better = eff > best_eff + 1e-12 ||
                        (std::abs(eff - best_eff) <= 1e-12 && acc > best.holdout_accuracy);
    if (best.fallback || better) {
      best.policy = p;
      best.holdout_accuracy = acc;
      best_eff = eff;
      best.fallback = false;
    }
  }
  best.holdout_efficacy = best.fallback ? assess(best.policy).second : best_eff;
  return best;
}

inline nlohmann::json policy_to_json(const CalibrationResult& c) {
  nlohmann::json j;
  j["criterion"] = to_string(c.policy.criterion);
  j["thresholds"] = nlohmann::json::array();
  for (const auto& t : c.policy.thresholds) j["thresholds"].push_back(t ? nlohmann::json(*t) : nlohmann::json());
  j["rad_budget"] = c.rad_budget;
  j["holdout_accuracy"] = c.holdout_accuracy;
  j["full_accuracy"] = c.full_accuracy;
  return j;
}

inline CalibrationResult policy_from_json(const nlohmann::json& j) {
  CalibrationResult c;
  c.policy.criterion = criterion_from_string(j.at("criterion").get<std::string>());
  for (const auto& t : j.at("thresholds")) {
    c.policy.thresholds.push_back(t.is_null() ? std::nullopt : std::optional<double>(t.get<double>()));
  }
  c.rad_budget = j.value("rad_budget", 0.0);
  c.holdout_accuracy = j.value("holdout_accuracy", 0.0);
  c.full_accuracy = j.value("full_accuracy", 0.0);
  return c;
}

}  // namespace sloth
