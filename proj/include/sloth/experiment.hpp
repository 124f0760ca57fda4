#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "sloth/model_io.hpp"
#include "sloth/partition.hpp"
#include "sloth/train.hpp"

namespace sloth {

/// Invalid experiment configuration; detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed; what() names the stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& msg) : Error(stage + ": " + msg), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

enum class AttackKind { deepsloth, pgd, pgd_avg, pgd_max, uap };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::deepsloth: return "deepsloth";
    case AttackKind::pgd: return "pgd";
    case AttackKind::pgd_avg: return "pgd_avg";
    case AttackKind::pgd_max: return "pgd_max";
    case AttackKind::uap: return "uap";
  }
  return "?";
}

inline AttackKind attack_kind_from_string(const std::string& s) {
  for (AttackKind k : {AttackKind::deepsloth, AttackKind::pgd, AttackKind::pgd_avg, AttackKind::pgd_max,
                       AttackKind::uap}) {
    if (to_string(k) == s) return k;
  }
  throw Error("unknown attack kind '" + s + "'");
}

struct AttackSpec {
  std::string name;
  AttackKind kind = AttackKind::deepsloth;
  PerturbationBudget budget;
  AttackConfig config;
  /// Class-universal only: craft for this class alone; otherwise one perturbation per class.
  std::optional<std::uint32_t> only_class;
  /// Training samples used to craft universal perturbations.
  std::size_t universal_samples = 250;

  bool policy_dependent() const { return kind == AttackKind::deepsloth && budget.norm == Norm::l2; }
};

/// Defaults for an attack of `kind` at `budget`, before per-key overrides.
inline AttackSpec default_attack_spec(AttackKind kind, Scope scope, PerturbationBudget budget) {
  AttackSpec a;
  a.kind = kind;
  a.budget = budget;
  switch (kind) {
    case AttackKind::deepsloth:
      a.config = default_attack_config(budget.norm, scope, TargetMode::uniform, budget.epsilon);
      a.name = "deepsloth";
      if (budget.norm != Norm::linf) a.name += "-" + to_string(budget.norm);
      if (scope == Scope::universal) a.name += "-universal";
      if (scope == Scope::class_universal) a.name += "-class-universal";
      break;
    case AttackKind::uap:
      a.config.scope = Scope::universal;
      // One shared perturbation needs small steps to settle inside the ball.
      a.config.iterations = 100;
      a.config.step_size = budget.epsilon / 20.0;
      a.name = "uap-pgd";
      break;
    default:
      a.config.iterations = 20;
      a.config.step_size = 2.5 * budget.epsilon / 20.0;
      a.name = kind == AttackKind::pgd ? "pgd" : kind == AttackKind::pgd_avg ? "pgd-avg" : "pgd-max";
      break;
  }
  return a;
}

struct DatasetConfig {
  /// "synthetic" or "file" (an MXDS dataset at `path`).
  std::string source = "synthetic";
  std::string path;
  SyntheticSpec synthetic;
  bool synthetic_seed_set = false;
  double test_fraction = 0.2;
  double holdout_fraction = 0.1;
};

struct ModelConfig {
  std::string architecture = "conv4";
  std::size_t width = 0;
};

struct PolicyConfig {
  Criterion criterion = Criterion::confidence;
  std::vector<double> rad_budgets{0.05, 0.15};
};

struct AdvTrainingSpec {
  bool enabled = false;
  std::vector<Regime> regimes{Regime::pgd10};
  AdvTrainConfig config;
  /// Start from the trained undefended model instead of a fresh initialisation.
  bool from_pretrained = false;
  /// Name of the attack block used to probe the trained models.
  std::string attack = "deepsloth";
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig training;
  PolicyConfig policy;
  /// Test samples evaluated and attacked; 0 means the whole test split.
  std::size_t eval_samples = 300;
  std::vector<AttackSpec> attacks;
  PartitionScenario partition;
  AdvTrainingSpec adversarial_training;
};

// ---- config (de)serialisation ----

namespace detail {

using nlohmann::json;

inline void require_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline AttackSpec attack_from_json(const json& j, std::size_t index) {
  const std::string where = "attacks[" + std::to_string(index) + "]";
  require_keys(j, where,
               {"name", "kind", "norm", "epsilon", "scope", "target_mode", "delta", "iterations", "step_size",
                "decay_every", "decay_factor", "sparsity", "norm_adjust", "initial_norm", "include_final_exit",
                "target_class", "universal_samples", "seed"});
  if (!j.contains("kind")) throw ConfigError(where + " needs a 'kind'");
  std::string kind_s, norm_s = "linf", scope_s = "per_sample", mode_s = "uniform";
  double eps = 0.03;
  read(j, "kind", kind_s, where);
  read(j, "norm", norm_s, where);
  read(j, "scope", scope_s, where);
  read(j, "target_mode", mode_s, where);
  read(j, "epsilon", eps, where);
  AttackKind kind;
  PerturbationBudget budget;
  Scope scope;
  TargetMode mode;
  try {
    kind = attack_kind_from_string(kind_s);
    budget = {norm_from_string(norm_s), eps};
    scope = scope_from_string(scope_s);
    mode = target_mode_from_string(mode_s);
    budget.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (kind != AttackKind::deepsloth && budget.norm != Norm::linf) {
    throw ConfigError(where + ": " + kind_s + " supports only linf budgets");
  }
  if (kind == AttackKind::uap && scope == Scope::per_sample) scope = Scope::universal;
  if ((kind == AttackKind::pgd || kind == AttackKind::pgd_avg || kind == AttackKind::pgd_max) &&
      scope != Scope::per_sample) {
    throw ConfigError(where + ": " + kind_s + " is a per-sample attack");
  }
  AttackSpec a = default_attack_spec(kind, scope, budget);
  if (kind == AttackKind::deepsloth && mode != TargetMode::uniform) {
    a.config = default_attack_config(budget.norm, scope, mode, eps);
    a.name += mode == TargetMode::preserve_accuracy ? "-preserve" : "-hurt";
  }
  a.config.scope = scope;
  a.config.target_mode = mode;
  read(j, "name", a.name, where);
  read(j, "delta", a.config.delta, where);
  read(j, "iterations", a.config.iterations, where);
  read(j, "step_size", a.config.step_size, where);
  read(j, "decay_every", a.config.decay_every, where);
  read(j, "decay_factor", a.config.decay_factor, where);
  read(j, "sparsity", a.config.sparsity, where);
  read(j, "norm_adjust", a.config.norm_adjust, where);
  read(j, "initial_norm", a.config.initial_norm, where);
  read(j, "include_final_exit", a.config.include_final_exit, where);
  read(j, "seed", a.config.seed, where);
  read(j, "universal_samples", a.universal_samples, where);
  if (j.contains("target_class")) {
    if (scope != Scope::class_universal) throw ConfigError(where + ": target_class needs class_universal scope");
    std::uint32_t c = 0;
    read(j, "target_class", c, where);
    a.only_class = c;
    a.config.target_class = c;
  }
  if (a.name.empty() || a.name.find_first_of(",/\\ \n") != std::string::npos) {
    throw ConfigError(where + ": attack names must be non-empty without commas, slashes or spaces");
  }
  try {
    a.config.validate();
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (a.universal_samples == 0) throw ConfigError(where + ": universal_samples must be positive");
  return a;
}

inline json attack_to_json(const AttackSpec& a) {
  json j{{"name", a.name},
         {"kind", to_string(a.kind)},
         {"norm", to_string(a.budget.norm)},
         {"epsilon", a.budget.epsilon},
         {"scope", to_string(a.config.scope)},
         {"target_mode", to_string(a.config.target_mode)},
         {"delta", a.config.delta},
         {"iterations", a.config.iterations},
         {"step_size", a.config.step_size},
         {"decay_every", a.config.decay_every},
         {"decay_factor", a.config.decay_factor},
         {"sparsity", a.config.sparsity},
         {"norm_adjust", a.config.norm_adjust},
         {"initial_norm", a.config.initial_norm},
         {"include_final_exit", a.config.include_final_exit},
         {"universal_samples", a.universal_samples},
         {"seed", a.config.seed}};
  if (a.only_class) j["target_class"] = *a.only_class;
  return j;
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using detail::read;
  using detail::require_keys;
  ExperimentConfig c;
  require_keys(j, "config",
               {"seed", "output_dir", "dataset", "model", "training", "policy", "eval_samples", "attacks",
                "partition", "adversarial_training"});
  read(j, "seed", c.seed, "config");
  read(j, "output_dir", c.output_dir, "config");
  read(j, "eval_samples", c.eval_samples, "config");

  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    require_keys(d, "dataset",
                 {"source", "path", "classes", "samples", "channels", "height", "width", "difficulty", "contrast",
                  "polarity_flip", "seed", "template_seed", "test_fraction", "holdout_fraction"});
    auto& s = c.dataset.synthetic;
    read(d, "source", c.dataset.source, "dataset");
    read(d, "path", c.dataset.path, "dataset");
    read(d, "classes", s.classes, "dataset");
    read(d, "samples", s.samples, "dataset");
    read(d, "channels", s.channels, "dataset");
    read(d, "height", s.height, "dataset");
    read(d, "width", s.width, "dataset");
    read(d, "difficulty", s.difficulty, "dataset");
    read(d, "contrast", s.contrast, "dataset");
    read(d, "polarity_flip", s.polarity_flip, "dataset");
    read(d, "template_seed", s.template_seed, "dataset");
    if (d.contains("seed")) {
      read(d, "seed", s.seed, "dataset");
      c.dataset.synthetic_seed_set = true;
    }
    read(d, "test_fraction", c.dataset.test_fraction, "dataset");
    read(d, "holdout_fraction", c.dataset.holdout_fraction, "dataset");
  }
  if (c.dataset.source != "synthetic" && c.dataset.source != "file") {
    throw ConfigError("dataset.source must be 'synthetic' or 'file'");
  }
  if (c.dataset.source == "file" && c.dataset.path.empty()) throw ConfigError("dataset.path is required for files");
  if (!(c.dataset.test_fraction > 0.0) || !(c.dataset.holdout_fraction > 0.0) ||
      !(c.dataset.test_fraction + c.dataset.holdout_fraction < 1.0)) {
    throw ConfigError("dataset split fractions must be positive and leave a training split");
  }

  if (j.contains("model")) {
    require_keys(j["model"], "model", {"architecture", "width"});
    read(j["model"], "architecture", c.model.architecture, "model");
    read(j["model"], "width", c.model.width, "model");
  }
  if (c.model.architecture != "conv4" && c.model.architecture != "mlp4") {
    throw ConfigError("unknown model.architecture '" + c.model.architecture + "'");
  }

  c.training.epochs = 15;
  c.training.batch_size = 16;
  if (j.contains("training")) {
    const auto& t = j["training"];
    require_keys(t, "training", {"epochs", "lr", "batch_size", "exit_weights"});
    read(t, "epochs", c.training.epochs, "training");
    read(t, "lr", c.training.lr, "training");
    read(t, "batch_size", c.training.batch_size, "training");
    read(t, "exit_weights", c.training.exit_weights, "training");
  }
  if (!(c.training.lr >= 0.0) || c.training.batch_size == 0) throw ConfigError("invalid training settings");

  if (j.contains("policy")) {
    const auto& p = j["policy"];
    require_keys(p, "policy", {"criterion", "rad_budgets"});
    std::string crit = to_string(c.policy.criterion);
    read(p, "criterion", crit, "policy");
    try {
      c.policy.criterion = criterion_from_string(crit);
    } catch (const Error& e) {
      throw ConfigError(std::string("policy: ") + e.what());
    }
    read(p, "rad_budgets", c.policy.rad_budgets, "policy");
  }
  if (c.policy.rad_budgets.empty()) throw ConfigError("policy.rad_budgets must not be empty");
  for (double b : c.policy.rad_budgets) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("rad budgets must lie in (0, 1)");
  }

  if (j.contains("attacks")) {
    if (!j["attacks"].is_array()) throw ConfigError("attacks must be an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < j["attacks"].size(); ++i) {
      AttackSpec a = detail::attack_from_json(j["attacks"][i], i);
      if (!names.insert(a.name).second) throw ConfigError("duplicate attack name '" + a.name + "'");
      c.attacks.push_back(std::move(a));
    }
  }

  if (j.contains("partition")) {
    const auto& p = j["partition"];
    require_keys(p, "partition", {"split_exit", "edge_latency_ms", "remote_latency_ms", "adversary_craft_ms"});
    read(p, "split_exit", c.partition.split_exit, "partition");
    read(p, "edge_latency_ms", c.partition.edge_latency_ms, "partition");
    read(p, "remote_latency_ms", c.partition.remote_latency_ms, "partition");
    read(p, "adversary_craft_ms", c.partition.adversary_craft_ms, "partition");
  }
  if (c.partition.edge_latency_ms < 0.0 || c.partition.remote_latency_ms < 0.0 ||
      !(c.partition.adversary_craft_ms > 0.0) || c.partition.split_exit < 1) {
    throw ConfigError("invalid partition scenario");
  }

  if (j.contains("adversarial_training")) {
    const auto& a = j["adversarial_training"];
    require_keys(a, "adversarial_training",
                 {"enabled", "regimes", "base_epochs", "head_epochs", "lr", "batch_size", "epsilon",
                  "inner_iterations", "inner_step", "freeze_trunk", "from_pretrained", "attack"});
    auto& at = c.adversarial_training;
    at.enabled = true;
    read(a, "enabled", at.enabled, "adversarial_training");
    if (a.contains("regimes")) {
      std::vector<std::string> names;
      read(a, "regimes", names, "adversarial_training");
      at.regimes.clear();
      try {
        for (const auto& n : names) at.regimes.push_back(regime_from_string(n));
      } catch (const Error& e) {
        throw ConfigError(std::string("adversarial_training: ") + e.what());
      }
    }
    at.config.batch_size = c.training.batch_size;
    read(a, "base_epochs", at.config.base_epochs, "adversarial_training");
    read(a, "head_epochs", at.config.head_epochs, "adversarial_training");
    read(a, "lr", at.config.lr, "adversarial_training");
    read(a, "batch_size", at.config.batch_size, "adversarial_training");
    read(a, "epsilon", at.config.epsilon, "adversarial_training");
    read(a, "inner_iterations", at.config.inner_iterations, "adversarial_training");
    read(a, "inner_step", at.config.inner_step, "adversarial_training");
    read(a, "freeze_trunk", at.config.freeze_trunk, "adversarial_training");
    read(a, "from_pretrained", at.from_pretrained, "adversarial_training");
    read(a, "attack", at.attack, "adversarial_training");
    if (!(at.config.epsilon > 0.0) || at.config.batch_size == 0) {
      throw ConfigError("invalid adversarial_training settings");
    }
    if (at.enabled) {
      bool found = false;
      for (const auto& atk : c.attacks) found = found || atk.name == at.attack;
      if (!found) throw ConfigError("adversarial_training.attack names no attack block: '" + at.attack + "'");
    }
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

/// Fully resolved configuration, including defaults.
inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  const auto& s = c.dataset.synthetic;
  j["dataset"] = {{"source", c.dataset.source},     {"classes", s.classes},
                  {"samples", s.samples},           {"channels", s.channels},
                  {"height", s.height},             {"width", s.width},
                  {"difficulty", s.difficulty},     {"contrast", s.contrast},
                  {"polarity_flip", s.polarity_flip}, {"template_seed", s.template_seed},
                  {"test_fraction", c.dataset.test_fraction}, {"holdout_fraction", c.dataset.holdout_fraction}};
  if (c.dataset.source == "file") j["dataset"]["path"] = c.dataset.path;
  if (c.dataset.synthetic_seed_set) j["dataset"]["seed"] = s.seed;
  j["model"] = {{"architecture", c.model.architecture}, {"width", c.model.width}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"lr", c.training.lr},
                   {"batch_size", c.training.batch_size},
                   {"exit_weights", c.training.exit_weights}};
  j["policy"] = {{"criterion", to_string(c.policy.criterion)}, {"rad_budgets", c.policy.rad_budgets}};
  j["eval_samples"] = c.eval_samples;
  j["attacks"] = nlohmann::json::array();
  for (const auto& a : c.attacks) j["attacks"].push_back(detail::attack_to_json(a));
  j["partition"] = {{"split_exit", c.partition.split_exit},
                    {"edge_latency_ms", c.partition.edge_latency_ms},
                    {"remote_latency_ms", c.partition.remote_latency_ms},
                    {"adversary_craft_ms", c.partition.adversary_craft_ms}};
  const auto& at = c.adversarial_training;
  nlohmann::json regimes = nlohmann::json::array();
  for (Regime r : at.regimes) regimes.push_back(to_string(r));
  j["adversarial_training"] = {{"enabled", at.enabled},
                               {"regimes", regimes},
                               {"base_epochs", at.config.base_epochs},
                               {"head_epochs", at.config.head_epochs},
                               {"lr", at.config.lr},
                               {"batch_size", at.config.batch_size},
                               {"epsilon", at.config.epsilon},
                               {"inner_iterations", at.config.inner_iterations},
                               {"inner_step", at.config.inner_step},
                               {"freeze_trunk", at.config.freeze_trunk},
                               {"from_pretrained", at.from_pretrained},
                               {"attack", at.attack}};
  return j;
}

// ---- pipeline stages ----

/// Seeds for the independent random streams of one experiment.
struct ExperimentSeeds {
  std::uint64_t data, split, init, train, advtrain;
};

inline ExperimentSeeds derive_seeds(std::uint64_t seed) {
  return {detail::mix_seed(seed, 0), detail::mix_seed(seed, 1), detail::mix_seed(seed, 2), detail::mix_seed(seed, 3),
          detail::mix_seed(seed, 4)};
}

inline Dataset load_or_generate(const ExperimentConfig& cfg) {
  if (cfg.dataset.source == "file") return load_dataset(cfg.dataset.path);
  SyntheticSpec spec = cfg.dataset.synthetic;
  if (!cfg.dataset.synthetic_seed_set) spec.seed = derive_seeds(cfg.seed).data;
  return gen_synthetic(spec);
}

inline DatasetSplits prepare_data(const ExperimentConfig& cfg) {
  return split_dataset(load_or_generate(cfg), cfg.dataset.test_fraction, cfg.dataset.holdout_fraction,
                       derive_seeds(cfg.seed).split);
}

inline MultiExitNetwork build_model(const ExperimentConfig& cfg, const Dataset& data) {
  MultiExitNetwork net = make_architecture(cfg.model.architecture, data.sample_shape(), data.num_classes, cfg.model.width);
  net.initialize(derive_seeds(cfg.seed).init);
  return net;
}

inline TrainResult train_model(MultiExitNetwork& net, const ExperimentConfig& cfg, const Dataset& train_set) {
  TrainConfig tc = cfg.training;
  tc.seed = derive_seeds(cfg.seed).train;
  return train(net, train_set, tc);
}

inline Dataset eval_subset(const ExperimentConfig& cfg, const Dataset& test) {
  return cfg.eval_samples == 0 ? test : test.head(cfg.eval_samples);
}

inline std::string rad_tag(double budget) {
  return "rad" + std::to_string(static_cast<long long>(std::llround(budget * 100.0)));
}

/// Perturbed copies of `targets` plus the wall-clock time spent crafting them.
struct CraftResult {
  Dataset perturbed;
  double seconds = 0.0;
};

/// Crafts `attack` against `net` for every sample of `targets`. Universal scopes
/// are crafted on the first `universal_samples` samples of `pool` (per class
/// for class-universal) and applied unchanged.
inline CraftResult craft(const MultiExitNetwork& net, const AttackSpec& attack, const Dataset& targets,
                         const Dataset& pool, const std::optional<ExitPolicy>& policy = std::nullopt) {
  AttackConfig cfg = attack.config;
  if (policy) cfg.policy = *policy;
  CraftResult out;
  out.perturbed = targets;
  const auto t0 = std::chrono::steady_clock::now();
  const Scope scope = attack.kind == AttackKind::uap ? Scope::universal : cfg.scope;
  auto universal_v = [&](const Dataset& src, const AttackConfig& c) {
    if (src.size() == 0) throw Error("no samples to craft a universal perturbation from");
    const Dataset d = src.head(std::min(attack.universal_samples, src.size()));
    if (attack.kind == AttackKind::uap) return uap(net, d.inputs, d.labels, attack.budget, c);
    return deepsloth(net, d.inputs, d.labels, attack.budget, c);
  };
  if (scope == Scope::per_sample) {
    for (std::size_t s = 0; s < targets.size(); ++s) {
      const Tensor& x = targets.inputs[s];
      const std::uint32_t y = targets.labels[s];
      Tensor v;
      switch (attack.kind) {
        case AttackKind::deepsloth: {
          const std::uint32_t ys[1] = {y};
          v = deepsloth(net, std::span<const Tensor>(&x, 1), ys, attack.budget, cfg);
          break;
        }
        case AttackKind::pgd: v = pgd(net, x, y, attack.budget, cfg); break;
        case AttackKind::pgd_avg: v = pgd_avg(net, x, y, attack.budget, cfg); break;
        case AttackKind::pgd_max: v = pgd_max(net, x, y, attack.budget, cfg); break;
        case AttackKind::uap: break;
      }
      out.perturbed.inputs[s] = apply_perturbation(x, v);
    }
  } else if (scope == Scope::universal) {
    const Tensor v = universal_v(pool, cfg);
    for (Tensor& x : out.perturbed.inputs) x = apply_perturbation(x, v);
  } else {
    for (std::uint32_t c = 0; c < targets.num_classes; ++c) {
      if (attack.only_class && *attack.only_class != c) continue;
      AttackConfig cc = cfg;
      cc.target_class = c;
      const Dataset src = pool.of_class(c);
      bool any = false;
      for (std::uint32_t y : targets.labels) any = any || y == c;
      if (!any || src.size() == 0) continue;
      const Tensor v = universal_v(src, cc);
      for (std::size_t s = 0; s < targets.size(); ++s) {
        if (targets.labels[s] == c) out.perturbed.inputs[s] = apply_perturbation(targets.inputs[s], v);
      }
    }
    if (attack.only_class) out.perturbed = out.perturbed.of_class(*attack.only_class);
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---- experiment ----

struct TaggedReport {
  std::string tag;
  EvalReport report;
};

struct AdvTrainRow {
  std::string model;
  EvalReport clean;
  EvalReport attacked;
};

struct ExperimentResult {
  std::vector<CalibrationResult> policies;
  std::vector<TaggedReport> reports;
  std::vector<std::pair<std::string, TrafficReport>> traffic;
  std::vector<std::pair<std::string, double>> timing;
  std::vector<AdvTrainRow> advtrain;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("write failed for " + p.string());
}

inline std::string file_tag(const std::string& tag) {
  std::string s = tag;
  for (char& ch : s) {
    if (ch == '/') ch = '_';
  }
  return s;
}

inline std::string exits_row(const std::string& tag, const EvalReport& r) {
  std::string s = tag;
  for (std::size_t c : r.per_exit_counts) s += ',' + std::to_string(c);
  return s;
}

}  // namespace detail

/// Runs the whole pipeline and writes its reports into cfg.output_dir:
/// report.csv, exits.csv, eec_*.csv, policy_*.json, model.mxnn, perturbed_*.mxds,
/// partition.csv, advtrain.csv (when enabled), timing.csv and status.json.
/// Everything except timing.csv is byte-identical across runs with the same seed.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  std::string stage = "setup";
  ExperimentResult res;
  try {
    detail::write_text(out / "status.json", nlohmann::json{{"status", "running"}}.dump(2) + "\n");
    detail::write_text(out / "config.json", experiment_config_to_json(cfg).dump(2) + "\n");

    stage = "data";
    const DatasetSplits splits = prepare_data(cfg);
    const Dataset test = eval_subset(cfg, splits.test);

    stage = "train";
    MultiExitNetwork net = build_model(cfg, splits.train);
    cfg.partition.validate(net.num_exits());
    train_model(net, cfg, splits.train);
    save_model(net, (out / "model.mxnn").string());

    stage = "calibrate";
    for (double b : cfg.policy.rad_budgets) {
      res.policies.push_back(calibrate(net, splits.holdout.inputs, splits.holdout.labels, cfg.policy.criterion, b));
      auto j = policy_to_json(res.policies.back());
      j["fallback"] = res.policies.back().fallback;
      detail::write_text(out / ("policy_" + rad_tag(b) + ".json"), j.dump(2) + "\n");
    }

    stage = "attack";
    std::vector<std::optional<CraftResult>> shared(cfg.attacks.size());
    for (std::size_t p = 0; p < res.policies.size(); ++p) {
      const CalibrationResult& cal = res.policies[p];
      const std::string rt = rad_tag(cal.rad_budget);
      const EvalReport clean = evaluate(net, cal.policy, test.inputs, test.labels);
      res.reports.push_back({rt + "/clean", clean});
      TrafficReport clean_traffic = simulate(clean.records, cfg.partition);
      res.traffic.emplace_back(rt + "/clean", clean_traffic);
      for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
        const AttackSpec& atk = cfg.attacks[a];
        stage = "attack " + atk.name;
        CraftResult crafted;
        if (atk.policy_dependent()) {
          crafted = craft(net, atk, test, splits.train, cal.policy);
          res.timing.emplace_back(rt + "/" + atk.name, crafted.seconds);
        } else {
          if (!shared[a]) {
            shared[a] = craft(net, atk, test, splits.train);
            res.timing.emplace_back(atk.name, shared[a]->seconds);
          }
          crafted = *shared[a];
        }
        const std::string tag = rt + "/" + atk.name;
        EvalReport rep = evaluate(net, cal.policy, crafted.perturbed.inputs, crafted.perturbed.labels);
        rep.crafting_seconds = crafted.seconds;
        save_dataset(crafted.perturbed, (out / ("perturbed_" + detail::file_tag(tag) + ".mxds")).string());
        TrafficReport t = simulate(rep.records, cfg.partition);
        t.amplification = amplification(clean_traffic, t, cfg.partition);
        res.traffic.emplace_back(tag, t);
        res.reports.push_back({tag, std::move(rep)});
      }
      stage = "attack";
    }

    if (cfg.adversarial_training.enabled) {
      stage = "advtrain";
      const auto& at = cfg.adversarial_training;
      const AttackSpec* probe = nullptr;
      for (const auto& a : cfg.attacks) {
        if (a.name == at.attack) probe = &a;
      }
      if (!probe) throw ConfigError("adversarial_training.attack names no attack block");
      const CalibrationResult& cal = res.policies.front();
      for (const auto& r : res.reports) {
        if (r.tag == rad_tag(cal.rad_budget) + "/clean") res.advtrain.push_back({"undefended", r.report, {}});
        if (r.tag == rad_tag(cal.rad_budget) + "/" + probe->name) res.advtrain.back().attacked = r.report;
      }
      for (Regime regime : at.regimes) {
        stage = "advtrain " + to_string(regime);
        MultiExitNetwork robust = at.from_pretrained ? net : build_model(cfg, splits.train);
        AdvTrainConfig ac = at.config;
        ac.seed = derive_seeds(cfg.seed).advtrain;
        adversarial_train(robust, splits.train, regime, ac);
        save_model(robust, (out / ("model_at_" + to_string(regime) + ".mxnn")).string());
        const CalibrationResult rc =
            calibrate(robust, splits.holdout.inputs, splits.holdout.labels, cfg.policy.criterion, cal.rad_budget);
        AdvTrainRow row{"at_" + to_string(regime), evaluate(robust, rc.policy, test.inputs, test.labels), {}};
        const CraftResult c = craft(robust, *probe, test, splits.train,
                                    probe->policy_dependent() ? std::optional<ExitPolicy>(rc.policy) : std::nullopt);
        row.attacked = evaluate(robust, rc.policy, c.perturbed.inputs, c.perturbed.labels);
        res.timing.emplace_back("at_" + to_string(regime) + "/" + probe->name, c.seconds);
        res.advtrain.push_back(std::move(row));
      }
    }

    stage = "report";
    std::string report = std::string(kReportHeader) + "\n";
    std::string exits = "tag";
    for (std::size_t i = 1; i <= net.num_exits(); ++i) exits += ",exit_" + std::to_string(i);
    exits += "\n";
    for (const auto& r : res.reports) {
      report += report_row(r.tag, r.report) + "\n";
      exits += detail::exits_row(r.tag, r.report) + "\n";
      std::ostringstream eec;
      write_eec_csv(eec, r.report.curve);
      detail::write_text(out / ("eec_" + detail::file_tag(r.tag) + ".csv"), eec.str());
    }
    detail::write_text(out / "report.csv", report);
    detail::write_text(out / "exits.csv", exits);

    std::string part = std::string(kPartitionHeader) + "\n";
    for (const auto& [tag, t] : res.traffic) part += partition_row(tag, t) + "\n";
    detail::write_text(out / "partition.csv", part);

    std::string timing = "tag,crafting_seconds\n";
    for (const auto& [tag, s] : res.timing) timing += tag + ',' + format_double(s) + "\n";
    detail::write_text(out / "timing.csv", timing);

    if (!res.advtrain.empty()) {
      std::string t = "model,clean_efficacy,clean_accuracy,attack_efficacy,attack_accuracy\n";
      for (const auto& r : res.advtrain) {
        t += r.model + ',' + format_double(r.clean.efficacy) + ',' + format_double(r.clean.accuracy) + ',' +
             format_double(r.attacked.efficacy) + ',' + format_double(r.attacked.accuracy) + "\n";
      }
      detail::write_text(out / "advtrain.csv", t);
    }
    detail::write_text(out / "status.json", nlohmann::json{{"status", "complete"}}.dump(2) + "\n");
  } catch (const std::exception& e) {
    detail::write_text(out / "status.json",
                       nlohmann::json{{"status", "failed"}, {"stage", stage}, {"error", e.what()}}.dump(2) + "\n");
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw StageError(stage, e.what());
  }
  return res;
}

// ---- transferability ----

enum class TransferKind { cross_architecture, limited_data, cross_domain };

struct TransferScenario {
  TransferKind kind = TransferKind::cross_architecture;
  /// limited_data: share of the victim's training split available to the surrogate.
  double fraction = 0.25;

  std::string tag() const {
    switch (kind) {
      case TransferKind::cross_architecture: return "cross_architecture";
      case TransferKind::limited_data: return "limited_data_" + format_double(fraction);
      case TransferKind::cross_domain: return "cross_domain";
    }
    return "?";
  }
};

inline TransferScenario transfer_scenario_from_string(const std::string& s, double fraction = 0.25) {
  if (s == "cross_architecture") return {TransferKind::cross_architecture, fraction};
  if (s == "limited_data") return {TransferKind::limited_data, fraction};
  if (s == "cross_domain") return {TransferKind::cross_domain, fraction};
  throw Error("unknown transfer scenario '" + s + "'");
}

struct TransferResult {
  std::string scenario;
  CalibrationResult victim_policy;
  EvalReport victim_clean;
  /// One report per DeepSloth attack block of the surrogate config, in order.
  std::vector<TaggedReport> transferred;
};

/// Trains a surrogate, crafts the surrogate config's DeepSloth attacks on it and
/// evaluates them on the victim under the victim's first calibrated policy.
/// Writes transfer_<scenario>.csv into the victim's output_dir.
inline TransferResult run_transfer(const ExperimentConfig& surrogate_cfg, const ExperimentConfig& victim_cfg,
                                   const TransferScenario& scenario) {
  std::vector<const AttackSpec*> attacks;
  for (const auto& a : surrogate_cfg.attacks) {
    if (a.kind == AttackKind::deepsloth) attacks.push_back(&a);
  }
  if (attacks.empty()) throw ConfigError("surrogate config has no deepsloth attack block");
  if (scenario.kind == TransferKind::limited_data && !(scenario.fraction > 0.0 && scenario.fraction <= 1.0)) {
    throw ConfigError("limited-data fraction must lie in (0, 1]");
  }
  if (scenario.kind == TransferKind::cross_domain && surrogate_cfg.dataset.source == "synthetic" &&
      victim_cfg.dataset.source == "synthetic" &&
      surrogate_cfg.dataset.synthetic.template_seed == victim_cfg.dataset.synthetic.template_seed) {
    throw ConfigError("cross-domain surrogate needs a different dataset.template_seed");
  }

  const DatasetSplits vsplits = prepare_data(victim_cfg);
  MultiExitNetwork victim = build_model(victim_cfg, vsplits.train);
  train_model(victim, victim_cfg, vsplits.train);
  TransferResult res;
  res.scenario = scenario.tag();
  res.victim_policy = calibrate(victim, vsplits.holdout.inputs, vsplits.holdout.labels, victim_cfg.policy.criterion,
                                victim_cfg.policy.rad_budgets.front());
  const Dataset test = eval_subset(victim_cfg, vsplits.test);
  res.victim_clean = evaluate(victim, res.victim_policy.policy, test.inputs, test.labels);

  DatasetSplits ssplits = vsplits;
  switch (scenario.kind) {
    case TransferKind::cross_architecture: break;
    case TransferKind::limited_data: {
      const auto perm = seeded_permutation(vsplits.train.size(), derive_seeds(surrogate_cfg.seed).split);
      const auto n = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(scenario.fraction * static_cast<double>(vsplits.train.size()))));
      ssplits.train = vsplits.train.subset(std::span<const std::size_t>(perm).subspan(0, n));
      break;
    }
    case TransferKind::cross_domain: ssplits = prepare_data(surrogate_cfg); break;
  }
  if (ssplits.train.sample_shape() != vsplits.train.sample_shape() ||
      ssplits.train.num_classes != vsplits.train.num_classes) {
    throw ShapeError("surrogate and victim data have incompatible shapes");
  }
  MultiExitNetwork surrogate = build_model(surrogate_cfg, ssplits.train);
  train_model(surrogate, surrogate_cfg, ssplits.train);
  const CalibrationResult scal = calibrate(surrogate, ssplits.holdout.inputs, ssplits.holdout.labels,
                                           surrogate_cfg.policy.criterion, surrogate_cfg.policy.rad_budgets.front());

  for (const AttackSpec* a : attacks) {
    const CraftResult c =
        craft(surrogate, *a, test, ssplits.train,
              a->policy_dependent() ? std::optional<ExitPolicy>(scal.policy) : std::nullopt);
    EvalReport rep = evaluate(victim, res.victim_policy.policy, c.perturbed.inputs, c.perturbed.labels);
    rep.crafting_seconds = c.seconds;
    res.transferred.push_back({res.scenario + "/" + a->name, std::move(rep)});
  }

  std::filesystem::create_directories(victim_cfg.output_dir);
  std::string csv = std::string(kReportHeader) + "\n" + report_row(res.scenario + "/victim-clean", res.victim_clean) + "\n";
  for (const auto& t : res.transferred) csv += report_row(t.tag, t.report) + "\n";
  detail::write_text(std::filesystem::path(victim_cfg.output_dir) / ("transfer_" + res.scenario + ".csv"), csv);
  return res;
}

}  // namespace sloth

namespace sloth {

/// JSON for the desk benchmark: 8-class 1x16x16 synthetic data, conv4, linf eps 0.1.
inline const char* kDeskBenchmarkJson = R"({
  "seed": 1,
  "output_dir": "out/desk",
  "dataset": {"source": "synthetic", "classes": 8, "samples": 4000, "channels": 1, "height": 16, "width": 16,
              "difficulty": 0.15, "contrast": 0.2, "polarity_flip": 0.2, "template_seed": 1,
              "test_fraction": 0.2, "holdout_fraction": 0.1},
  "model": {"architecture": "conv4"},
  "training": {"epochs": 15, "lr": 0.05, "batch_size": 16},
  "policy": {"criterion": "confidence", "rad_budgets": [0.05, 0.15]},
  "eval_samples": 300,
  "attacks": [
    {"kind": "pgd", "epsilon": 0.1},
    {"kind": "pgd_avg", "epsilon": 0.1},
    {"kind": "pgd_max", "epsilon": 0.1},
    {"kind": "uap", "epsilon": 0.1},
    {"kind": "deepsloth", "epsilon": 0.1},
    {"kind": "deepsloth", "epsilon": 0.1, "scope": "universal"},
    {"kind": "deepsloth", "epsilon": 0.1, "scope": "class_universal"},
    {"kind": "deepsloth", "epsilon": 0.1, "target_mode": "preserve_accuracy"},
    {"kind": "deepsloth", "epsilon": 0.1, "target_mode": "hurt_accuracy"},
    {"kind": "deepsloth", "norm": "l2", "epsilon": 1.0},
    {"kind": "deepsloth", "norm": "l1", "epsilon": 8.0}
  ],
  "partition": {"split_exit": 1, "edge_latency_ms": 0.0, "remote_latency_ms": 11.0, "adversary_craft_ms": 2.0},
  "adversarial_training": {"enabled": true, "regimes": ["pgd10"], "base_epochs": 20, "head_epochs": 10,
                           "lr": 0.05, "batch_size": 16, "epsilon": 0.05, "inner_iterations": 10,
                           "freeze_trunk": false, "from_pretrained": true, "attack": "deepsloth"}
})";

inline ExperimentConfig desk_benchmark_config() {
  return experiment_config_from_json(nlohmann::json::parse(kDeskBenchmarkJson));
}

}  // namespace sloth
