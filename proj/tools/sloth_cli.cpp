// Command-line front end for the slowdown-attack lab.
//
//   sloth [--config cfg.json] [--seed N] [--out DIR] <subcommand> [options]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <filesystem>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "sloth.hpp"

namespace fs = std::filesystem;
using namespace sloth;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? desk_benchmark_config() : load_experiment_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.output_dir = g.out;
  return c;
}

fs::path out_dir(const ExperimentConfig& c) {
  fs::create_directories(c.output_dir);
  return c.output_dir;
}

std::string or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback.string() : given;
}

const AttackSpec& find_attack(const ExperimentConfig& c, const std::string& name) {
  for (const auto& a : c.attacks) {
    if (a.name == name) return a;
  }
  std::string known;
  for (const auto& a : c.attacks) known += (known.empty() ? "" : ", ") + a.name;
  throw ConfigError("no attack named '" + name + "' in config (have: " + known + ")");
}

CalibrationResult load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open policy " + path);
  return policy_from_json(nlohmann::json::parse(in));
}

void write_report(const fs::path& path, const std::string& tag, const EvalReport& r) {
  std::ofstream out(path);
  out << kReportHeader << "\n" << report_row(tag, r) << "\n";
}

void print_summary(const std::vector<TaggedReport>& reports) {
  std::cout << std::left << std::setw(40) << "tag" << std::right << std::setw(10) << "efficacy" << std::setw(10)
            << "accuracy" << "\n";
  for (const auto& r : reports) {
    std::cout << std::left << std::setw(40) << r.tag << std::right << std::fixed << std::setprecision(2)
              << std::setw(10) << r.report.efficacy << std::setw(9) << r.report.accuracy * 100.0 << "%\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slowdown attacks on multi-exit networks"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config, "Experiment config (JSON); defaults to the desk benchmark");
  auto* seed_opt = app.add_option("--seed", seed_value, "Override the experiment seed");
  app.add_option("--out", g.out, "Output directory (overrides output_dir)");

  std::string model_path, data_path, policy_path, pool_path, attack_name, regime_name, clean_path, scenario_name;
  std::string surrogate_path, tag;
  double rad = 0.05, fraction = 0.25;

  auto* gen = app.add_subcommand("gen-data", "Generate or import data and write train/holdout/test splits");
  auto* trn = app.add_subcommand("train", "Train the multi-exit model");
  trn->add_option("--data", data_path, "Training split (default <out>/train.mxds)");
  auto* adv = app.add_subcommand("advtrain", "Adversarially train the model");
  adv->add_option("--data", data_path, "Training split (default <out>/train.mxds)");
  adv->add_option("--model", model_path, "Pretrained start point when from_pretrained is set (default <out>/model.mxnn)");
  adv->add_option("--regime", regime_name, "pgd10 | pgd10_avg | pgd10_max | deepsloth | deepsloth_plus_pgd10")
      ->required();
  auto* cal = app.add_subcommand("calibrate", "Calibrate a shared exit threshold on the holdout split");
  cal->add_option("--model", model_path, "Model (default <out>/model.mxnn)");
  cal->add_option("--data", data_path, "Holdout split (default <out>/holdout.mxds)");
  cal->add_option("--rad", rad, "Relative accuracy drop budget")->check(CLI::Range(0.0, 1.0));
  auto* atk = app.add_subcommand("attack", "Craft perturbed samples with one attack block of the config");
  atk->add_option("--attack", attack_name, "Attack name from the config")->required();
  atk->add_option("--model", model_path, "Model (default <out>/model.mxnn)");
  atk->add_option("--data", data_path, "Samples to perturb (default <out>/test.mxds)");
  atk->add_option("--pool", pool_path, "Crafting pool for universal scopes (default <out>/train.mxds)");
  atk->add_option("--policy", policy_path, "Calibrated policy, required by l2 attacks");
  auto* evl = app.add_subcommand("eval", "Evaluate efficacy and accuracy under a policy");
  evl->add_option("--model", model_path, "Model (default <out>/model.mxnn)");
  evl->add_option("--data", data_path, "Samples (default <out>/test.mxds)");
  evl->add_option("--policy", policy_path, "Policy JSON")->required();
  evl->add_option("--tag", tag, "Row tag")->default_val("eval");
  auto* prt = app.add_subcommand("partition", "Simulate edge/cloud partitioning traffic and latency");
  prt->add_option("--model", model_path, "Model (default <out>/model.mxnn)");
  prt->add_option("--policy", policy_path, "Policy JSON")->required();
  prt->add_option("--clean", clean_path, "Clean samples (default <out>/test.mxds)");
  prt->add_option("--data", data_path, "Attacked samples")->required();
  auto* trf = app.add_subcommand("transfer", "Craft on a surrogate and evaluate on the victim (--config)");
  trf->add_option("--surrogate", surrogate_path, "Surrogate experiment config")->required();
  trf->add_option("--scenario", scenario_name, "cross_architecture | limited_data | cross_domain")->required();
  trf->add_option("--fraction", fraction, "Training fraction for limited_data")->check(CLI::Range(0.0, 1.0));
  auto* rep = app.add_subcommand("report", "Run the full pipeline and write every report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    const ExperimentConfig cfg = resolve(g);
    if (gen->parsed()) {
      const fs::path out = out_dir(cfg);
      const DatasetSplits s = prepare_data(cfg);
      save_dataset(s.train, (out / "train.mxds").string());
      save_dataset(s.holdout, (out / "holdout.mxds").string());
      save_dataset(s.test, (out / "test.mxds").string());
      std::cout << "train " << s.train.size() << ", holdout " << s.holdout.size() << ", test " << s.test.size()
                << " samples written to " << out.string() << "\n";
    } else if (trn->parsed()) {
      const fs::path out = out_dir(cfg);
      const Dataset d = load_dataset(or_default(data_path, out / "train.mxds"));
      MultiExitNetwork net = build_model(cfg, d);
      const TrainResult r = train_model(net, cfg, d);
      save_model(net, (out / "model.mxnn").string());
      for (std::size_t e = 0; e < r.loss_history.size(); ++e) {
        std::cout << "epoch " << e + 1 << " loss " << format_double(r.loss_history[e]) << "\n";
      }
    } else if (adv->parsed()) {
      const fs::path out = out_dir(cfg);
      const Regime regime = regime_from_string(regime_name);
      const Dataset d = load_dataset(or_default(data_path, out / "train.mxds"));
      MultiExitNetwork net = cfg.adversarial_training.from_pretrained
                                 ? load_model(or_default(model_path, out / "model.mxnn"))
                                 : build_model(cfg, d);
      AdvTrainConfig ac = cfg.adversarial_training.config;
      ac.seed = derive_seeds(cfg.seed).advtrain;
      const AdvTrainResult r = adversarial_train(net, d, regime, ac);
      const std::string path = (out / ("model_at_" + to_string(regime) + ".mxnn")).string();
      save_model(net, path);
      std::cout << "phase 1 final loss " << format_double(r.base.loss_history.empty() ? 0.0 : r.base.loss_history.back())
                << ", phase 2 final loss "
                << format_double(r.heads.loss_history.empty() ? 0.0 : r.heads.loss_history.back()) << "\n"
                << "wrote " << path << "\n";
    } else if (cal->parsed()) {
      const fs::path out = out_dir(cfg);
      const MultiExitNetwork net = load_model(or_default(model_path, out / "model.mxnn"));
      const Dataset d = load_dataset(or_default(data_path, out / "holdout.mxds"));
      const CalibrationResult c = calibrate(net, d.inputs, d.labels, cfg.policy.criterion, rad);
      auto j = policy_to_json(c);
      j["fallback"] = c.fallback;
      const fs::path path = out / ("policy_" + rad_tag(rad) + ".json");
      std::ofstream(path) << j.dump(2) << "\n";
      std::cout << j.dump(2) << "\n";
    } else if (atk->parsed()) {
      const fs::path out = out_dir(cfg);
      const AttackSpec& a = find_attack(cfg, attack_name);
      const MultiExitNetwork net = load_model(or_default(model_path, out / "model.mxnn"));
      const Dataset d = load_dataset(or_default(data_path, out / "test.mxds"));
      const bool universal = a.kind == AttackKind::uap || a.config.scope != Scope::per_sample;
      const Dataset pool = universal ? load_dataset(or_default(pool_path, out / "train.mxds")) : Dataset{};
      std::optional<ExitPolicy> policy;
      if (!policy_path.empty()) policy = load_policy(policy_path).policy;
      if (a.policy_dependent() && !policy) throw ConfigError(a.name + " needs --policy");
      const CraftResult c = craft(net, a, d, pool, policy);
      const std::string path = (out / ("perturbed_" + a.name + ".mxds")).string();
      save_dataset(c.perturbed, path);
      std::cout << "crafted " << c.perturbed.size() << " samples in " << std::fixed << std::setprecision(3)
                << c.seconds << " s; wrote " << path << "\n";
    } else if (evl->parsed()) {
      const fs::path out = out_dir(cfg);
      const MultiExitNetwork net = load_model(or_default(model_path, out / "model.mxnn"));
      const Dataset d = load_dataset(or_default(data_path, out / "test.mxds"));
      const ExitPolicy p = load_policy(policy_path).policy;
      const EvalReport r = evaluate(net, p, d.inputs, d.labels);
      write_report(out / ("eval_" + tag + ".csv"), tag, r);
      std::ofstream eec(out / ("eec_" + tag + ".csv"));
      write_eec_csv(eec, r.curve);
      std::cout << kReportHeader << "\n" << report_row(tag, r) << "\n";
    } else if (prt->parsed()) {
      const fs::path out = out_dir(cfg);
      const MultiExitNetwork net = load_model(or_default(model_path, out / "model.mxnn"));
      const ExitPolicy p = load_policy(policy_path).policy;
      const Dataset clean = load_dataset(or_default(clean_path, out / "test.mxds"));
      const Dataset attacked = load_dataset(data_path);
      const TrafficReport c = simulate(net, p, clean.inputs, cfg.partition);
      TrafficReport a = simulate(net, p, attacked.inputs, cfg.partition);
      a.amplification = amplification(c, a, cfg.partition);
      std::ostringstream csv;
      csv << kPartitionHeader << "\n" << partition_row("clean", c) << "\n" << partition_row("attacked", a) << "\n";
      std::ofstream(out / "partition.csv") << csv.str();
      std::cout << csv.str();
    } else if (trf->parsed()) {
      ExperimentConfig surrogate = load_experiment_config(surrogate_path);
      if (g.seed) surrogate.seed = *g.seed;
      const TransferResult r = run_transfer(surrogate, cfg, transfer_scenario_from_string(scenario_name, fraction));
      std::vector<TaggedReport> rows{{r.scenario + "/victim-clean", r.victim_clean}};
      rows.insert(rows.end(), r.transferred.begin(), r.transferred.end());
      print_summary(rows);
    } else if (rep->parsed()) {
      const ExperimentResult r = run_experiment(cfg);
      print_summary(r.reports);
      std::cout << "reports written to " << cfg.output_dir << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
