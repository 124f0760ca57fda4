#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace sloth;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

json tiny_json(const std::string& out) {
  json j = json::parse(R"({
    "seed": 5,
    "dataset": {"classes": 3, "samples": 150, "channels": 1, "height": 4, "width": 4, "contrast": 0.3},
    "model": {"architecture": "mlp4", "width": 8},
    "training": {"epochs": 3, "batch_size": 8},
    "policy": {"rad_budgets": [0.05]},
    "eval_samples": 12,
    "attacks": [{"kind": "deepsloth", "epsilon": 0.1, "iterations": 5}]
  })");
  j["output_dir"] = out;
  return j;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sloth_experiment_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void expect_config_error(json j, const std::string& needle) {
  try {
    experiment_config_from_json(j);
    ADD_FAILURE() << "accepted config; expected error about " << needle;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Config, DeskBenchmarkParses) {
  const ExperimentConfig c = desk_benchmark_config();
  EXPECT_EQ(c.attacks.size(), 11u);
  EXPECT_EQ(c.policy.rad_budgets, (std::vector<double>{0.05, 0.15}));
  EXPECT_TRUE(c.adversarial_training.enabled);
  EXPECT_TRUE(c.adversarial_training.from_pretrained);
  std::set<std::string> names;
  for (const auto& a : c.attacks) names.insert(a.name);
  for (const char* n : {"pgd", "pgd-avg", "pgd-max", "uap-pgd", "deepsloth", "deepsloth-universal",
                        "deepsloth-class-universal", "deepsloth-preserve", "deepsloth-hurt", "deepsloth-l2",
                        "deepsloth-l1"}) {
    EXPECT_TRUE(names.count(n)) << n;
  }
}

TEST(Config, JsonRoundTrip) {
  const ExperimentConfig c = desk_benchmark_config();
  const json j = experiment_config_to_json(c);
  EXPECT_EQ(experiment_config_to_json(experiment_config_from_json(j)), j);
  EXPECT_TRUE(j["adversarial_training"]["from_pretrained"].get<bool>());
}

TEST(Config, UnknownKeysAreRejected) {
  json j = tiny_json("x");
  j["sed"] = 1;
  expect_config_error(j, "sed");
  j = tiny_json("x");
  j["dataset"]["clases"] = 3;
  expect_config_error(j, "clases");
  j = tiny_json("x");
  j["attacks"][0]["epsilom"] = 0.1;
  expect_config_error(j, "epsilom");
}

TEST(Config, BadValuesAreRejected) {
  json j = tiny_json("x");
  j["attacks"][0]["epsilon"] = -0.1;
  expect_config_error(j, "attacks[0]");
  j = tiny_json("x");
  j["attacks"][0]["kind"] = "fgsm";
  expect_config_error(j, "fgsm");
  j = tiny_json("x");
  j["attacks"][0] = json{{"kind", "pgd"}, {"norm", "l2"}, {"epsilon", 0.5}};
  expect_config_error(j, "linf");
  j = tiny_json("x");
  j["policy"]["rad_budgets"] = json::array({1.5});
  expect_config_error(j, "rad");
  j = tiny_json("x");
  j["policy"]["criterion"] = "margin";
  expect_config_error(j, "margin");
  j = tiny_json("x");
  j["model"]["architecture"] = "resnet";
  expect_config_error(j, "resnet");
  j = tiny_json("x");
  j["seed"] = "one";
  EXPECT_THROW(experiment_config_from_json(j), ConfigError);
  j = tiny_json("x");
  j["adversarial_training"] = json{{"attack", "nothing"}};
  expect_config_error(j, "nothing");
}

TEST(Config, DuplicateAttackNamesAreRejected) {
  json j = tiny_json("x");
  j["attacks"].push_back(json{{"kind", "deepsloth"}, {"epsilon", 0.05}});
  expect_config_error(j, "duplicate");
  j["attacks"][1]["name"] = "deepsloth-small";
  EXPECT_NO_THROW(experiment_config_from_json(j));
}

TEST(Experiment, NoAttacksReportsBaselineOnly) {
  const fs::path out = scratch("baseline");
  json j = tiny_json(out.string());
  j["attacks"] = json::array();
  const ExperimentResult r = run_experiment(experiment_config_from_json(j));
  ASSERT_EQ(r.reports.size(), 1u);
  EXPECT_EQ(r.reports[0].tag, "rad5/clean");
  EXPECT_EQ(slurp(out / "report.csv"),
            std::string(kReportHeader) + "\n" + report_row("rad5/clean", r.reports[0].report) + "\n");
  EXPECT_NE(slurp(out / "status.json").find("complete"), std::string::npos);
  fs::remove_all(out);
}

TEST(Experiment, ReportCsvMatchesResults) {
  const fs::path out = scratch("report");
  const ExperimentResult r = run_experiment(experiment_config_from_json(tiny_json(out.string())));
  std::istringstream report(slurp(out / "report.csv"));
  std::string line;
  std::getline(report, line);
  EXPECT_EQ(line, kReportHeader);
  std::size_t row = 0;
  while (std::getline(report, line)) {
    ASSERT_LT(row, r.reports.size());
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 5u);
    const EvalReport& rep = r.reports[row].report;
    EXPECT_EQ(cells[0], r.reports[row].tag);
    EXPECT_EQ(std::stod(cells[1]), rep.efficacy);
    EXPECT_EQ(std::stod(cells[2]), rep.accuracy);
    EXPECT_EQ(std::stod(cells[3]), rep.mean_cost_fraction);
    EXPECT_EQ(std::stoul(cells[4]), rep.n);
    ++row;
  }
  EXPECT_EQ(row, r.reports.size());
  EXPECT_EQ(r.reports[1].tag, "rad5/deepsloth");
  EXPECT_TRUE(fs::exists(out / "eec_rad5_deepsloth.csv"));
  EXPECT_TRUE(fs::exists(out / "perturbed_rad5_deepsloth.mxds"));
  EXPECT_TRUE(fs::exists(out / "policy_rad5.json"));
  const MultiExitNetwork net = load_model((out / "model.mxnn").string());
  EXPECT_EQ(net.num_exits(), 4u);
  fs::remove_all(out);
}

TEST(Experiment, FailuresNameTheStage) {
  const fs::path out = scratch("failure");
  json j = tiny_json(out.string());
  j["dataset"] = json{{"source", "file"}, {"path", (out / "missing.mxds").string()}};
  try {
    run_experiment(experiment_config_from_json(j));
    ADD_FAILURE() << "missing dataset accepted";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "data");
  }
  const json status = json::parse(slurp(out / "status.json"));
  EXPECT_EQ(status["status"], "failed");
  EXPECT_EQ(status["stage"], "data");
  fs::remove_all(out);
}

TEST(Transfer, SelfSurrogateMatchesWhiteBox) {
  const fs::path out = scratch("transfer");
  const ExperimentConfig cfg = experiment_config_from_json(tiny_json(out.string()));
  const ExperimentResult white = run_experiment(cfg);
  const TransferResult t = run_transfer(cfg, cfg, {TransferKind::cross_architecture});
  ASSERT_EQ(t.transferred.size(), 1u);
  EXPECT_EQ(t.transferred[0].tag, "cross_architecture/deepsloth");
  EXPECT_EQ(t.victim_clean.records, white.reports[0].report.records);
  EXPECT_EQ(t.transferred[0].report.records, white.reports[1].report.records);
  EXPECT_TRUE(fs::exists(out / "transfer_cross_architecture.csv"));
  fs::remove_all(out);
}

TEST(Transfer, ScenarioValidation) {
  const ExperimentConfig cfg = experiment_config_from_json(tiny_json(scratch("transfer_bad").string()));
  EXPECT_THROW(run_transfer(cfg, cfg, {TransferKind::cross_domain}), ConfigError);
  EXPECT_THROW(run_transfer(cfg, cfg, {TransferKind::limited_data, 0.0}), ConfigError);
  ExperimentConfig no_attacks = cfg;
  no_attacks.attacks.clear();
  EXPECT_THROW(run_transfer(no_attacks, cfg, {TransferKind::cross_architecture}), ConfigError);
  EXPECT_EQ(transfer_scenario_from_string("limited_data", 0.5).tag(), "limited_data_0.5");
  EXPECT_THROW(transfer_scenario_from_string("cross_planet"), Error);
}
