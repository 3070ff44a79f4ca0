/*
 * Copyright 2026 The relml Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cli.hpp"
#include "relml/dispatcher.hpp"
#include "test_util.hpp"

namespace relml {
namespace {

using nlohmann::json;

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_json(const std::filesystem::path& p, const json& doc) { std::ofstream(p) << doc.dump(2); }

/// Last JSON line of a command's output.
json last_line(const std::string& text) {
  const auto trimmed = text.substr(0, text.find_last_not_of('\n') + 1);
  return json::parse(trimmed.substr(trimmed.find_last_of('\n') + 1));
}

class ToyDir : public ::testing::Test {
 protected:
  void SetUp() override {
    write_dataset(dir.path() / "toy", testing::toy_database());
    write_json(dir.path() / "churn.json", {{"task_name", "churn"},
                                            {"task_type", "classification"},
                                            {"target_table", "users"},
                                            {"target_column", "churned"}});
  }
  std::string path(const std::string& name) const { return (dir.path() / name).string(); }
  testing::TempDir dir;
};

TEST_F(ToyDir, IngestPrintsCatalogSummary) {
  const auto r = run({"ingest", path("toy")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = json::parse(r.out);
  ASSERT_EQ(doc["tables"].size(), 2u);
  EXPECT_EQ(doc["tables"][0]["name"], "users");
  EXPECT_EQ(doc["tables"][0]["rows"], 10);
  EXPECT_EQ(doc["relations"][0], "orders.user_id->users");
  EXPECT_EQ(doc["integrity"][0]["dangling"], 0);
  EXPECT_EQ(doc["data_hash"].get<std::string>().size(), 16u);
}

TEST_F(ToyDir, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"ingest", path("toy"), "--bogus"}).code, 2);
  EXPECT_EQ(run({"ingest"}).code, 2);
  EXPECT_EQ(run({"profile"}).code, 2);
  EXPECT_EQ(run({"profile", "validate", "--task", path("churn.json")}).code, 2);  // no --data
  EXPECT_EQ(run({"train", "--data", path("toy"), "--task", path("churn.json"), "--lr", "fast"}).code, 2);
  EXPECT_EQ(run({"dispatch", "--data", path("toy"), "--task", path("churn.json"), "--registry", path("r.json"),
                 "--score", "noequals"})
                .code,
            2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(ToyDir, ProfileValidateReportsViolations) {
  const auto ok = run({"profile", "validate", "--data", path("toy"), "--task", path("churn.json")});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(json::parse(ok.out)["task"]["target_column"], "churned");

  write_json(dir.path() / "bad.json", {{"task_name", "churn"},
                                        {"task_type", "classification"},
                                        {"target_table", "users"},
                                        {"target_column", "nope"}});
  const auto bad = run({"profile", "validate", "--data", path("toy"), "--task", path("bad.json")});
  EXPECT_EQ(bad.code, 1);
  const auto err = json::parse(bad.err)["error"];
  EXPECT_EQ(err["kind"], "validation");
  ASSERT_FALSE(err["violations"].empty());
  EXPECT_EQ(err["violations"][0]["path"], "/target_column");
}

TEST_F(ToyDir, ProfileDeriveHonorsConfigAndFlags) {
  write_json(dir.path() / "cfg.json", {{"data", path("toy")}, {"task", path("churn.json")}, {"max_hops", 1}});
  const auto one = run({"profile", "derive", "--config", path("cfg.json"), "--output", path("profile.json")});
  ASSERT_EQ(one.code, 0) << one.err;
  EXPECT_EQ(json::parse(one.out)["sql"].size(), 2u);
  EXPECT_EQ(json::parse(slurp(dir.path() / "profile.json"))["target_table"], "users");
  const auto zero = run({"profile", "derive", "--config", path("cfg.json"), "--max-hops", "0"});
  ASSERT_EQ(zero.code, 0) << zero.err;
  EXPECT_EQ(json::parse(zero.out)["sql"].size(), 1u);
}

TEST_F(ToyDir, DispatchReproducesDecisionExample) {
  const auto sig = task_signature(
      TaskProfile{"churn", TaskType::kClassification, "users", "churned", std::nullopt, std::nullopt});
  write_json(dir.path() / "registry.json",
             {{"entries", {{{"model_id", "m"}, {"task_sig", sig}, {"mu", 0.8}, {"count", 4}}}}});
  auto decide_with = [&](const std::string& score) {
    const auto r = run({"dispatch", "--data", path("toy"), "--task", path("churn.json"), "--registry",
                        path("registry.json"), "--epsilon", "0.1", "--score", "m=" + score});
    EXPECT_EQ(r.code, 0) << r.err;
    return json::parse(r.out);
  };
  const auto deploy = decide_with("0.73");
  EXPECT_DOUBLE_EQ(deploy["tau"].get<double>(), 0.72);
  EXPECT_EQ(deploy["action"], "deploy_base");
  EXPECT_EQ(deploy["task_sig"], sig);
  EXPECT_EQ(decide_with("0.71")["action"], "augment");

  const auto observed = run({"dispatch", "--data", path("toy"), "--task", path("churn.json"), "--registry",
                             path("registry.json"), "--beta", "0.9", "--observe", "m=0.6", "--score", "m=0.5"});
  ASSERT_EQ(observed.code, 0) << observed.err;
  EXPECT_DOUBLE_EQ(json::parse(observed.out)["mu"].get<double>(), 0.78);
  EXPECT_EQ(PerfRegistry::load(dir.path() / "registry.json").find("m", sig)->count, 5u);
}

// ---------------------------------------------------------------------------

class SynthRun : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto r = run({"synth-data", "--out", path("data"), "--customers", "200", "--seed", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    write_json(dir.path() / "cfg.json",
               {{"data", path("data")},
                {"task", path("data/task.json")},
                {"seed", 4},
                {"model", {{"dim", 8}, {"encoder_depth", 1}, {"mp_layers", 2}}},
                {"train", {{"batch_size", 32}, {"lr", 3e-3}, {"max_epochs", 4}, {"fanout", {4, 4}}}},
                {"base", {{"hidden", 16}}}});
  }
  std::string path(const std::string& name) const { return (dir.path() / name).string(); }
  testing::TempDir dir;
};

TEST_F(SynthRun, TrainThenEvalReproducesBestValidationMetric) {
  const auto t = run({"train", "--config", path("cfg.json"), "--out", path("run")});
  ASSERT_EQ(t.code, 0) << t.err;
  std::istringstream lines(t.out);
  std::size_t epochs = 0;
  for (std::string line; std::getline(lines, line);) {
    if (json::parse(line).contains("epoch")) ++epochs;
  }
  const auto report = last_line(t.out);
  EXPECT_EQ(report["epochs"].get<std::size_t>(), epochs);
  EXPECT_EQ(report["task_sig"].get<std::string>().size(), 16u);
  EXPECT_EQ(report["config"]["model"]["dim"], 8);

  const auto e = run({"eval", "--config", path("cfg.json"), "--model", path("run")});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_LE(std::abs(json::parse(e.out)["metric"].get<double>() - report["metric"].get<double>()), 1e-9);
}

TEST_F(SynthRun, BasePoolDispatchAugmentReport) {
  ASSERT_EQ(run({"train", "--config", path("cfg.json"), "--kind", "base", "--model-id", "mlp", "--pool", path("pool"),
                 "--register", "true", "--registry", path("registry.json"), "--out", path("base")})
                .code,
            0);
  const auto reg = PerfRegistry::load(dir.path() / "registry.json");
  ASSERT_EQ(reg.entries().size(), 1u);
  EXPECT_EQ(reg.entries()[0].model_id, "mlp");

  const auto d = run({"dispatch", "--config", path("cfg.json"), "--pool", path("pool"), "--registry",
                      path("registry.json"), "--epsilon", "0.1", "--prior", "0.5", "--output", path("decision.json")});
  ASSERT_EQ(d.code, 0) << d.err;
  const auto decision = json::parse(d.out);
  EXPECT_EQ(decision["selected"], "mlp");
  EXPECT_TRUE(decision["mu_from_registry"].get<bool>());

  // Force augmentation of the pooled model.
  const auto forced = run({"dispatch", "--config", path("cfg.json"), "--registry", path("registry.json"), "--score",
                           "mlp=0.0", "--output", path("augment.json")});
  ASSERT_EQ(forced.code, 0) << forced.err;
  const auto a = run({"train", "--config", path("cfg.json"), "--decision", path("augment.json"), "--pool",
                      path("pool"), "--out", path("aug")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(last_line(a.out)["config"]["base_id"], "mlp");

  const auto x = run({"explain", "--config", path("cfg.json"), "--model", path("aug")});
  ASSERT_EQ(x.code, 0) << x.err;
  EXPECT_EQ(json::parse(x.out).size(), 5u);  // self plus four aggregators of orders

  for (const char* out : {"r1", "r2"}) {
    const auto r = run({"report", "--config", path("cfg.json"), "--model", path("aug"), "--decision",
                        path("augment.json"), "--out", path(out), "--top-k", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const auto md = slurp(dir.path() / "r1" / "premium_buyer.report.md");
  EXPECT_EQ(slurp(dir.path() / "r1" / "premium_buyer.report.json"),
            slurp(dir.path() / "r2" / "premium_buyer.report.json"));
  EXPECT_EQ(md, slurp(dir.path() / "r2" / "premium_buyer.report.md"));
  EXPECT_NE(md.find("<!-- narrative: template -->"), std::string::npos);
  EXPECT_NE(md.find("action: augment"), std::string::npos);
  EXPECT_EQ(json::parse(slurp(dir.path() / "r1" / "premium_buyer.report.json"))["predictions"].size(), 3u);

  const auto p = run({"predict", "--config", path("cfg.json"), "--model", path("aug"), "--split", "every",
                      "--output", path("pred.csv")});
  ASSERT_EQ(p.code, 0) << p.err;
  const auto csv = parse_csv(slurp(dir.path() / "pred.csv"));
  ASSERT_EQ(csv.size(), 201u);
  for (std::size_t i = 1; i < csv.size(); ++i) {
    const double v = std::stod(*csv[i][1]);
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(run({"explain", "--config", path("cfg.json"), "--model", path("base")}).code, 1);
}

TEST_F(SynthRun, PretrainThenFrozenFineTune) {
  const auto pre = run({"pretrain", "--config", path("cfg.json"), "--out", path("pre"), "--steps", "5"});
  ASSERT_EQ(pre.code, 0) << pre.err;
  EXPECT_EQ(last_line(pre.out)["steps"], 5);
  const auto t = run({"train", "--config", path("cfg.json"), "--pretrained", path("pre/pretrained.ckpt"), "--out",
                      path("ft")});
  ASSERT_EQ(t.code, 0) << t.err;
  const auto mismatch = run({"train", "--config", path("cfg.json"), "--pretrained", path("pre/pretrained.ckpt"),
                             "--dim", "12", "--out", path("bad")});
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_EQ(json::parse(mismatch.err)["error"]["kind"], "config");
}

}  // namespace
}  // namespace relml
