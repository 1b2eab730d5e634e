// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "paft/experiment.hpp"
#include "test_util.hpp"

namespace paft {
namespace {

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.hidden = {6};
  c.benchmark.latent_dim = 4;
  c.benchmark.sft_features = 2;
  c.benchmark.pref_features = 2;
  c.benchmark.sft_train = 32;
  c.benchmark.pref_train = 32;
  c.benchmark.sft_eval = 40;
  c.benchmark.pref_eval = 40;
  c.sft.steps = 20;
  c.sft.lr = 0.5;
  c.pref.steps = 20;
  c.pref.lr = 0.1;
  c.seeds = {1, 2, 3};
  return c;
}

TEST(Experiment, SingleCellGivesSingleRow) {
  ExperimentConfig c = tiny();
  c.arms = {Arm::kPaft};
  c.methods = {MergeMethod::kTies};
  c.seeds = {7};
  const auto r = run_experiment(c);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].arm, Arm::kPaft);
  EXPECT_EQ(r.rows[0].method, "ties");
  EXPECT_EQ(r.rows[0].seed, 7u);
  EXPECT_FALSE(r.rows[0].failed);
  ASSERT_EQ(r.aggregates.size(), 1u);
  EXPECT_EQ(r.aggregates[0].n, 1u);
  EXPECT_EQ(r.aggregates[0].sd, 0.0);
  EXPECT_EQ(r.aggregates[0].mean, r.rows[0].average);
}

TEST(Experiment, FullCrossProductSorted) {
  ExperimentConfig c = tiny();
  c.seeds = {3, 1, 2};
  const auto r = run_experiment(c);
  EXPECT_EQ(r.rows.size(), (6 + 2 * 5) * 3u);
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    const auto& a = r.rows[i - 1];
    const auto& b = r.rows[i];
    ASSERT_LE(static_cast<int>(a.arm), static_cast<int>(b.arm));
    if (a.arm == b.arm && a.method == b.method) {
      EXPECT_LT(a.seed, b.seed);
    }
  }
  std::set<std::tuple<int, std::string, std::uint64_t>> cells;
  for (const auto& row : r.rows) {
    EXPECT_FALSE(row.failed) << row.error;
    cells.insert({static_cast<int>(row.arm), row.method, row.seed});
    ASSERT_EQ(row.metrics.size(), 2u);
    EXPECT_EQ(row.metrics[0].first, "sft");
    EXPECT_EQ(row.metrics[1].first, "pref");
    EXPECT_DOUBLE_EQ(row.average, 0.5 * (row.metrics[0].second + row.metrics[1].second));
    if (!arm_merges(row.arm)) {
      EXPECT_EQ(row.method, "none");
    }
  }
  EXPECT_EQ(cells.size(), r.rows.size());
  EXPECT_EQ(r.aggregates.size(), 16u);
  EXPECT_EQ(r.sparsity_sweep.size(), 9u);
}

TEST(Experiment, AggregatesRecomputeFromRows) {
  const auto r = run_experiment(tiny());
  std::map<std::pair<int, std::string>, std::vector<double>> groups;
  for (const auto& row : r.rows) groups[{static_cast<int>(row.arm), row.method}].push_back(row.average);
  ASSERT_EQ(groups.size(), r.aggregates.size());
  for (const auto& a : r.aggregates) {
    const auto& v = groups.at({static_cast<int>(a.arm), a.method});
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_EQ(a.n, v.size());
    EXPECT_NEAR(a.mean, mean, 1e-12);
    EXPECT_NEAR(a.sd, std::sqrt(ss / static_cast<double>(v.size() - 1)), 1e-12);
  }
}

TEST(Experiment, DeterministicAcrossRunsAndThreads) {
  const ExperimentConfig c = tiny();
  const std::string a = report_to_json(run_experiment(c)).dump();
  const std::string b = report_to_json(run_experiment(c)).dump();
  const std::string t = report_to_json(run_experiment(c, 3)).dump();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, t);
  EXPECT_EQ(format_report_table(run_experiment(c)), format_report_table(run_experiment(c, 2)));
}

TEST(Experiment, FailedRowsAreFlaggedWithoutAbortingTheMatrix) {
  ExperimentConfig c = tiny();
  c.sft.lr = 1e6;
  c.sft.steps = 200;
  c.arms = {Arm::kBase, Arm::kSftAlone, Arm::kPrefAlone, Arm::kPaft};
  c.methods = {MergeMethod::kTaskArithmetic};
  c.seeds = {2};  // diverges at this lr; other seeds saturate the tanh units
  const auto r = run_experiment(c);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_FALSE(r.rows[0].failed);
  EXPECT_TRUE(r.rows[1].failed);
  EXPECT_NE(r.rows[1].error.find("DivergenceDetected"), std::string::npos);
  EXPECT_FALSE(r.rows[2].failed);
  EXPECT_TRUE(r.rows[3].failed);
  EXPECT_EQ(r.aggregates[1].n, 0u);
  EXPECT_EQ(r.aggregates[1].failed, 1u);
  const auto j = report_to_json(r);
  EXPECT_EQ(j["rows"][1]["failed"], true);
  EXPECT_FALSE(j["rows"][1].contains("average"));
  EXPECT_NE(format_report_table(r).find("failed"), std::string::npos);
}

TEST(Experiment, IndividualArmsMatchParallelMachineryWithOneEmptyInput) {
  ExperimentConfig c = tiny();
  c.arms = {Arm::kSftSparseAlone, Arm::kPrefAlone};
  c.seeds = {4};
  const auto r = run_experiment(c);
  const ToyNet net = make_toy_net(experiment_layer_sizes(c), net_seed(4), c.init_scale, c.bias_scale);
  const Benchmark bm = make_benchmark(c.benchmark, data_seed(4));
  PipelineConfig p;
  p.sft = c.sft;
  p.sft.lambda = c.lambda_sparse;
  p.pref = c.pref;
  const std::vector<EvalSuite> suites{{"sft", bm.sft_eval}, {"pref", bm.pref_eval}};
  auto score = [&](const ParamSet& params) {
    ToyNet m = net;
    m.params = params;
    return evaluate(m, suites).average;
  };
  const auto recipe = experiment_recipe(c, MergeMethod::kTaskArithmetic, 4);
  EXPECT_EQ(r.rows[0].average, score(run_parallel(net, bm.sft_train, {}, p, recipe).merged));
  EXPECT_EQ(r.rows[1].average, score(run_parallel(net, {}, bm.pref_train, p, recipe).merged));
}

TEST(Experiment, SparsitySweepFollowsLambda) {
  ExperimentConfig c = tiny();
  c.arms = {Arm::kBase};
  c.sft.steps = 200;
  c.sft.lr = 1.0;
  c.lambda_grid = {0.0, 1e-2};
  const auto r = run_experiment(c);
  ASSERT_EQ(r.sparsity_sweep.size(), 6u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.sparsity_sweep[i].lambda, 0.0);
    EXPECT_EQ(r.sparsity_sweep[i + 3].lambda, 1e-2);
    EXPECT_LT(r.sparsity_sweep[i].sparsity, r.sparsity_sweep[i + 3].sparsity);
  }
}

TEST(Experiment, OrpoSwapsOnlyThePreferenceLoss) {
  ExperimentConfig c = tiny();
  c.arms = {Arm::kSftSparseAlone, Arm::kPrefAlone};
  c.seeds = {5};
  const auto dpo = run_experiment(c);
  c.pref.pref = PrefMethod::kOrpo;
  const auto orpo = run_experiment(c);
  EXPECT_EQ(dpo.rows[0].average, orpo.rows[0].average);
  EXPECT_NE(dpo.rows[1].average, orpo.rows[1].average);
  EXPECT_NE(format_report_table(orpo).find("ORPO"), std::string::npos);
}

TEST(Experiment, TableHasSectionsAndColumns) {
  const std::string t = format_report_table(run_experiment(tiny()));
  for (const char* s : {"Individual", "Sequential", "Parallel", "SFT_sparse+DPO", "TIES", "DARE TIES",
                        "Task Arithmetic", "Average", "lambda=0.0001"}) {
    EXPECT_NE(t.find(s), std::string::npos) << s;
  }
  EXPECT_LT(t.find("Individual"), t.find("Sequential"));
  EXPECT_LT(t.find("Sequential"), t.find("Parallel"));
}

TEST(Experiment, RejectsInvalidConfig) {
  auto bad = [](auto mutate) {
    ExperimentConfig c = tiny();
    mutate(c);
    EXPECT_THROW(run_experiment(c), Error);
  };
  bad([](ExperimentConfig& c) { c.arms.clear(); });
  bad([](ExperimentConfig& c) { c.seeds.clear(); });
  bad([](ExperimentConfig& c) { c.seeds = {1, 1}; });
  bad([](ExperimentConfig& c) { c.methods.clear(); });
  bad([](ExperimentConfig& c) { c.lambda_sparse = 0.0; });
  bad([](ExperimentConfig& c) { c.drop = 1.0; });
  bad([](ExperimentConfig& c) { c.benchmark.classes = 2; });
}

TEST(ExperimentConfigJson, RoundTrips) {
  ExperimentConfig c = tiny();
  c.pref.pref = PrefMethod::kOrpo;
  c.methods = {MergeMethod::kSlerp, MergeMethod::kTies};
  c.arms = {Arm::kPaft, Arm::kBase};
  const auto j = experiment_config_to_json(c);
  EXPECT_EQ(experiment_config_to_json(experiment_config_from_json(j)), j);
  EXPECT_EQ(experiment_config_from_json(j).pref.pref, PrefMethod::kOrpo);
}

TEST(ExperimentConfigJson, RejectsBadDocuments) {
  auto code = [](const std::string& text) {
    try {
      experiment_config_from_string(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIoError;
  };
  EXPECT_EQ(code("{"), ErrorCode::kFormatError);
  EXPECT_EQ(code(R"({"sedes":[1]})"), ErrorCode::kFormatError);
  EXPECT_EQ(code(R"({"sft":{"stepz":1}})"), ErrorCode::kFormatError);
  EXPECT_EQ(code(R"({"sft":{"lr":"fast"}})"), ErrorCode::kFormatError);
  EXPECT_EQ(code(R"({"seeds":[-1]})"), ErrorCode::kFormatError);
  EXPECT_EQ(code(R"({"arms":["paft","bogus"]})"), ErrorCode::kFormatError);
  EXPECT_EQ(code(R"({"methods":["fisher"]})"), ErrorCode::kFormatError);
  EXPECT_EQ(code(R"({"pref":{"method":"ppo"}})"), ErrorCode::kFormatError);
}

TEST(ExperimentConfigJson, ShippedDefaultIsComplete) {
  const ExperimentConfig c = load_experiment_config(std::string(PAFT_CONFIG_DIR) + "/default.json");
  validate_experiment_config(c);
  EXPECT_EQ(c.seeds.size(), 10u);
  EXPECT_EQ(c.arms.size(), std::size(kAllArms));
  EXPECT_EQ(c.methods.size(), std::size(kAllMethods));
  EXPECT_EQ(c.lambda_grid, (std::vector<double>{0.0, 1e-4, 1e-3}));
  EXPECT_EQ(c.lambda_sparse, 1e-3);
  EXPECT_EQ(c.sft.steps, 500u);
  EXPECT_EQ(c.sft.optimizer, Optimizer::kSgd);
  EXPECT_EQ(c.pref.pref, PrefMethod::kDpo);
}

}  // namespace
}  // namespace paft
