// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment matrix: arms x merge methods x seeds on the synthetic
// benchmark, with a JSON report and an aligned text table.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "paft/dataset.hpp"
#include "paft/delta.hpp"
#include "paft/error.hpp"
#include "paft/evaluate.hpp"
#include "paft/merge.hpp"
#include "paft/toy_model.hpp"
#include "paft/train.hpp"

namespace paft {

enum class Arm {
  kBase,
  kSftAlone,
  kSftSparseAlone,
  kPrefAlone,
  kSequentialDense,
  kSequentialSparse,
  kParallelDense,
  kPaft,
};

inline constexpr Arm kAllArms[] = {Arm::kBase,           Arm::kSftAlone,         Arm::kSftSparseAlone,
                                   Arm::kPrefAlone,      Arm::kSequentialDense,  Arm::kSequentialSparse,
                                   Arm::kParallelDense,  Arm::kPaft};

inline constexpr MergeMethod kAllMethods[] = {MergeMethod::kLinear, MergeMethod::kTaskArithmetic, MergeMethod::kTies,
                                              MergeMethod::kDareTies, MergeMethod::kSlerp};

inline std::string_view to_string(Arm a) {
  switch (a) {
    case Arm::kBase: return "base";
    case Arm::kSftAlone: return "sft_alone";
    case Arm::kSftSparseAlone: return "sft_sparse_alone";
    case Arm::kPrefAlone: return "pref_alone";
    case Arm::kSequentialDense: return "sequential_dense";
    case Arm::kSequentialSparse: return "sequential_sparse";
    case Arm::kParallelDense: return "parallel_dense";
    case Arm::kPaft: return "paft";
  }
  return "unknown";
}

inline Arm parse_arm(std::string_view s) {
  for (Arm a : kAllArms) {
    if (to_string(a) == s) return a;
  }
  throw Error(ErrorCode::kFormatError, "unknown arm '" + std::string(s) + "'");
}

/// Parallel arms are expanded over merge methods; the others run once.
inline bool arm_merges(Arm a) { return a == Arm::kParallelDense || a == Arm::kPaft; }

/// Method label of rows that involve no merge.
inline constexpr std::string_view kNoMerge = "none";

struct ExperimentConfig {
  std::vector<std::size_t> hidden = {32};
  double init_scale = 2.0;
  double bias_scale = 0.1;
  BenchmarkConfig benchmark;
  TrainConfig sft;   // lambda is set per arm
  TrainConfig pref;  // pref selects dpo or orpo
  double lambda_sparse = 1e-3;
  std::vector<double> lambda_grid = {0.0, 1e-4, 1e-3};
  std::vector<Arm> arms{std::begin(kAllArms), std::end(kAllArms)};
  std::vector<MergeMethod> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  double density = kDefaultDensity;
  double drop = 0.2;
  double t = kDefaultSlerpT;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
};

/// Per-seed derived seeds for the base network and the benchmark draw.
inline std::uint64_t net_seed(std::uint64_t seed) { return seed * 1000 + 1; }
inline std::uint64_t data_seed(std::uint64_t seed) { return seed * 1000 + 2; }

inline std::vector<std::size_t> experiment_layer_sizes(const ExperimentConfig& c) {
  std::vector<std::size_t> sizes{input_dim(c.benchmark)};
  sizes.insert(sizes.end(), c.hidden.begin(), c.hidden.end());
  sizes.push_back(c.benchmark.classes);
  return sizes;
}

/// Recipe used for both parallel arms: inputs (pref, sft), unit weights.
inline MergeRecipe experiment_recipe(const ExperimentConfig& c, MergeMethod m, std::uint64_t seed) {
  MergeRecipe r;
  r.method = m;
  r.inputs = {{"pref", 1.0}, {"sft", 1.0}};
  r.density = c.density;
  r.drop = c.drop;
  r.seed = seed;
  r.t = c.t;
  return r;
}

inline void validate_experiment_config(const ExperimentConfig& c) {
  if (c.arms.empty()) throw Error(ErrorCode::kInvalidArgument, "experiment needs at least one arm");
  if (c.seeds.empty()) throw Error(ErrorCode::kInvalidArgument, "experiment needs at least one seed");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    throw Error(ErrorCode::kInvalidArgument, "seeds must be distinct");
  }
  if (std::set<Arm>(c.arms.begin(), c.arms.end()).size() != c.arms.size()) {
    throw Error(ErrorCode::kInvalidArgument, "arms must be distinct");
  }
  const bool any_merge = std::any_of(c.arms.begin(), c.arms.end(), arm_merges);
  if (any_merge && c.methods.empty()) throw Error(ErrorCode::kInvalidArgument, "parallel arms need a merge method");
  if (std::set<MergeMethod>(c.methods.begin(), c.methods.end()).size() != c.methods.size()) {
    throw Error(ErrorCode::kInvalidArgument, "methods must be distinct");
  }
  for (auto h : c.hidden) {
    if (h == 0) throw Error(ErrorCode::kInvalidArgument, "hidden sizes must be positive");
  }
  if (!(c.init_scale > 0.0) || !(c.bias_scale >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "init scales must be non-negative");
  }
  if (!(c.lambda_sparse > 0.0) || !std::isfinite(c.lambda_sparse)) {
    throw Error(ErrorCode::kInvalidArgument, "lambda_sparse must be positive");
  }
  for (double l : c.lambda_grid) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw Error(ErrorCode::kInvalidArgument, "lambda grid values must be >= 0");
  }
  validate_benchmark_config(c.benchmark);
  for (const TrainConfig* t : {&c.sft, &c.pref}) {
    if (t->steps > 0) validate_train_config(*t);
  }
  for (MergeMethod m : c.methods) validate_recipe(experiment_recipe(c, m, 0));
}

struct ExperimentRow {
  Arm arm = Arm::kBase;
  std::string method{kNoMerge};
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> metrics;
  double average = 0.0;
  double sparsity = 0.0;  // of the arm's final delta against the base
  bool failed = false;
  std::string error;
};

struct ExperimentAggregate {
  Arm arm = Arm::kBase;
  std::string method;
  std::size_t n = 0;
  std::size_t failed = 0;
  std::vector<std::pair<std::string, double>> metric_means;
  double mean = 0.0;  // of row averages
  double sd = 0.0;    // sample standard deviation, 0 when n < 2
  double sparsity_mean = 0.0;
};

struct SparsityPoint {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double sparsity = 0.0;
  bool failed = false;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<ExperimentRow> rows;
  std::vector<ExperimentAggregate> aggregates;
  std::vector<SparsityPoint> sparsity_sweep;
};

namespace detail {

inline std::size_t method_rank(std::string_view m) {
  for (std::size_t i = 0; i < std::size(kAllMethods); ++i) {
    if (to_string(kAllMethods[i]) == m) return i + 1;
  }
  return 0;
}

inline bool row_less(const ExperimentRow& a, const ExperimentRow& b) {
  const auto ka = std::make_tuple(static_cast<int>(a.arm), method_rank(a.method), a.seed);
  const auto kb = std::make_tuple(static_cast<int>(b.arm), method_rank(b.method), b.seed);
  return ka < kb;
}

/// Memoizes a computation together with any exception it threw.
template <typename T>
class Lazy {
 public:
  template <typename F>
  const T& get(F&& compute) {
    if (!done_) {
      done_ = true;
      try {
        value_ = compute();
      } catch (...) {
        error_ = std::current_exception();
      }
    }
    if (error_) std::rethrow_exception(error_);
    return *value_;
  }

 private:
  bool done_ = false;
  std::optional<T> value_;
  std::exception_ptr error_;
};

struct SeedOutput {
  std::vector<ExperimentRow> rows;
  std::vector<SparsityPoint> sweep;
};

inline SeedOutput run_seed(const ExperimentConfig& c, std::uint64_t seed) {
  SeedOutput out;
  const ToyNet net = make_toy_net(experiment_layer_sizes(c), net_seed(seed), c.init_scale, c.bias_scale);
  const Benchmark bm = make_benchmark(c.benchmark, data_seed(seed));
  const std::vector<EvalSuite> suites{{"sft", bm.sft_eval}, {"pref", bm.pref_eval}};

  auto pipeline = [&](double lambda) {
    PipelineConfig p;
    p.sft = c.sft;
    p.sft.lambda = lambda;
    p.sft_sparse = lambda > 0.0;
    p.pref = c.pref;
    return p;
  };
  std::map<double, Lazy<DeltaSet>> sft_cache;
  auto sft_delta = [&](double lambda) -> const DeltaSet& {
    return sft_cache[lambda].get([&] { return train_sft_stage(net, bm.sft_train, pipeline(lambda)); });
  };
  Lazy<DeltaSet> pref_cache;
  auto pref_delta = [&]() -> const DeltaSet& {
    return pref_cache.get([&] { return train_pref_stage(net, bm.pref_train, pipeline(0.0)); });
  };
  // Second stage started from an already trained SFT delta.
  auto sequential = [&](double lambda) {
    const DeltaSet& d = sft_delta(lambda);
    const PipelineConfig p = pipeline(lambda);
    return detail::train_stage(net, detail::pref_loss_kind(p), {{}, bm.pref_train}, p.pref, {d.params, d.params});
  };

  for (double lambda : c.lambda_grid) {
    SparsityPoint pt{lambda, seed, 0.0, false};
    try {
      pt.sparsity = sparsity(sft_delta(lambda)).average;
    } catch (const Error&) {
      pt.failed = true;
    }
    out.sweep.push_back(pt);
  }

  auto score = [&](ExperimentRow& row, const ParamSet& params) {
    ToyNet model = net;
    model.params = params;
    const EvalReport r = evaluate(model, suites);
    row.metrics = r.per_suite;
    row.average = r.average;
    row.sparsity = sparsity(extract_delta(params, net.params)).average;
  };

  for (Arm arm : c.arms) {
    std::vector<std::string> methods;
    if (arm_merges(arm)) {
      for (MergeMethod m : c.methods) methods.emplace_back(to_string(m));
    } else {
      methods.emplace_back(kNoMerge);
    }
    for (const auto& method : methods) {
      ExperimentRow row;
      row.arm = arm;
      row.method = method;
      row.seed = seed;
      try {
        switch (arm) {
          case Arm::kBase: score(row, net.params); break;
          case Arm::kSftAlone: score(row, apply_delta(net.params, sft_delta(0.0), 1.0)); break;
          case Arm::kSftSparseAlone: score(row, apply_delta(net.params, sft_delta(c.lambda_sparse), 1.0)); break;
          case Arm::kPrefAlone: score(row, apply_delta(net.params, pref_delta(), 1.0)); break;
          case Arm::kSequentialDense: score(row, apply_delta(net.params, sequential(0.0), 1.0)); break;
          case Arm::kSequentialSparse: score(row, apply_delta(net.params, sequential(c.lambda_sparse), 1.0)); break;
          case Arm::kParallelDense:
          case Arm::kPaft: {
            const double lambda = arm == Arm::kPaft ? c.lambda_sparse : 0.0;
            const MergeRecipe recipe = experiment_recipe(c, parse_merge_method(method), seed);
            score(row, merge_parallel(net, sft_delta(lambda), pref_delta(), recipe).merged);
            break;
          }
        }
      } catch (const Error& e) {
        row.failed = true;
        row.error = e.what();
        row.metrics.clear();
        row.average = 0.0;
        row.sparsity = 0.0;
      }
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace detail

/// Recomputes per-(arm, method) statistics from the rows; failed rows are
/// counted but excluded from the statistics.
inline std::vector<ExperimentAggregate> aggregate_rows(const std::vector<ExperimentRow>& rows) {
  std::vector<ExperimentAggregate> out;
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].arm == rows[i].arm && rows[j].method == rows[i].method) ++j;
    ExperimentAggregate a;
    a.arm = rows[i].arm;
    a.method = rows[i].method;
    std::vector<double> avg;
    for (std::size_t r = i; r < j; ++r) {
      const auto& row = rows[r];
      if (row.failed) {
        ++a.failed;
        continue;
      }
      avg.push_back(row.average);
      a.sparsity_mean += row.sparsity;
      if (a.metric_means.empty()) {
        for (const auto& [name, _] : row.metrics) a.metric_means.emplace_back(name, 0.0);
      }
      for (std::size_t m = 0; m < row.metrics.size(); ++m) a.metric_means[m].second += row.metrics[m].second;
    }
    a.n = avg.size();
    if (a.n > 0) {
      const double n = static_cast<double>(a.n);
      for (double v : avg) a.mean += v;
      a.mean /= n;
      a.sparsity_mean /= n;
      for (auto& [_, v] : a.metric_means) v /= n;
      if (a.n > 1) {
        double ss = 0.0;
        for (double v : avg) ss += (v - a.mean) * (v - a.mean);
        a.sd = std::sqrt(ss / (n - 1.0));
      }
    }
    out.push_back(std::move(a));
    i = j;
  }
  return out;
}

/// Runs the full matrix. Seeds run on up to `threads` workers; the report
/// does not depend on the thread count.
inline ExperimentReport run_experiment(const ExperimentConfig& config, unsigned threads = 1) {
  validate_experiment_config(config);
  const std::size_t n = config.seeds.size();
  std::vector<detail::SeedOutput> per_seed(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        per_seed[i] = detail::run_seed(config, config.seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentReport report;
  report.config = config;
  for (auto& s : per_seed) {
    for (auto& r : s.rows) report.rows.push_back(std::move(r));
    for (auto& p : s.sweep) report.sparsity_sweep.push_back(p);
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), detail::row_less);
  std::stable_sort(report.sparsity_sweep.begin(), report.sparsity_sweep.end(),
                   [](const SparsityPoint& a, const SparsityPoint& b) {
                     return std::tie(a.lambda, a.seed) < std::tie(b.lambda, b.seed);
                   });
  report.aggregates = aggregate_rows(report.rows);
  return report;
}

// ---- JSON ----

namespace detail {

inline nlohmann::json train_config_json(const TrainConfig& t, bool pref) {
  nlohmann::json j{{"steps", t.steps},        {"lr", t.lr},
                   {"batch_size", t.batch_size}, {"seed", t.seed},
                   {"optimizer", std::string(to_string(t.optimizer))}, {"momentum", t.momentum}};
  if (pref) {
    j["method"] = std::string(to_string(t.pref));
    j["beta"] = t.beta;
  }
  return j;
}

inline void config_check_keys(const nlohmann::json& j, const std::set<std::string_view>& allowed,
                              const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::kFormatError, "config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.contains(it.key())) {
      throw Error(ErrorCode::kFormatError, "config: unknown field '" + it.key() + "' in '" + where + "'");
    }
  }
}

template <typename T>
void config_read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j[key];
  bool ok = false;
  if constexpr (std::is_same_v<T, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_same_v<T, std::string>) {
    ok = v.is_string();
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = v.is_number();
  } else if constexpr (std::is_unsigned_v<T>) {
    ok = v.is_number_unsigned();
  }
  if (!ok) throw Error(ErrorCode::kFormatError, "config: field '" + std::string(key) + "' in '" + where + "' has the wrong type");
  out = v.get<T>();
}

template <typename T>
void config_read_list(const nlohmann::json& j, const char* key, std::vector<T>& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j[key].is_array()) {
    throw Error(ErrorCode::kFormatError, "config: field '" + std::string(key) + "' in '" + where + "' must be an array");
  }
  std::vector<T> values;
  for (const auto& v : j[key]) {
    nlohmann::json wrap{{key, v}};
    T x{};
    config_read(wrap, key, x, where);
    values.push_back(x);
  }
  out = std::move(values);
}

inline void train_config_from_json(const nlohmann::json& j, TrainConfig& t, bool pref, const std::string& where) {
  std::set<std::string_view> keys{"steps", "lr", "batch_size", "seed", "optimizer", "momentum"};
  if (pref) keys.insert({"method", "beta"});
  config_check_keys(j, keys, where);
  config_read(j, "steps", t.steps, where);
  config_read(j, "lr", t.lr, where);
  config_read(j, "batch_size", t.batch_size, where);
  config_read(j, "seed", t.seed, where);
  config_read(j, "momentum", t.momentum, where);
  std::string s;
  try {
    if (j.contains("optimizer")) {
      config_read(j, "optimizer", s, where);
      t.optimizer = parse_optimizer(s);
    }
    if (pref && j.contains("method")) {
      config_read(j, "method", s, where);
      t.pref = parse_pref_method(s);
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kFormatError) throw;
    throw Error(ErrorCode::kFormatError, std::string("config: ") + e.what());
  }
  if (pref) config_read(j, "beta", t.beta, where);
}

}  // namespace detail

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  const auto& b = c.benchmark;
  nlohmann::json arms = nlohmann::json::array(), methods = nlohmann::json::array();
  for (Arm a : c.arms) arms.push_back(std::string(to_string(a)));
  for (MergeMethod m : c.methods) methods.push_back(std::string(to_string(m)));
  return {
      {"net", {{"hidden", c.hidden}, {"init_scale", c.init_scale}, {"bias_scale", c.bias_scale}}},
      {"benchmark",
       {{"latent_dim", b.latent_dim}, {"copies", b.copies}, {"copy_noise", b.copy_noise}, {"classes", b.classes},
        {"sft_train", b.sft_train}, {"pref_train", b.pref_train}, {"sft_eval", b.sft_eval},
        {"pref_eval", b.pref_eval}, {"sft_features", b.sft_features}, {"pref_features", b.pref_features},
        {"conflict", b.conflict}, {"slice_threshold", b.slice_threshold}, {"label_noise", b.label_noise}}},
      {"sft", detail::train_config_json(c.sft, false)},
      {"pref", detail::train_config_json(c.pref, true)},
      {"lambda_sparse", c.lambda_sparse},
      {"lambda_grid", c.lambda_grid},
      {"arms", arms},
      {"methods", methods},
      {"merge", {{"density", c.density}, {"drop", c.drop}, {"t", c.t}}},
      {"seeds", c.seeds},
  };
}

/// Every field is optional; missing fields keep their defaults and unknown
/// fields are rejected.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::config_check_keys(j,
                            {"net", "benchmark", "sft", "pref", "lambda_sparse", "lambda_grid", "arms", "methods",
                             "merge", "seeds"},
                            "config");
  if (j.contains("net")) {
    const auto& n = j["net"];
    detail::config_check_keys(n, {"hidden", "init_scale", "bias_scale"}, "net");
    detail::config_read_list(n, "hidden", c.hidden, "net");
    detail::config_read(n, "init_scale", c.init_scale, "net");
    detail::config_read(n, "bias_scale", c.bias_scale, "net");
  }
  if (j.contains("benchmark")) {
    const auto& b = j["benchmark"];
    auto& o = c.benchmark;
    detail::config_check_keys(b,
                              {"latent_dim", "copies", "copy_noise", "classes", "sft_train", "pref_train", "sft_eval",
                               "pref_eval", "sft_features", "pref_features", "conflict", "slice_threshold",
                               "label_noise"},
                              "benchmark");
    detail::config_read(b, "latent_dim", o.latent_dim, "benchmark");
    detail::config_read(b, "copies", o.copies, "benchmark");
    detail::config_read(b, "copy_noise", o.copy_noise, "benchmark");
    detail::config_read(b, "classes", o.classes, "benchmark");
    detail::config_read(b, "sft_train", o.sft_train, "benchmark");
    detail::config_read(b, "pref_train", o.pref_train, "benchmark");
    detail::config_read(b, "sft_eval", o.sft_eval, "benchmark");
    detail::config_read(b, "pref_eval", o.pref_eval, "benchmark");
    detail::config_read(b, "sft_features", o.sft_features, "benchmark");
    detail::config_read(b, "pref_features", o.pref_features, "benchmark");
    detail::config_read(b, "conflict", o.conflict, "benchmark");
    detail::config_read(b, "slice_threshold", o.slice_threshold, "benchmark");
    detail::config_read(b, "label_noise", o.label_noise, "benchmark");
  }
  if (j.contains("sft")) detail::train_config_from_json(j["sft"], c.sft, false, "sft");
  if (j.contains("pref")) detail::train_config_from_json(j["pref"], c.pref, true, "pref");
  detail::config_read(j, "lambda_sparse", c.lambda_sparse, "config");
  detail::config_read_list(j, "lambda_grid", c.lambda_grid, "config");
  detail::config_read_list(j, "seeds", c.seeds, "config");
  std::vector<std::string> names;
  try {
    if (j.contains("arms")) {
      detail::config_read_list(j, "arms", names, "config");
      c.arms.clear();
      for (const auto& s : names) c.arms.push_back(parse_arm(s));
    }
    if (j.contains("methods")) {
      detail::config_read_list(j, "methods", names, "config");
      c.methods.clear();
      for (const auto& s : names) c.methods.push_back(parse_merge_method(s));
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kFormatError) throw;
    throw Error(ErrorCode::kFormatError, std::string("config: ") + e.what());
  }
  if (j.contains("merge")) {
    const auto& m = j["merge"];
    detail::config_check_keys(m, {"density", "drop", "t"}, "merge");
    detail::config_read(m, "density", c.density, "merge");
    detail::config_read(m, "drop", c.drop, "merge");
    detail::config_read(m, "t", c.t, "merge");
  }
  return c;
}

inline ExperimentConfig experiment_config_from_string(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kFormatError, std::string("config is not valid JSON: ") + e.what());
  }
  return experiment_config_from_json(j);
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_string(detail::read_text(path));
}

namespace detail {

inline nlohmann::json metrics_json(const std::vector<std::pair<std::string, double>>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

}  // namespace detail

inline nlohmann::json report_to_json(const ExperimentReport& r) {
  nlohmann::json rows = nlohmann::json::array(), aggs = nlohmann::json::array(), sweep = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j{{"arm", std::string(to_string(row.arm))}, {"method", row.method}, {"seed", row.seed},
                     {"failed", row.failed}};
    if (row.failed) {
      j["error"] = row.error;
    } else {
      j["metrics"] = detail::metrics_json(row.metrics);
      j["average"] = row.average;
      j["sparsity"] = row.sparsity;
    }
    rows.push_back(std::move(j));
  }
  for (const auto& a : r.aggregates) {
    aggs.push_back({{"arm", std::string(to_string(a.arm))},
                    {"method", a.method},
                    {"n", a.n},
                    {"failed", a.failed},
                    {"metric_means", detail::metrics_json(a.metric_means)},
                    {"mean", a.mean},
                    {"sd", a.sd},
                    {"sparsity_mean", a.sparsity_mean}});
  }
  for (const auto& p : r.sparsity_sweep) {
    nlohmann::json j{{"lambda", p.lambda}, {"seed", p.seed}, {"failed", p.failed}};
    if (!p.failed) j["sparsity"] = p.sparsity;
    sweep.push_back(std::move(j));
  }
  return {{"config", experiment_config_to_json(r.config)},
          {"rows", rows},
          {"aggregates", aggs},
          {"sparsity_sweep", sweep}};
}

// ---- text table ----

namespace detail {

inline std::string arm_label(Arm a, PrefMethod p) {
  const std::string pref = p == PrefMethod::kDpo ? "DPO" : "ORPO";
  switch (a) {
    case Arm::kBase: return "Base";
    case Arm::kSftAlone: return "SFT";
    case Arm::kSftSparseAlone: return "SFT_sparse";
    case Arm::kPrefAlone: return pref;
    case Arm::kSequentialDense:
    case Arm::kParallelDense: return "SFT+" + pref;
    case Arm::kSequentialSparse:
    case Arm::kPaft: return "SFT_sparse+" + pref;
  }
  return "?";
}

inline std::string method_label(std::string_view m) {
  if (m == "linear") return "Linear";
  if (m == "task_arithmetic") return "Task Arithmetic";
  if (m == "ties") return "TIES";
  if (m == "dare_ties") return "DARE TIES";
  if (m == "slerp") return "SLERP";
  return "-";
}

inline std::string section_of(Arm a) {
  switch (a) {
    case Arm::kBase:
    case Arm::kSftAlone:
    case Arm::kSftSparseAlone:
    case Arm::kPrefAlone: return "Individual";
    case Arm::kSequentialDense:
    case Arm::kSequentialSparse: return "Sequential";
    case Arm::kParallelDense:
    case Arm::kPaft: return "Parallel";
  }
  return "?";
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace detail

/// Aligned columns grouped into Individual / Sequential / Parallel sections;
/// metrics are means over seeds, the average column carries the sample sd.
inline std::string format_report_table(const ExperimentReport& r) {
  std::vector<std::string> suites;
  for (const auto& a : r.aggregates) {
    if (!a.metric_means.empty()) {
      for (const auto& [name, _] : a.metric_means) suites.push_back(name);
      break;
    }
  }
  const PrefMethod pref = r.config.pref.pref;
  std::string out;
  out += detail::pad("Method", 20) + detail::pad("Merge", 17);
  for (const auto& s : suites) out += detail::pad(s, 9);
  out += detail::pad("Average", 18) + detail::pad("Sparsity", 10) + "Seeds\n";
  std::string section;
  for (const auto& a : r.aggregates) {
    const std::string sec = detail::section_of(a.arm);
    if (sec != section) {
      out += sec + "\n";
      section = sec;
    }
    out += detail::pad("  " + detail::arm_label(a.arm, pref), 20) + detail::pad(detail::method_label(a.method), 17);
    if (a.n == 0) {
      for (std::size_t i = 0; i < suites.size(); ++i) out += detail::pad("-", 9);
      out += detail::pad("failed", 18) + detail::pad("-", 10);
    } else {
      for (const auto& [_, v] : a.metric_means) out += detail::pad(detail::fmt("%.4f", v), 9);
      out += detail::pad(detail::fmt("%.4f", a.mean) + " +- " + detail::fmt("%.4f", a.sd), 18);
      out += detail::pad(detail::fmt("%.4f", a.sparsity_mean), 10);
    }
    out += std::to_string(a.n);
    if (a.failed > 0) out += " (" + std::to_string(a.failed) + " failed)";
    out += "\n";
  }
  if (!r.sparsity_sweep.empty()) {
    out += "\nSFT delta sparsity (threshold 1e-05)\n";
    for (std::size_t i = 0; i < r.sparsity_sweep.size();) {
      std::size_t j = i, ok = 0;
      double sum = 0.0;
      for (; j < r.sparsity_sweep.size() && r.sparsity_sweep[j].lambda == r.sparsity_sweep[i].lambda; ++j) {
        if (!r.sparsity_sweep[j].failed) {
          sum += r.sparsity_sweep[j].sparsity;
          ++ok;
        }
      }
      out += "  lambda=" + detail::pad(detail::fmt("%g", r.sparsity_sweep[i].lambda), 8) + " mean " +
             (ok ? detail::fmt("%.4f", sum / static_cast<double>(ok)) : std::string("-")) + " over " +
             std::to_string(ok) + " seeds\n";
      i = j;
    }
  }
  return out;
}

}  // namespace paft
