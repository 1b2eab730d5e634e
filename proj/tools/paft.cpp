// SPDX-License-Identifier: Apache-2.0
// paft: merge, delta, sparsity, sparsify, train, experiment and inspect.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "paft/paft.hpp"

namespace fs = std::filesystem;
using namespace paft;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  usage error (bad or conflicting flags, invalid recipe from flags)\n"
    "  2  data or format error (unreadable file, malformed checkpoint, recipe or config)\n"
    "  3  numeric failure (divergence, non-finite result)\n";

/// Failure with a fixed exit code.
struct CliError {
  int code;
  std::string message;
};

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::kDivergenceDetected:
    case ErrorCode::kNonFiniteResult: return kExitNumeric;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInvalidProbability:
    case ErrorCode::kInvalidDensity:
    case ErrorCode::kZeroWeightSum:
    case ErrorCode::kUnsupportedMethod:
    case ErrorCode::kRecipeError: return kExitUsage;
    default: return kExitData;
  }
}

[[noreturn]] void usage(const std::string& msg) { throw CliError{kExitUsage, msg}; }

/// Errors raised while reading an input file are data errors whatever their
/// code, unless they are numeric.
template <typename F>
auto reading(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    const int code = exit_code_for(e.code()) == kExitNumeric ? kExitNumeric : kExitData;
    throw CliError{code, what + ": " + e.what()};
  }
}

ParamSet load(const std::string& path) {
  return reading("'" + path + "'", [&] { return load_checkpoint(path); });
}

DeltaSet load_delta(const std::string& path) { return DeltaSet::from_param_set(load(path)); }

void save(const ParamSet& p, const std::string& path) {
  reading("'" + path + "'", [&] {
    save_checkpoint(p, path);
    return 0;
  });
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// ---- merge ----

struct MergeArgs {
  std::string recipe;
  std::string method;
  std::string base;
  std::vector<std::string> deltas;
  std::optional<double> density, drop, t;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> granularity, slerp_scope;
  bool no_normalize = false;
  std::string out;
};

std::pair<std::string, double> split_delta_flag(const std::string& s) {
  const auto at = s.rfind(':');
  if (at == std::string::npos) return {s, 1.0};
  const std::string weight = s.substr(at + 1);
  std::size_t used = 0;
  double w = 0.0;
  try {
    w = std::stod(weight, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != weight.size()) usage("--delta '" + s + "': weight '" + weight + "' is not a number");
  return {s.substr(0, at), w};
}

MergeRecipe recipe_from_flags(const MergeArgs& a) {
  if (a.method.empty()) usage("merge needs --recipe or --method");
  if (a.deltas.empty()) usage("merge needs at least one --delta");
  nlohmann::json j;
  j["method"] = a.method;
  j["base"] = a.base;
  j["inputs"] = nlohmann::json::array();
  for (const auto& d : a.deltas) {
    const auto [path, w] = split_delta_flag(d);
    j["inputs"].push_back({{"delta", path}, {"weight", w}});
  }
  if (a.density) j["density"] = *a.density;
  if (a.drop) j["drop"] = *a.drop;
  if (a.seed) j["seed"] = *a.seed;
  if (a.t) j["t"] = *a.t;
  if (a.granularity) j["granularity"] = *a.granularity;
  if (a.slerp_scope) j["slerp_scope"] = *a.slerp_scope;
  if (a.no_normalize) j["normalize_weights"] = false;
  try {
    return recipe_from_json(j);
  } catch (const Error& e) {
    throw CliError{kExitUsage, e.what()};
  }
}

/// Inline flags given next to --recipe must agree with the file.
void check_recipe_conflicts(const MergeArgs& a, const MergeRecipe& r) {
  auto conflict = [](const std::string& flag) { usage(flag + " conflicts with --recipe"); };
  if (!a.method.empty() && parse_merge_method(a.method) != r.method) conflict("--method");
  if (!a.deltas.empty()) {
    if (a.deltas.size() != r.inputs.size()) conflict("--delta");
    for (std::size_t i = 0; i < a.deltas.size(); ++i) {
      const auto [path, w] = split_delta_flag(a.deltas[i]);
      if (path != r.inputs[i].delta || w != r.inputs[i].weight) conflict("--delta");
    }
  }
  if (a.density && *a.density != r.density) conflict("--density");
  if (a.drop && *a.drop != r.drop) conflict("--drop");
  if (a.seed && *a.seed != r.seed) conflict("--seed");
  if (a.t && *a.t != r.t) conflict("--t");
  if (a.granularity && *a.granularity != to_string(r.trim_granularity)) conflict("--granularity");
  if (a.slerp_scope && *a.slerp_scope != to_string(r.slerp_scope)) conflict("--slerp-scope");
  if (a.no_normalize && r.normalize()) conflict("--no-normalize");
}

int cmd_merge(const MergeArgs& a) {
  MergeRecipe r;
  if (!a.recipe.empty()) {
    const std::string text = reading("recipe '" + a.recipe + "'", [&] { return detail::read_text(a.recipe); });
    r = reading("recipe '" + a.recipe + "'", [&] { return recipe_from_string(text); });
    check_recipe_conflicts(a, r);
    if (!a.base.empty()) {
      if (!r.base.empty() && r.base != a.base) usage("--base conflicts with --recipe");
      r.base = a.base;
    }
    // Relative paths inside a recipe file are resolved against its directory.
    const fs::path dir = fs::path(a.recipe).parent_path();
    auto resolve = [&](std::string& p) {
      if (!p.empty() && fs::path(p).is_relative() && a.base != p) p = (dir / p).string();
    };
    resolve(r.base);
    for (auto& in : r.inputs) resolve(in.delta);
  } else {
    r = recipe_from_flags(a);
  }
  if (r.base.empty()) usage("merge needs --base (or a 'base' field in the recipe)");
  const ParamSet base = load(r.base);
  std::vector<DeltaSet> deltas;
  for (const auto& in : r.inputs) deltas.push_back(load_delta(in.delta));
  MergeNotes notes;
  const ParamSet merged = merge(r, base, deltas, &notes);
  save(merged, a.out);

  std::string summary = "merged method=" + std::string(to_string(r.method)) + " inputs=" + std::to_string(r.inputs.size());
  switch (r.method) {
    case MergeMethod::kLinear: summary += std::string(" normalize=") + (r.normalize() ? "true" : "false"); break;
    case MergeMethod::kTaskArithmetic: break;
    case MergeMethod::kDareTies: summary += " drop=" + fmt_g(r.drop) + " seed=" + std::to_string(r.seed); [[fallthrough]];
    case MergeMethod::kTies: summary += " density=" + fmt_g(r.density); break;
    case MergeMethod::kSlerp:
      summary += " t=" + fmt_g(r.t);
      if (notes.slerp_linear_fallback) summary += " fallback=linear";
      break;
  }
  summary += " sparsity=" + fmt4(sparsity(extract_delta(merged, base)).average) + " out=" + a.out;
  std::cout << summary << "\n";
  return kExitOk;
}

// ---- delta ----

struct DeltaArgs {
  std::string ft, pre, lora, out;
  double scaling = 1.0;
  bool lenient = false;
};

int cmd_delta(const DeltaArgs& a) {
  DeltaSet d;
  if (!a.lora.empty()) {
    if (!a.ft.empty() || !a.pre.empty()) usage("--lora cannot be combined with --ft/--pre");
    const ParamSet factors = load(a.lora);
    d = reading("'" + a.lora + "'", [&] { return compose_lora(lora_from_param_set(factors, a.scaling)); });
    d.source = a.lora;
  } else {
    if (a.ft.empty() || a.pre.empty()) usage("delta needs --ft and --pre, or --lora");
    const ParamSet ft = load(a.ft), pre = load(a.pre);
    const auto mode = a.lenient ? ExtractMode::kLenient : ExtractMode::kStrict;
    const ExtractResult r = reading("delta", [&] { return extract_delta_report(ft, pre, mode); });
    for (const auto& n : r.missing_in_pre) std::cerr << "skipped '" << n << "': not in --pre\n";
    for (const auto& n : r.missing_in_ft) std::cerr << "skipped '" << n << "': not in --ft\n";
    d = r.delta;
    d.source = a.ft;
    d.base = a.pre;
  }
  save(d.to_param_set(), a.out);
  std::cout << "delta tensors=" << d.params.size() << " sparsity=" << fmt4(sparsity(d).average) << " out=" << a.out
            << "\n";
  return kExitOk;
}

// ---- sparsity ----

struct SparsityArgs {
  std::string delta;
  double threshold = 1e-5;
  bool element_weighted = false;
};

int cmd_sparsity(const SparsityArgs& a) {
  if (!(a.threshold > 0.0)) usage("--threshold must be positive");
  const DeltaSet d = load_delta(a.delta);
  std::cout << format_sparsity_report(sparsity(d, a.threshold, a.element_weighted));
  return kExitOk;
}

// ---- sparsify ----

struct SparsifyArgs {
  std::string delta, method, out;
  double p = 0.0, k = 1.0, tau = 1e-5;
  std::uint64_t seed = 0;
  std::string granularity = "per_tensor";
  unsigned threads = 1;
};

int cmd_sparsify(const SparsifyArgs& a) {
  SparsifySpec s;
  try {
    s.method = parse_sparsify_method(a.method);
    s.granularity = detail::parse_granularity(a.granularity);
  } catch (const Error& e) {
    usage(e.what());
  }
  s.p = a.p;
  s.k = a.k;
  s.tau = a.tau;
  s.seed = a.seed;
  const DeltaSet d = load_delta(a.delta);
  DeltaSet out;
  try {
    out = s.method == SparsifyMethod::kDare ? dare(d, s.p, s.seed, a.threads) : apply_sparsify(d, s);
  } catch (const Error& e) {
    throw CliError{exit_code_for(e.code()), e.what()};
  }
  save(out.to_param_set(), a.out);
  std::cout << "sparsified method=" << to_string(s.method) << " sparsity_before=" << fmt4(sparsity(d).average)
            << " sparsity_after=" << fmt4(sparsity(out).average) << " out=" << a.out << "\n";
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string base, loss, data, init, reference, out;
  TrainConfig cfg;
  std::string optimizer = "sgd";
};

int cmd_train(TrainArgs a) {
  AdapterLoss loss{};
  try {
    loss = parse_adapter_loss(a.loss);
    a.cfg.optimizer = parse_optimizer(a.optimizer);
    validate_train_config(a.cfg);
  } catch (const Error& e) {
    usage(e.what());
  }
  const ToyNet net = reading("'" + a.base + "'", [&] { return toy_net_from_params(load_checkpoint(a.base)); });
  const bool is_sft = loss == AdapterLoss::kSft || loss == AdapterLoss::kSftSparse;
  std::vector<SftExample> sft;
  std::vector<PreferencePair> pref;
  reading("'" + a.data + "'", [&] {
    if (is_sft) {
      sft = load_sft_dataset(a.data);
    } else {
      pref = load_pref_dataset(a.data);
    }
    return 0;
  });
  TrainStart start;
  if (!a.init.empty()) start.init = load(a.init);
  if (!a.reference.empty()) start.reference = load(a.reference);
  TrainResult r;
  try {
    r = train_adapter(net, loss, {sft, pref}, a.cfg, start);
  } catch (const Error& e) {
    throw CliError{exit_code_for(e.code()) == kExitUsage ? kExitData : exit_code_for(e.code()), e.what()};
  }
  r.delta.base = a.base;
  save(r.delta.to_param_set(), a.out);
  std::cout << "trained loss=" << to_string(loss) << " steps=" << r.steps << " initial_loss=" << fmt4(r.initial_loss)
            << " final_loss=" << fmt4(r.final_loss) << " sparsity=" << fmt4(sparsity(r.delta).average)
            << " out=" << a.out << "\n";
  return kExitOk;
}

// ---- experiment ----

struct ExperimentArgs {
  std::string config;
  std::size_t seeds = 0;
  std::string pref;
  std::string json = "report.json";
  std::string table = "report.txt";
  unsigned threads = 1;
};

int cmd_experiment(const ExperimentArgs& a) {
  ExperimentConfig c = reading("config '" + a.config + "'", [&] { return load_experiment_config(a.config); });
  if (a.seeds > 0) {
    c.seeds.clear();
    for (std::uint64_t s = 1; s <= a.seeds; ++s) c.seeds.push_back(s);
  }
  if (!a.pref.empty()) {
    try {
      c.pref.pref = parse_pref_method(a.pref);
    } catch (const Error& e) {
      usage(e.what());
    }
  }
  ExperimentReport r;
  try {
    r = run_experiment(c, a.threads);
  } catch (const Error& e) {
    throw CliError{exit_code_for(e.code()) == kExitNumeric ? kExitNumeric : kExitData, e.what()};
  }
  const std::string table = format_report_table(r);
  reading("'" + a.json + "'", [&] {
    write_file_atomic(a.json, report_to_json(r).dump(2) + "\n");
    write_file_atomic(a.table, table);
    return 0;
  });
  std::cout << table;
  return kExitOk;
}

// ---- inspect ----

int cmd_inspect(const std::string& path) {
  const CheckpointHeader h = reading("'" + path + "'", [&] { return read_checkpoint_header(path); });
  std::uint64_t elements = 0;
  for (const auto& e : h.entries) {
    std::cout << e.name << " " << shape_to_string(e.shape) << "\n";
    elements += element_count(e.shape);
  }
  for (const auto& [k, v] : h.metadata) std::cout << "metadata " << k << "=" << v << "\n";
  std::cout << "tensors=" << h.entries.size() << " elements=" << elements << " header_bytes=" << h.header_length
            << " payload_bytes=" << h.payload_length << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delta extraction, sparsification and model merging for parallel fine-tuning"};
  app.require_subcommand(1);
  app.footer(kExitCodes);
  app.get_formatter()->column_width(34);

  MergeArgs merge_args;
  auto* merge_cmd = app.add_subcommand("merge", "Merge deltas into a base checkpoint");
  merge_cmd->add_option("--recipe", merge_args.recipe, "JSON recipe file; inline flags must agree with it");
  merge_cmd->add_option("--method", merge_args.method, "linear | task_arithmetic | ties | dare_ties | slerp");
  merge_cmd->add_option("--base", merge_args.base, "Base checkpoint");
  merge_cmd->add_option("--delta", merge_args.deltas, "Delta checkpoint with weight, FILE:W (W defaults to 1)")
      ->allow_extra_args(false);
  merge_cmd->add_option("--density", merge_args.density, "ties/dare_ties keep fraction k (default 0.5)");
  merge_cmd->add_option("--drop", merge_args.drop, "dare_ties drop probability p (default 0.5)");
  merge_cmd->add_option("--seed", merge_args.seed, "dare_ties seed (default 0)");
  merge_cmd->add_option("--t", merge_args.t, "slerp interpolation parameter (default 0.5)");
  merge_cmd->add_option("--granularity", merge_args.granularity, "ties trim scope: per_tensor | global (default per_tensor)");
  merge_cmd->add_option("--slerp-scope", merge_args.slerp_scope, "slerp scope: global | per_tensor (default global)");
  merge_cmd->add_flag("--no-normalize", merge_args.no_normalize, "linear: do not divide by the weight sum");
  merge_cmd->add_option("--out", merge_args.out, "Output checkpoint")->required();
  merge_cmd->footer(kExitCodes);

  DeltaArgs delta_args;
  auto* delta_cmd = app.add_subcommand("delta", "Extract ft - pre, or compose a LoRA adapter into a dense delta");
  delta_cmd->add_option("--ft", delta_args.ft, "Fine-tuned checkpoint");
  delta_cmd->add_option("--pre", delta_args.pre, "Pre-trained checkpoint");
  delta_cmd->add_flag("--lenient", delta_args.lenient, "Keep only names present in both checkpoints");
  delta_cmd->add_option("--lora", delta_args.lora, "Checkpoint of <layer>.lora_A / <layer>.lora_B factors");
  delta_cmd->add_option("--scaling", delta_args.scaling, "LoRA scaling")->capture_default_str();
  delta_cmd->add_option("--out", delta_args.out, "Output delta checkpoint")->required();
  delta_cmd->footer(kExitCodes);

  SparsityArgs sparsity_args;
  auto* sparsity_cmd = app.add_subcommand("sparsity", "Per-layer fraction of near-zero delta elements");
  sparsity_cmd->add_option("--delta", sparsity_args.delta, "Delta checkpoint")->required();
  sparsity_cmd->add_option("--threshold", sparsity_args.threshold, "Elements with |v| below this count as zero")
      ->capture_default_str();
  sparsity_cmd->add_flag("--element-weighted", sparsity_args.element_weighted,
                         "Pool elements instead of averaging layers");
  sparsity_cmd->footer(kExitCodes);

  SparsifyArgs sparsify_args;
  auto* sparsify_cmd = app.add_subcommand("sparsify", "Sparsify a delta with dare, trim_topk or threshold");
  sparsify_cmd->add_option("--delta", sparsify_args.delta, "Delta checkpoint")->required();
  sparsify_cmd->add_option("--method", sparsify_args.method, "dare | trim_topk | threshold")->required();
  sparsify_cmd->add_option("--p", sparsify_args.p, "dare drop probability")->capture_default_str();
  sparsify_cmd->add_option("--k", sparsify_args.k, "trim_topk keep fraction")->capture_default_str();
  sparsify_cmd->add_option("--tau", sparsify_args.tau, "threshold magnitude")->capture_default_str();
  sparsify_cmd->add_option("--seed", sparsify_args.seed, "dare seed")->capture_default_str();
  sparsify_cmd->add_option("--granularity", sparsify_args.granularity, "trim_topk scope: per_tensor | global")
      ->capture_default_str();
  sparsify_cmd->add_option("--threads", sparsify_args.threads, "dare worker threads")->capture_default_str();
  sparsify_cmd->add_option("--out", sparsify_args.out, "Output delta checkpoint")->required();
  sparsify_cmd->footer(kExitCodes);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train one adapter delta on a toy network checkpoint");
  train_cmd->add_option("--base", train_args.base, "Toy network checkpoint (layerN.weight / layerN.bias)")->required();
  train_cmd->add_option("--loss", train_args.loss, "sft | sft_sparse | dpo | orpo")->required();
  train_cmd->add_option("--data", train_args.data, "paft-sft or paft-pref dataset file")->required();
  train_cmd->add_option("--steps", train_args.cfg.steps, "Gradient steps")->capture_default_str();
  train_cmd->add_option("--lr", train_args.cfg.lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--lambda", train_args.cfg.lambda, "L1 weight for sft_sparse")->capture_default_str();
  train_cmd->add_option("--beta", train_args.cfg.beta, "dpo beta or orpo beta_or")->capture_default_str();
  train_cmd->add_option("--batch-size", train_args.cfg.batch_size, "Minibatch size, 0 for full batch")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_args.cfg.seed, "Minibatch sampling seed")->capture_default_str();
  train_cmd->add_option("--optimizer", train_args.optimizer, "sgd | sgd_momentum")->capture_default_str();
  train_cmd->add_option("--momentum", train_args.cfg.momentum, "Momentum coefficient")->capture_default_str();
  train_cmd->add_option("--init", train_args.init, "Initial delta checkpoint (default zero)");
  train_cmd->add_option("--reference", train_args.reference, "dpo reference delta checkpoint (default zero)");
  train_cmd->add_option("--out", train_args.out, "Output delta checkpoint")->required();
  train_cmd->footer(kExitCodes);

  ExperimentArgs exp_args;
  auto* exp_cmd = app.add_subcommand("experiment", "Run the arms x methods x seeds matrix");
  exp_cmd->add_option("--config", exp_args.config, "Experiment config JSON")->required();
  exp_cmd->add_option("--seeds", exp_args.seeds, "Run seeds 1..N instead of the config's list (0 keeps it)")
      ->capture_default_str();
  exp_cmd->add_option("--pref", exp_args.pref, "Override the preference method: dpo | orpo");
  exp_cmd->add_option("--json", exp_args.json, "JSON report path")->capture_default_str();
  exp_cmd->add_option("--table", exp_args.table, "Text table path")->capture_default_str();
  exp_cmd->add_option("--threads", exp_args.threads, "Seeds run concurrently")->capture_default_str();
  exp_cmd->footer(kExitCodes);

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print a checkpoint header without reading the payload");
  inspect_cmd->add_option("checkpoint", inspect_path, "Checkpoint file")->required();
  inspect_cmd->footer(kExitCodes);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*merge_cmd) return cmd_merge(merge_args);
    if (*delta_cmd) return cmd_delta(delta_args);
    if (*sparsity_cmd) return cmd_sparsity(sparsity_args);
    if (*sparsify_cmd) return cmd_sparsify(sparsify_args);
    if (*train_cmd) return cmd_train(train_args);
    if (*exp_cmd) return cmd_experiment(exp_args);
    if (*inspect_cmd) return cmd_inspect(inspect_path);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
