// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paft/delta.hpp"
#include "paft/error.hpp"
#include "paft/merge.hpp"
#include "paft/param_set.hpp"
#include "paft/rng.hpp"
#include "paft/toy_model.hpp"

namespace paft {

enum class AdapterLoss { kSft, kSftSparse, kDpo, kOrpo };
enum class Optimizer { kSgd, kSgdMomentum };
enum class PrefMethod { kDpo, kOrpo };

inline std::string_view to_string(AdapterLoss l) {
  switch (l) {
    case AdapterLoss::kSft: return "sft";
    case AdapterLoss::kSftSparse: return "sft_sparse";
    case AdapterLoss::kDpo: return "dpo";
    case AdapterLoss::kOrpo: return "orpo";
  }
  return "unknown";
}
inline std::string_view to_string(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "sgd_momentum"; }
inline std::string_view to_string(PrefMethod p) { return p == PrefMethod::kDpo ? "dpo" : "orpo"; }

inline AdapterLoss parse_adapter_loss(std::string_view s) {
  if (s == "sft") return AdapterLoss::kSft;
  if (s == "sft_sparse") return AdapterLoss::kSftSparse;
  if (s == "dpo") return AdapterLoss::kDpo;
  if (s == "orpo") return AdapterLoss::kOrpo;
  throw Error(ErrorCode::kInvalidArgument, "unknown loss '" + std::string(s) + "'");
}
inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "sgd_momentum") return Optimizer::kSgdMomentum;
  throw Error(ErrorCode::kInvalidArgument, "unknown optimizer '" + std::string(s) + "'");
}
inline PrefMethod parse_pref_method(std::string_view s) {
  if (s == "dpo") return PrefMethod::kDpo;
  if (s == "orpo") return PrefMethod::kOrpo;
  throw Error(ErrorCode::kInvalidArgument, "unknown preference method '" + std::string(s) + "'");
}

/// Gradient descent settings for one adapter.
struct TrainConfig {
  std::size_t steps = 500;
  double lr = 0.1;
  double lambda = 0.0;  // L1 weight, sft_sparse only
  double beta = 0.1;    // dpo beta or orpo beta_or
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;      // minibatch sampling
  Optimizer optimizer = Optimizer::kSgd;
  double momentum = 0.9;
  PrefMethod pref = PrefMethod::kDpo;
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.steps < 1) throw Error(ErrorCode::kInvalidArgument, "steps must be at least 1");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) throw Error(ErrorCode::kInvalidArgument, "lr must be finite and >= 0");
  if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) {
    throw Error(ErrorCode::kInvalidArgument, "lambda must be finite and >= 0");
  }
  if (!(c.beta > 0.0) || !std::isfinite(c.beta)) throw Error(ErrorCode::kInvalidArgument, "beta must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw Error(ErrorCode::kInvalidArgument, "momentum must be in [0, 1)");
}

/// Divergence guard: loss above this multiple of the initial loss ...
inline constexpr double kDivergenceFactor = 10.0;
/// ... for this many consecutive steps.
inline constexpr std::size_t kDivergencePatience = 50;

struct TrainData {
  std::span<const SftExample> sft;
  std::span<const PreferencePair> pref;
};

struct TrainResult {
  DeltaSet delta;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

/// Optional starting point: `init` is the initial delta (zero when empty) and
/// `reference` the frozen DPO reference delta (zero when empty).
struct TrainStart {
  ParamSet init;
  ParamSet reference;
};

namespace detail {

inline ParamSet zero_delta(const ToyNet& net) { return zeros_like(net.params); }

inline double l1_of(const ParamSet& p) {
  double s = 0.0;
  for (const auto& [_, t] : p) s += l1_norm(t);
  return s;
}

}  // namespace detail

/// Trains a delta over the frozen base. The smooth part of the objective
/// takes a gradient step; the L1 term of sft_sparse is applied as a
/// soft-threshold (proximal) step of size lr * lambda, which yields exact
/// zeros. The loss after the final step is recorded.
inline TrainResult train_adapter(const ToyNet& base, AdapterLoss loss, TrainData data, const TrainConfig& cfg,
                                 const TrainStart& start = {}) {
  validate_train_config(cfg);
  const bool is_sft = loss == AdapterLoss::kSft || loss == AdapterLoss::kSftSparse;
  if (is_sft ? data.sft.empty() : data.pref.empty()) {
    throw Error(ErrorCode::kEmptyBatch, std::string(to_string(loss)) + " training needs data");
  }
  const double lambda = loss == AdapterLoss::kSftSparse ? cfg.lambda : 0.0;
  const ParamSet reference = start.reference.empty() ? detail::zero_delta(base) : start.reference;
  ParamSet delta = start.init.empty() ? detail::zero_delta(base) : start.init;
  if (schema_of(delta) != schema_of(base.params)) {
    throw Error(ErrorCode::kShapeMismatch, "initial delta does not match the network");
  }

  const std::size_t n = is_sft ? data.sft.size() : data.pref.size();
  const bool minibatch = cfg.batch_size > 0 && cfg.batch_size < n;
  SeededRng rng(cfg.seed);
  std::vector<SftExample> sft_batch;
  std::vector<PreferencePair> pref_batch;
  auto draw_batch = [&] {
    if (!minibatch) return;
    sft_batch.clear();
    pref_batch.clear();
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const std::size_t j = rng.below(n);
      if (is_sft) {
        sft_batch.push_back(data.sft[j]);
      } else {
        pref_batch.push_back(data.pref[j]);
      }
    }
  };

  // Smooth objective only; the L1 value is added separately.
  auto evaluate = [&](const ParamSet& d) -> LossValue {
    const std::span<const SftExample> sft = minibatch ? std::span<const SftExample>(sft_batch) : data.sft;
    const std::span<const PreferencePair> pref =
        minibatch ? std::span<const PreferencePair>(pref_batch) : data.pref;
    switch (loss) {
      case AdapterLoss::kSft:
      case AdapterLoss::kSftSparse: return sft_loss(base, d, sft, 0.0);
      case AdapterLoss::kDpo: return dpo_loss(base, reference, d, pref, cfg.beta);
      case AdapterLoss::kOrpo: return orpo_loss(base, d, pref, cfg.beta);
    }
    throw Error(ErrorCode::kUnsupportedMethod, "unknown loss");
  };

  TrainResult out;
  std::map<std::string, std::vector<double>, std::less<>> velocity;
  std::size_t above = 0;
  draw_batch();
  LossValue lv = evaluate(delta);
  out.initial_loss = lv.value + lambda * detail::l1_of(delta);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    ParamSet next;
    for (const auto& [name, d] : delta) {
      const Tensor& g = lv.gradients.at(name);
      std::vector<double> v(d.values().begin(), d.values().end());
      std::vector<double>* vel = nullptr;
      if (cfg.optimizer == Optimizer::kSgdMomentum) {
        vel = &velocity[name];
        if (vel->empty()) vel->assign(v.size(), 0.0);
      }
      const double shrink = cfg.lr * lambda;
      for (std::size_t i = 0; i < v.size(); ++i) {
        double dir = g[i];
        if (vel) dir = (*vel)[i] = cfg.momentum * (*vel)[i] + g[i];
        double x = v[i] - cfg.lr * dir;
        if (shrink > 0.0) x = std::abs(x) <= shrink ? 0.0 : x - std::copysign(shrink, x);
        v[i] = x;
      }
      if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
        throw Error(ErrorCode::kDivergenceDetected, "non-finite parameter at step " + std::to_string(step + 1));
      }
      next.insert(name, Tensor(d.shape(), std::move(v)));
    }
    delta = std::move(next);
    draw_batch();
    lv = evaluate(delta);
    const double value = lv.value + lambda * detail::l1_of(delta);
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::kDivergenceDetected, "loss is not finite at step " + std::to_string(step + 1));
    }
    above = value > kDivergenceFactor * out.initial_loss ? above + 1 : 0;
    if (above >= kDivergencePatience) {
      throw Error(ErrorCode::kDivergenceDetected,
                  "loss above " + std::to_string(static_cast<int>(kDivergenceFactor)) + "x its initial value for " +
                      std::to_string(kDivergencePatience) + " steps");
    }
    out.final_loss = value;
    ++out.steps;
  }
  out.delta = DeltaSet(std::move(delta), std::string(to_string(loss)));
  return out;
}

/// Stage settings for the two-adapter pipelines. A stage with zero steps or
/// no data contributes a zero delta.
struct PipelineConfig {
  TrainConfig sft;
  TrainConfig pref;
  bool sft_sparse = true;
};

namespace detail {

inline AdapterLoss sft_loss_kind(const PipelineConfig& c) {
  return c.sft_sparse ? AdapterLoss::kSftSparse : AdapterLoss::kSft;
}
inline AdapterLoss pref_loss_kind(const PipelineConfig& c) {
  return c.pref.pref == PrefMethod::kDpo ? AdapterLoss::kDpo : AdapterLoss::kOrpo;
}

inline DeltaSet train_stage(const ToyNet& base, AdapterLoss loss, TrainData data, const TrainConfig& cfg,
                            const TrainStart& start) {
  const bool is_sft = loss == AdapterLoss::kSft || loss == AdapterLoss::kSftSparse;
  const bool no_data = is_sft ? data.sft.empty() : data.pref.empty();
  if (cfg.steps == 0 || no_data) {
    return DeltaSet(start.init.empty() ? zero_delta(base) : start.init, std::string(to_string(loss)));
  }
  return train_adapter(base, loss, data, cfg, start).delta;
}

}  // namespace detail

inline DeltaSet train_sft_stage(const ToyNet& base, std::span<const SftExample> sft, const PipelineConfig& cfg) {
  return detail::train_stage(base, detail::sft_loss_kind(cfg), {sft, {}}, cfg.sft, {});
}

inline DeltaSet train_pref_stage(const ToyNet& base, std::span<const PreferencePair> pref,
                                 const PipelineConfig& cfg) {
  return detail::train_stage(base, detail::pref_loss_kind(cfg), {{}, pref}, cfg.pref, {});
}

/// SFT first, then preference training started from the SFT delta with the
/// SFT model as the DPO reference. Returns the combined delta.
inline DeltaSet run_sequential(const ToyNet& base, std::span<const SftExample> sft,
                               std::span<const PreferencePair> pref, const PipelineConfig& cfg) {
  const DeltaSet d_sft = train_sft_stage(base, sft, cfg);
  TrainStart start{d_sft.params, d_sft.params};
  DeltaSet out = detail::train_stage(base, detail::pref_loss_kind(cfg), {{}, pref}, cfg.pref, start);
  out.source = "sequential";
  return out;
}

struct ParallelResult {
  DeltaSet sft;
  DeltaSet pref;
  ParamSet merged;
};

/// Merges (delta_pref, delta_sft) in that order with `recipe`; the recipe's
/// inputs must have two entries. The two adapters never see each other's data.
inline ParallelResult merge_parallel(const ToyNet& base, DeltaSet d_sft, DeltaSet d_pref, const MergeRecipe& recipe,
                                     MergeNotes* notes = nullptr) {
  ParallelResult out;
  out.merged = merge(recipe, base.params, {d_pref, d_sft}, notes);
  out.sft = std::move(d_sft);
  out.pref = std::move(d_pref);
  return out;
}

/// Trains both adapters from the same base (concurrently when `concurrent`)
/// and merges them.
inline ParallelResult run_parallel(const ToyNet& base, std::span<const SftExample> sft,
                                   std::span<const PreferencePair> pref, const PipelineConfig& cfg,
                                   const MergeRecipe& recipe, bool concurrent = false) {
  DeltaSet d_sft, d_pref;
  if (concurrent) {
    auto f = std::async(std::launch::async, [&] { return train_pref_stage(base, pref, cfg); });
    d_sft = train_sft_stage(base, sft, cfg);
    d_pref = f.get();
  } else {
    d_sft = train_sft_stage(base, sft, cfg);
    d_pref = train_pref_stage(base, pref, cfg);
  }
  return merge_parallel(base, std::move(d_sft), std::move(d_pref), recipe);
}

}  // namespace paft
