// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "paft/error.hpp"
#include "paft/param_set.hpp"
#include "paft/tensor.hpp"

namespace paft {

/// Metadata keys used to tag a delta with its provenance when saved.
inline constexpr const char* kDeltaSourceKey = "paft.delta.source";
inline constexpr const char* kDeltaBaseKey = "paft.delta.base";

/// Parameter differences theta_ft - theta_pre, tagged with the checkpoints
/// they were taken between.
struct DeltaSet {
  ParamSet params;
  std::string source;
  std::string base;

  DeltaSet() = default;
  explicit DeltaSet(ParamSet p, std::string source_name = {}, std::string base_name = {})
      : params(std::move(p)), source(std::move(source_name)), base(std::move(base_name)) {}

  /// The delta as a checkpoint-ready ParamSet with provenance in its metadata.
  ParamSet to_param_set() const {
    ParamSet out = params;
    if (!source.empty()) out.metadata()[kDeltaSourceKey] = source;
    if (!base.empty()) out.metadata()[kDeltaBaseKey] = base;
    return out;
  }

  static DeltaSet from_param_set(ParamSet p) {
    DeltaSet d;
    if (auto it = p.metadata().find(kDeltaSourceKey); it != p.metadata().end()) d.source = it->second;
    if (auto it = p.metadata().find(kDeltaBaseKey); it != p.metadata().end()) d.base = it->second;
    d.params = std::move(p);
    return d;
  }
};

enum class ExtractMode { kStrict, kLenient };

struct ExtractResult {
  DeltaSet delta;
  std::vector<std::string> missing_in_pre;  // lenient mode only
  std::vector<std::string> missing_in_ft;   // lenient mode only
};

/// Per-name difference theta_ft - theta_pre. Strict mode requires every
/// name of theta_ft in theta_pre; lenient mode keeps the intersection and
/// reports what it skipped. Shape mismatches are errors in both modes.
inline ExtractResult extract_delta_report(const ParamSet& theta_ft, const ParamSet& theta_pre,
                                          ExtractMode mode = ExtractMode::kStrict) {
  ExtractResult out;
  for (const auto& [name, ft] : theta_ft) {
    const Tensor* pre = theta_pre.find(name);
    if (pre == nullptr) {
      if (mode == ExtractMode::kStrict) {
        throw Error(ErrorCode::kMissingParameter, "'" + name + "' missing from base checkpoint");
      }
      out.missing_in_pre.push_back(name);
      continue;
    }
    if (!ft.same_shape(*pre)) {
      throw Error(ErrorCode::kShapeMismatch, "'" + name + "': " + shape_to_string(ft.shape()) +
                                                 " vs " + shape_to_string(pre->shape()));
    }
    out.delta.params.insert(name, sub(ft, *pre));
  }
  if (mode == ExtractMode::kLenient) {
    for (const auto& [name, _] : theta_pre) {
      if (!theta_ft.contains(name)) out.missing_in_ft.push_back(name);
    }
  }
  return out;
}

inline DeltaSet extract_delta(const ParamSet& theta_ft, const ParamSet& theta_pre,
                              ExtractMode mode = ExtractMode::kStrict) {
  return extract_delta_report(theta_ft, theta_pre, mode).delta;
}

/// theta + weight * delta; names absent from the delta pass through.
inline ParamSet apply_delta(const ParamSet& theta, const DeltaSet& delta, double weight) {
  for (const auto& [name, d] : delta.params) {
    const Tensor* t = theta.find(name);
    if (t == nullptr) {
      throw Error(ErrorCode::kUnknownParameter, "delta names '" + name + "', absent from theta");
    }
    if (!t->same_shape(d)) {
      throw Error(ErrorCode::kShapeMismatch, "'" + name + "': " + shape_to_string(t->shape()) +
                                                 " vs " + shape_to_string(d.shape()));
    }
  }
  ParamSet out;
  out.metadata() = theta.metadata();
  for (const auto& [name, t] : theta) {
    const Tensor* d = delta.params.find(name);
    if (d == nullptr || weight == 0.0) {
      out.insert(name, t);
    } else if (weight == 1.0) {
      out.insert(name, add(t, *d));
    } else {
      out.insert(name, axpy(t, weight, *d));
    }
  }
  return out;
}

inline DeltaSet scale_delta(const DeltaSet& delta, double weight) {
  DeltaSet out(ParamSet{}, delta.source, delta.base);
  out.params.metadata() = delta.params.metadata();
  for (const auto& [name, t] : delta.params) out.params.insert(name, mul_scalar(t, weight));
  return out;
}

/// Low-rank factors of one adapted layer: delta = scaling * (B x A).
struct LoraLayer {
  Tensor a;  // r x n
  Tensor b;  // m x r
};

struct LoraAdapter {
  std::map<std::string, LoraLayer, std::less<>> layers;
  std::size_t rank = 0;
  double scaling = 1.0;
};

inline constexpr const char* kLoraASuffix = ".lora_A";
inline constexpr const char* kLoraBSuffix = ".lora_B";

inline DeltaSet compose_lora(const LoraAdapter& adapter) {
  if (!(adapter.scaling >= 0.0) || !std::isfinite(adapter.scaling)) {
    throw Error(ErrorCode::kInvalidArgument, "LoRA scaling must be finite and non-negative");
  }
  DeltaSet out;
  for (const auto& [name, layer] : adapter.layers) {
    const auto& a = layer.a;
    const auto& b = layer.b;
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != adapter.rank ||
        b.shape()[1] != adapter.rank) {
      throw Error(ErrorCode::kShapeMismatch,
                  "layer '" + name + "': A " + shape_to_string(a.shape()) + ", B " +
                      shape_to_string(b.shape()) + ", rank " + std::to_string(adapter.rank));
    }
    Tensor product = matmul(b, a);
    out.params.insert(name, adapter.scaling == 1.0 ? product : mul_scalar(product, adapter.scaling));
  }
  return out;
}

/// Reads an adapter stored as "<layer>.lora_A" / "<layer>.lora_B" pairs.
/// The rank is taken from the factors, which must agree across layers.
inline LoraAdapter lora_from_param_set(const ParamSet& p, double scaling = 1.0) {
  LoraAdapter adapter;
  adapter.scaling = scaling;
  const std::string a_suffix = kLoraASuffix, b_suffix = kLoraBSuffix;
  auto strip = [](const std::string& name, const std::string& suffix) -> std::string {
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      return name.substr(0, name.size() - suffix.size());
    return {};
  };
  for (const auto& [name, t] : p) {
    if (std::string layer = strip(name, a_suffix); !layer.empty()) {
      const Tensor* b = p.find(layer + b_suffix);
      if (b == nullptr) throw Error(ErrorCode::kMissingParameter, "'" + layer + b_suffix + "'");
      if (t.rank() != 2) throw Error(ErrorCode::kShapeMismatch, "'" + name + "' is not a matrix");
      if (adapter.layers.empty()) adapter.rank = t.shape()[0];
      adapter.layers.emplace(layer, LoraLayer{t, *b});
    } else if (std::string layer_b = strip(name, b_suffix); !layer_b.empty()) {
      if (!p.contains(layer_b + a_suffix)) {
        throw Error(ErrorCode::kMissingParameter, "'" + layer_b + a_suffix + "'");
      }
    } else {
      throw Error(ErrorCode::kInvalidName, "'" + name + "' is not a LoRA factor");
    }
  }
  return adapter;
}

struct SparsityReport {
  std::map<std::string, double, std::less<>> per_layer;
  double average = 0.0;
};

/// Fraction of elements with |value| < threshold, per tensor. The average is
/// the plain mean over tensors unless `element_weighted` is set, in which case
/// it is the pooled fraction over all elements.
inline SparsityReport sparsity(const DeltaSet& delta, double threshold = 1e-5,
                               bool element_weighted = false) {
  if (!(threshold > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "sparsity threshold must be positive");
  }
  if (delta.params.empty()) throw Error(ErrorCode::kEmptyParamSet, "sparsity of an empty delta");
  SparsityReport out;
  std::size_t below_total = 0, total = 0;
  double fraction_sum = 0.0;
  for (const auto& [name, t] : delta.params) {
    std::size_t below = 0;
    for (double v : t.values()) below += std::abs(v) < threshold ? 1 : 0;
    // A zero-element tensor has nothing dense in it.
    const double fraction =
        t.size() == 0 ? 1.0 : static_cast<double>(below) / static_cast<double>(t.size());
    out.per_layer.emplace(name, fraction);
    fraction_sum += fraction;
    below_total += below;
    total += t.size();
  }
  if (element_weighted) {
    out.average = total == 0 ? 1.0 : static_cast<double>(below_total) / static_cast<double>(total);
  } else {
    out.average = fraction_sum / static_cast<double>(out.per_layer.size());
  }
  return out;
}

/// "name fraction" lines followed by "AVERAGE fraction", four decimals.
inline std::string format_sparsity_report(const SparsityReport& report) {
  std::string out;
  char buf[64];
  for (const auto& [name, fraction] : report.per_layer) {
    std::snprintf(buf, sizeof buf, " %.4f\n", fraction);
    out += name;
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "AVERAGE %.4f\n", report.average);
  out += buf;
  return out;
}

}  // namespace paft
