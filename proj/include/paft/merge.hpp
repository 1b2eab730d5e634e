// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paft/delta.hpp"
#include "paft/error.hpp"
#include "paft/sparsify.hpp"

namespace paft {

enum class MergeMethod { kLinear, kTaskArithmetic, kTies, kDareTies, kSlerp };

inline constexpr std::string_view to_string(MergeMethod m) {
  switch (m) {
    case MergeMethod::kLinear: return "linear";
    case MergeMethod::kTaskArithmetic: return "task_arithmetic";
    case MergeMethod::kTies: return "ties";
    case MergeMethod::kDareTies: return "dare_ties";
    case MergeMethod::kSlerp: return "slerp";
  }
  return "unknown";
}

inline MergeMethod parse_merge_method(std::string_view s) {
  for (auto m : {MergeMethod::kLinear, MergeMethod::kTaskArithmetic, MergeMethod::kTies,
                 MergeMethod::kDareTies, MergeMethod::kSlerp}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorCode::kUnsupportedMethod, "unknown merge method '" + std::string(s) + "'");
}

enum class SlerpScope { kGlobal, kPerTensor };

inline constexpr double kDefaultDensity = 0.5;
inline constexpr double kDefaultDrop = 0.5;
inline constexpr double kDefaultSlerpT = 0.5;

struct MergeInput {
  std::string delta;  // checkpoint reference, informational for in-memory merges
  double weight = 1.0;
};

/// Declarative description of one merge.
struct MergeRecipe {
  MergeMethod method = MergeMethod::kTaskArithmetic;
  std::string base;
  std::vector<MergeInput> inputs;
  double density = kDefaultDensity;     // ties, dare_ties
  double drop = kDefaultDrop;           // dare_ties
  std::uint64_t seed = 0;               // dare_ties
  double t = kDefaultSlerpT;            // slerp
  std::optional<bool> normalize_weights;  // linear; defaults to true there
  Granularity trim_granularity = Granularity::kPerTensor;
  SlerpScope slerp_scope = SlerpScope::kGlobal;
  std::optional<SparsifySpec> sparsify;  // applied to every delta before merging

  bool normalize() const {
    return method == MergeMethod::kLinear && normalize_weights.value_or(true);
  }

  std::vector<double> weights() const {
    std::vector<double> w;
    for (const auto& in : inputs) w.push_back(in.weight);
    return w;
  }
};

/// Throws RecipeError (or a more specific code) if the recipe is inconsistent.
inline void validate_recipe(const MergeRecipe& r) {
  if (r.method == MergeMethod::kSlerp) {
    if (r.inputs.size() != 2) throw Error(ErrorCode::kRecipeError, "slerp requires exactly 2 deltas");
    if (!(r.t >= 0.0 && r.t <= 1.0)) throw Error(ErrorCode::kRecipeError, "slerp t must be in [0, 1]");
  } else if (r.inputs.empty()) {
    throw Error(ErrorCode::kRecipeError, std::string(to_string(r.method)) + " requires at least 1 delta");
  }
  double sum = 0.0;
  for (const auto& in : r.inputs) {
    if (!std::isfinite(in.weight)) throw Error(ErrorCode::kRecipeError, "weights must be finite");
    sum += in.weight;
  }
  if (r.normalize() && sum == 0.0) {
    throw Error(ErrorCode::kZeroWeightSum, "linear merge with normalize_weights needs a nonzero weight sum");
  }
  if ((r.method == MergeMethod::kTies || r.method == MergeMethod::kDareTies) &&
      !(r.density > 0.0 && r.density <= 1.0)) {
    throw Error(ErrorCode::kInvalidDensity, "density must be in (0, 1]");
  }
  if (r.method == MergeMethod::kDareTies && !(r.drop >= 0.0 && r.drop < 1.0)) {
    throw Error(ErrorCode::kInvalidProbability, "drop must be in [0, 1)");
  }
}

/// Side information a merge may report alongside its result.
struct MergeNotes {
  bool slerp_linear_fallback = false;
  bool both_deltas_zero = false;
  double slerp_angle = 0.0;
};

namespace detail {

inline void check_delta_against_base(const ParamSet& base, const DeltaSet& delta) {
  for (const auto& [name, d] : delta.params) {
    const Tensor* b = base.find(name);
    if (b == nullptr) {
      throw Error(ErrorCode::kUnknownParameter, "delta names '" + name + "', absent from base");
    }
    if (!b->same_shape(d)) {
      throw Error(ErrorCode::kShapeMismatch, "'" + name + "': base " + shape_to_string(b->shape()) +
                                                 ", delta " + shape_to_string(d.shape()));
    }
  }
}

/// Base plus a per-element offset; elements whose offset is exactly zero keep
/// the base value bit for bit.
inline Tensor offset_tensor(const Tensor& base, const std::vector<double>& offset) {
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = offset[i] == 0.0 ? base[i] : base[i] + offset[i];
  return Tensor(base.shape(), std::move(out));
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// The delta expressed on the base schema, zeros where the delta is silent.
inline ParamSet densify(const ParamSet& base, const DeltaSet& delta) {
  ParamSet out;
  for (const auto& [name, b] : base) {
    const Tensor* d = delta.params.find(name);
    out.insert(name, d ? *d : Tensor::zeros(b.shape()));
  }
  return out;
}

}  // namespace detail

/// base + sum_i w_i * delta_i, with weights divided by their sum when `normalize`.
inline ParamSet merge_linear(const ParamSet& base, const std::vector<DeltaSet>& deltas,
                             std::vector<double> weights, bool normalize) {
  if (weights.size() != deltas.size()) {
    throw Error(ErrorCode::kRecipeError, "one weight per delta required");
  }
  if (normalize) {
    double sum = 0.0;
    for (double w : weights) sum += w;
    if (sum == 0.0) throw Error(ErrorCode::kZeroWeightSum, "weights sum to zero");
    for (double& w : weights) w /= sum;
  }
  for (const auto& d : deltas) detail::check_delta_against_base(base, d);
  ParamSet out;
  out.metadata() = base.metadata();
  for (const auto& [name, b] : base) {
    std::vector<double> offset(b.size(), 0.0);
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      const Tensor* d = deltas[i].params.find(name);
      if (d == nullptr) continue;
      for (std::size_t j = 0; j < offset.size(); ++j) offset[j] += weights[i] * (*d)[j];
    }
    out.insert(name, detail::offset_tensor(b, offset));
  }
  return out;
}

/// base + sum_i w_i * delta_i with weights used as given.
inline ParamSet merge_task_arithmetic(const ParamSet& base, const std::vector<DeltaSet>& deltas,
                                      const std::vector<double>& weights) {
  return merge_linear(base, deltas, weights, false);
}

/// TIES: trim each weighted delta to its top-k magnitudes, elect a sign per
/// element from the sum of signs (falling back to the sign of the value sum,
/// then to the base value), and add the mean of the values agreeing with it.
inline ParamSet merge_ties(const ParamSet& base, const std::vector<DeltaSet>& deltas,
                           const std::vector<double>& weights, double k,
                           Granularity granularity = Granularity::kPerTensor) {
  if (!(k > 0.0 && k <= 1.0)) throw Error(ErrorCode::kInvalidDensity, "density must be in (0, 1]");
  if (weights.size() != deltas.size()) {
    throw Error(ErrorCode::kRecipeError, "one weight per delta required");
  }
  for (const auto& d : deltas) detail::check_delta_against_base(base, d);

  std::vector<DeltaSet> trimmed;
  trimmed.reserve(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    DeltaSet weighted;
    for (const auto& [name, t] : deltas[i].params) {
      weighted.params.insert(name, weights[i] == 1.0 ? t : mul_scalar(t, weights[i]));
    }
    trimmed.push_back(trim_topk(weighted, k, granularity));
  }

  ParamSet out;
  out.metadata() = base.metadata();
  std::vector<const Tensor*> column(trimmed.size());
  for (const auto& [name, b] : base) {
    for (std::size_t i = 0; i < trimmed.size(); ++i) column[i] = trimmed[i].params.find(name);
    std::vector<double> offset(b.size(), 0.0);
    for (std::size_t j = 0; j < b.size(); ++j) {
      double sign_sum = 0.0, value_sum = 0.0;
      for (const Tensor* t : column) {
        if (t == nullptr) continue;
        sign_sum += detail::sign((*t)[j]);
        value_sum += (*t)[j];
      }
      double elected = detail::sign(sign_sum);
      if (elected == 0.0) elected = detail::sign(value_sum);
      if (elected == 0.0) continue;
      double agree_sum = 0.0;
      std::size_t agree_count = 0;
      for (const Tensor* t : column) {
        if (t == nullptr) continue;
        const double v = (*t)[j];
        if (v != 0.0 && detail::sign(v) == elected) {
          agree_sum += v;
          ++agree_count;
        }
      }
      offset[j] = agree_sum / static_cast<double>(agree_count);
    }
    out.insert(name, detail::offset_tensor(b, offset));
  }
  return out;
}

/// Seed used for the i-th delta of a DARE-TIES merge.
constexpr std::uint64_t dare_ties_seed(std::uint64_t seed, std::size_t i) noexcept {
  return seed ^ static_cast<std::uint64_t>(i);
}

/// DARE on every delta (seed XOR its index), then TIES.
inline ParamSet merge_dare_ties(const ParamSet& base, const std::vector<DeltaSet>& deltas,
                                const std::vector<double>& weights, double p, double k,
                                std::uint64_t seed,
                                Granularity granularity = Granularity::kPerTensor) {
  std::vector<DeltaSet> dropped;
  dropped.reserve(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    dropped.push_back(dare(deltas[i], p, dare_ties_seed(seed, i)));
  }
  return merge_ties(base, dropped, weights, k, granularity);
}

namespace detail {

struct SlerpCoefficients {
  double a = 0.0;
  double b = 0.0;
  bool linear = false;
  bool both_zero = false;
  double angle = 0.0;
};

inline SlerpCoefficients slerp_coefficients(std::span<const double> a, std::span<const double> b,
                                            double t) {
  double na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  SlerpCoefficients c;
  c.both_zero = na < 1e-12 && nb < 1e-12;
  if (na < 1e-12 || nb < 1e-12) {
    c.linear = true;
  } else {
    // 2*atan2(|a/na - b/nb|, |a/na + b/nb|) keeps resolution near 0 and pi.
    double diff2 = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double u = a[i] / na, v = b[i] / nb;
      diff2 += (u - v) * (u - v);
      sum2 += (u + v) * (u + v);
    }
    c.angle = 2.0 * std::atan2(std::sqrt(diff2), std::sqrt(sum2));
    const double s = std::sin(c.angle);
    if (std::abs(s) < 1e-8) {
      c.linear = true;
    } else {
      c.a = std::sin((1.0 - t) * c.angle) / s;
      c.b = std::sin(t * c.angle) / s;
      return c;
    }
  }
  c.a = 1.0 - t;
  c.b = t;
  return c;
}

}  // namespace detail

/// Spherical interpolation between two deltas, added to base. The angle is
/// taken over the whole flattened delta (kGlobal) or per tensor. Near-zero or
/// near-collinear inputs fall back to (1-t)*a + t*b, reported in `notes`.
inline ParamSet merge_slerp(const ParamSet& base, const DeltaSet& delta_a, const DeltaSet& delta_b,
                            double t, SlerpScope scope = SlerpScope::kGlobal,
                            MergeNotes* notes = nullptr) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::kRecipeError, "slerp t must be in [0, 1]");
  detail::check_delta_against_base(base, delta_a);
  detail::check_delta_against_base(base, delta_b);
  MergeNotes local;
  MergeNotes& n = notes ? *notes : local;
  n = MergeNotes{};
  if (base.empty()) return base;

  const ParamSet a = detail::densify(base, delta_a);
  const ParamSet b = detail::densify(base, delta_b);

  if (scope == SlerpScope::kGlobal) {
    const Tensor fa = flatten_concat(a), fb = flatten_concat(b);
    const auto c = detail::slerp_coefficients(fa.values(), fb.values(), t);
    n.slerp_linear_fallback = c.linear;
    n.both_deltas_zero = c.both_zero;
    n.slerp_angle = c.angle;
    // Endpoints reproduce base + delta exactly.
    if (t == 0.0) return apply_delta(base, DeltaSet(a), 1.0);
    if (t == 1.0) return apply_delta(base, DeltaSet(b), 1.0);
    ParamSet out;
    out.metadata() = base.metadata();
    for (const auto& [name, bt] : base) {
      const Tensor& ta = a.at(name);
      const Tensor& tb = b.at(name);
      std::vector<double> offset(bt.size());
      for (std::size_t j = 0; j < offset.size(); ++j) offset[j] = c.a * ta[j] + c.b * tb[j];
      out.insert(name, detail::offset_tensor(bt, offset));
    }
    return out;
  }

  if (t == 0.0) return apply_delta(base, DeltaSet(a), 1.0);
  if (t == 1.0) return apply_delta(base, DeltaSet(b), 1.0);
  ParamSet out;
  out.metadata() = base.metadata();
  bool all_zero = true;
  for (const auto& [name, bt] : base) {
    const Tensor& ta = a.at(name);
    const Tensor& tb = b.at(name);
    const auto c = detail::slerp_coefficients(ta.values(), tb.values(), t);
    n.slerp_linear_fallback = n.slerp_linear_fallback || c.linear;
    all_zero = all_zero && c.both_zero;
    std::vector<double> offset(bt.size());
    for (std::size_t j = 0; j < offset.size(); ++j) offset[j] = c.a * ta[j] + c.b * tb[j];
    out.insert(name, detail::offset_tensor(bt, offset));
  }
  n.both_deltas_zero = all_zero;
  return out;
}

/// Dispatches a recipe. `deltas[i]` corresponds to `recipe.inputs[i]`.
inline ParamSet merge(const MergeRecipe& recipe, const ParamSet& base,
                      const std::vector<DeltaSet>& deltas, MergeNotes* notes = nullptr) {
  validate_recipe(recipe);
  if (deltas.size() != recipe.inputs.size()) {
    throw Error(ErrorCode::kRecipeError, "recipe lists " + std::to_string(recipe.inputs.size()) +
                                             " inputs but " + std::to_string(deltas.size()) +
                                             " deltas were supplied");
  }
  std::vector<DeltaSet> prepared;
  const std::vector<DeltaSet>* use = &deltas;
  if (recipe.sparsify) {
    for (const auto& d : deltas) prepared.push_back(apply_sparsify(d, *recipe.sparsify));
    use = &prepared;
  }
  const auto weights = recipe.weights();
  if (notes) *notes = MergeNotes{};
  switch (recipe.method) {
    case MergeMethod::kLinear: return merge_linear(base, *use, weights, recipe.normalize());
    case MergeMethod::kTaskArithmetic: return merge_task_arithmetic(base, *use, weights);
    case MergeMethod::kTies:
      return merge_ties(base, *use, weights, recipe.density, recipe.trim_granularity);
    case MergeMethod::kDareTies:
      return merge_dare_ties(base, *use, weights, recipe.drop, recipe.density, recipe.seed,
                             recipe.trim_granularity);
    case MergeMethod::kSlerp: {
      // Weights scale the two deltas before interpolation.
      if (weights[0] == 1.0 && weights[1] == 1.0) {
        return merge_slerp(base, (*use)[0], (*use)[1], recipe.t, recipe.slerp_scope, notes);
      }
      return merge_slerp(base, scale_delta((*use)[0], weights[0]),
                         scale_delta((*use)[1], weights[1]), recipe.t, recipe.slerp_scope, notes);
    }
  }
  throw Error(ErrorCode::kUnsupportedMethod, "unknown merge method");
}

}  // namespace paft
