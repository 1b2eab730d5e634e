// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "paft/error.hpp"
#include "paft/param_set.hpp"
#include "paft/rng.hpp"
#include "paft/toy_model.hpp"

namespace paft {

using LossFn = std::function<LossValue(const ParamSet&)>;

struct GradientCheckOptions {
  double epsilon = 1e-5;
  /// Deltas with more elements than this are checked on a random subsample
  /// of this size.
  std::size_t max_elements = 400;
  std::uint64_t seed = 0;
  /// Elements with |delta_i| <= kink_factor * epsilon are skipped when set,
  /// which keeps the L1 kink out of the difference stencil.
  bool skip_l1_kink = false;
  double kink_factor = 10.0;
  double abs_floor = 1e-8;
};

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst_name;
  std::size_t worst_index = 0;
};

/// Compares analytic gradients against central differences,
/// |g - fd| / max(|g|, abs_floor), at `point`.
inline GradientCheckResult check_gradients(const LossFn& loss, const ParamSet& point,
                                           const GradientCheckOptions& opt = {}) {
  if (!(opt.epsilon >= 1e-7 && opt.epsilon <= 1e-3)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be in [1e-7, 1e-3]");
  }
  if (point.empty()) throw Error(ErrorCode::kEmptyParamSet, "gradient check at an empty point");
  const LossValue at = loss(point);
  if (schema_of(at.gradients) != schema_of(point)) {
    throw Error(ErrorCode::kShapeMismatch, "gradient schema differs from the parameter schema");
  }

  struct Slot {
    const std::string* name;
    std::size_t index;
  };
  std::vector<Slot> slots;
  for (const auto& [name, t] : point) {
    for (std::size_t i = 0; i < t.size(); ++i) slots.push_back({&name, i});
  }
  if (slots.size() > opt.max_elements) {
    SeededRng rng(opt.seed);
    for (std::size_t i = 0; i < opt.max_elements; ++i) {
      const std::size_t j = i + rng.below(slots.size() - i);
      std::swap(slots[i], slots[j]);
    }
    slots.resize(opt.max_elements);
  }

  GradientCheckResult out;
  ParamSet probe = point;
  for (const auto& s : slots) {
    const double x = point.at(*s.name)[s.index];
    if (opt.skip_l1_kink && std::abs(x) <= opt.kink_factor * opt.epsilon) {
      ++out.skipped;
      continue;
    }
    auto eval_at = [&](double v) {
      std::vector<double> vals(point.at(*s.name).values().begin(), point.at(*s.name).values().end());
      vals[s.index] = v;
      probe.set(*s.name, Tensor(point.at(*s.name).shape(), std::move(vals)));
      return loss(probe).value;
    };
    const double fd = (eval_at(x + opt.epsilon) - eval_at(x - opt.epsilon)) / (2.0 * opt.epsilon);
    probe.set(*s.name, point.at(*s.name));
    const double g = at.gradients.at(*s.name)[s.index];
    const double rel = std::abs(g - fd) / std::max(std::abs(g), opt.abs_floor);
    ++out.checked;
    if (out.checked == 1 || rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_name = *s.name;
      out.worst_index = s.index;
    }
  }
  return out;
}

}  // namespace paft
