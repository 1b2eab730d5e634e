// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "paft/delta.hpp"
#include "paft/error.hpp"
#include "paft/rng.hpp"

namespace paft {

enum class SparsifyMethod { kDare, kTrimTopK, kThreshold };
enum class Granularity { kPerTensor, kGlobal };

/// One sparsification transform; only the fields used by `method` matter.
struct SparsifySpec {
  SparsifyMethod method = SparsifyMethod::kThreshold;
  double p = 0.0;       // dare drop probability, [0, 1)
  double k = 1.0;       // trim_topk keep fraction, (0, 1]
  double tau = 1e-5;    // threshold, > 0
  std::uint64_t seed = 0;
  Granularity granularity = Granularity::kPerTensor;
};

/// Whether DARE drops element `index` of tensor `name`.
inline bool dare_drops(std::uint64_t seed, std::string_view name, std::uint64_t index, double p) {
  return to_unit_interval(element_hash(seed, name, index)) < p;
}

/// Drop-and-rescale: each element is zeroed with probability p, survivors are
/// multiplied by 1/(1-p). The decision for an element depends only on
/// (seed, tensor name, element index), so results do not depend on `threads`.
inline DeltaSet dare(const DeltaSet& delta, double p, std::uint64_t seed, unsigned threads = 1) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw Error(ErrorCode::kInvalidProbability, "dare drop probability must be in [0, 1)");
  }
  if (p == 0.0) return delta;
  const double scale = 1.0 / (1.0 - p);
  DeltaSet out(ParamSet{}, delta.source, delta.base);
  out.params.metadata() = delta.params.metadata();
  for (const auto& [name, t] : delta.params) {
    std::vector<double> values(t.size());
    auto work = [&, name = std::string_view(name)](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        values[i] = dare_drops(seed, name, i, p) ? 0.0 : t[i] * scale;
      }
    };
    const std::size_t n = t.size();
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    if (workers == 1) {
      work(0, n);
    } else {
      std::vector<std::jthread> pool;
      const std::size_t chunk = (n + workers - 1) / workers;
      for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = std::min(n, w * chunk), hi = std::min(n, lo + chunk);
        pool.emplace_back(work, lo, hi);
      }
    }
    out.params.insert(name, Tensor(t.shape(), std::move(values)));
  }
  return out;
}

/// Number of elements kept by trim_topk out of n.
inline std::size_t topk_keep_count(double k, std::size_t n) {
  const auto keep = static_cast<std::size_t>(std::ceil(k * static_cast<double>(n)));
  return std::min(keep, n);
}

namespace detail {

/// Indices of the `keep` largest |values|, ties broken by lower index first.
/// `values` is addressed through `get(i)` for i in [0, n).
template <typename Get>
std::vector<bool> topk_mask(std::size_t n, std::size_t keep, Get get) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t x, std::size_t y) {
    const double ax = std::abs(get(x)), ay = std::abs(get(y));
    return ax != ay ? ax > ay : x < y;
  };
  if (keep < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), before);
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < keep; ++i) mask[order[i]] = true;
  return mask;
}

}  // namespace detail

/// Keeps the ceil(k*N) largest-magnitude elements (per tensor or over the
/// whole delta) and zeroes the rest. Ties: larger magnitude first, then lower
/// index; in global mode the index is the position in the flattened delta.
inline DeltaSet trim_topk(const DeltaSet& delta, double k,
                          Granularity granularity = Granularity::kPerTensor) {
  if (!(k > 0.0 && k <= 1.0)) {
    throw Error(ErrorCode::kInvalidDensity, "trim_topk keep fraction must be in (0, 1]");
  }
  if (k == 1.0) return delta;
  DeltaSet out(ParamSet{}, delta.source, delta.base);
  out.params.metadata() = delta.params.metadata();
  if (granularity == Granularity::kPerTensor) {
    for (const auto& [name, t] : delta.params) {
      const auto mask = detail::topk_mask(t.size(), topk_keep_count(k, t.size()),
                                          [&](std::size_t i) { return t[i]; });
      std::vector<double> values(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) values[i] = mask[i] ? t[i] : 0.0;
      out.params.insert(name, Tensor(t.shape(), std::move(values)));
    }
    return out;
  }
  if (delta.params.empty()) return out;
  const Tensor flat = flatten_concat(delta.params);
  const auto mask = detail::topk_mask(flat.size(), topk_keep_count(k, flat.size()),
                                      [&](std::size_t i) { return flat[i]; });
  std::vector<double> values(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) values[i] = mask[i] ? flat[i] : 0.0;
  out.params = unflatten(Tensor::vector(std::move(values)), schema_of(delta.params));
  out.params.metadata() = delta.params.metadata();
  return out;
}

/// Zeroes elements with |value| < tau; no rescaling.
inline DeltaSet threshold_prune(const DeltaSet& delta, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "threshold must be positive");
  DeltaSet out(ParamSet{}, delta.source, delta.base);
  out.params.metadata() = delta.params.metadata();
  for (const auto& [name, t] : delta.params) {
    std::vector<double> values(t.values().begin(), t.values().end());
    for (double& v : values) {
      if (std::abs(v) < tau) v = 0.0;
    }
    out.params.insert(name, Tensor(t.shape(), std::move(values)));
  }
  return out;
}

inline DeltaSet apply_sparsify(const DeltaSet& delta, const SparsifySpec& spec) {
  switch (spec.method) {
    case SparsifyMethod::kDare: return dare(delta, spec.p, spec.seed);
    case SparsifyMethod::kTrimTopK: return trim_topk(delta, spec.k, spec.granularity);
    case SparsifyMethod::kThreshold: return threshold_prune(delta, spec.tau);
  }
  throw Error(ErrorCode::kUnsupportedMethod, "unknown sparsify method");
}

}  // namespace paft
