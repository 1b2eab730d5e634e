// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small tanh MLP with a softmax head, standing in for a pre-trained model.
// The base parameters are frozen; every loss is a function of a delta added
// on top of them and returns its gradient with respect to that delta.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "paft/delta.hpp"
#include "paft/error.hpp"
#include "paft/param_set.hpp"
#include "paft/rng.hpp"

namespace paft {

/// Probabilities are clamped to [eps, 1 - eps] before any log or odds.
inline constexpr double kProbClamp = 1e-12;

inline std::string weight_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".weight"; }
inline std::string bias_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".bias"; }

struct ToyNet {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., classes
  ParamSet params;

  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
};

inline Schema toy_schema(const std::vector<std::size_t>& layer_sizes) {
  Schema s;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    s.push_back({weight_name(l), {layer_sizes[l + 1], layer_sizes[l]}});
    s.push_back({bias_name(l), {layer_sizes[l + 1]}});
  }
  // Name order, matching ParamSet iteration.
  std::sort(s.begin(), s.end(), [](const SchemaEntry& a, const SchemaEntry& b) { return a.name < b.name; });
  return s;
}

/// Gaussian init with stddev `scale / sqrt(fan_in)` for weights and
/// `bias_scale` for biases.
inline ToyNet make_toy_net(std::vector<std::size_t> layer_sizes, std::uint64_t seed,
                           double scale = 1.0, double bias_scale = 0.1) {
  if (layer_sizes.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least input and output sizes");
  for (auto n : layer_sizes) {
    if (n == 0) throw Error(ErrorCode::kInvalidArgument, "layer sizes must be positive");
  }
  ToyNet net;
  net.layer_sizes = std::move(layer_sizes);
  SeededRng rng(seed);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const std::size_t in = net.layer_sizes[l], out = net.layer_sizes[l + 1];
    const double sd = scale / std::sqrt(static_cast<double>(in));
    std::vector<double> w(out * in), b(out);
    for (double& v : w) v = rng.normal(0.0, sd);
    for (double& v : b) v = rng.normal(0.0, bias_scale);
    net.params.insert(weight_name(l), Tensor({out, in}, std::move(w)));
    net.params.insert(bias_name(l), Tensor({out}, std::move(b)));
  }
  return net;
}

/// Rebuilds a ToyNet around a checkpoint, inferring layer sizes from the
/// "layerN.weight" shapes.
inline ToyNet toy_net_from_params(ParamSet params) {
  ToyNet net;
  for (std::size_t l = 0;; ++l) {
    const Tensor* w = params.find(weight_name(l));
    if (w == nullptr) break;
    if (w->rank() != 2) throw Error(ErrorCode::kShapeMismatch, weight_name(l) + " is not a matrix");
    if (l == 0) net.layer_sizes.push_back(w->shape()[1]);
    if (w->shape()[1] != net.layer_sizes.back()) {
      throw Error(ErrorCode::kShapeMismatch, weight_name(l) + " does not chain with the previous layer");
    }
    net.layer_sizes.push_back(w->shape()[0]);
  }
  if (net.layer_sizes.size() < 2) throw Error(ErrorCode::kShapeMismatch, "no layer0.weight in checkpoint");
  const Schema expected = toy_schema(net.layer_sizes);
  bool ok = params.size() == expected.size();
  for (std::size_t i = 0; ok && i < expected.size(); ++i) {
    const Tensor* t = params.find(expected[i].name);
    ok = t != nullptr && t->shape() == expected[i].shape;
  }
  if (!ok) throw Error(ErrorCode::kShapeMismatch, "checkpoint is not a toy network parameter set");
  net.params = std::move(params);
  return net;
}

struct SftExample {
  std::vector<double> x;
  std::size_t label = 0;
};

struct PreferencePair {
  std::vector<double> x;
  std::size_t winner = 0;
  std::size_t loser = 0;
};

struct LossValue {
  double value = 0.0;
  ParamSet gradients;
};

namespace detail {

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }
inline bool prob_clamped(double p) { return p <= kProbClamp || p >= 1.0 - kProbClamp; }

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Base parameters with a delta folded in, laid out for fast evaluation.
class EffectiveNet {
 public:
  EffectiveNet(const ToyNet& net, const ParamSet& delta) : sizes_(net.layer_sizes) {
    if (!delta.empty()) {
      for (const auto& [name, d] : delta) {
        const Tensor* b = net.params.find(name);
        if (b == nullptr) throw Error(ErrorCode::kUnknownParameter, "delta names '" + name + "'");
        if (!b->same_shape(d)) throw Error(ErrorCode::kShapeMismatch, "delta '" + name + "'");
      }
    }
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      weights_.push_back(combined(net.params.at(weight_name(l)), delta.find(weight_name(l))));
      biases_.push_back(combined(net.params.at(bias_name(l)), delta.find(bias_name(l))));
    }
  }

  std::size_t layers() const { return weights_.size(); }
  std::size_t classes() const { return sizes_.back(); }

  /// Activations of every layer; the last entry holds softmax probabilities.
  struct Trace {
    std::vector<std::vector<double>> acts;  // acts[0] = x, acts[l] = tanh(...) for hidden
    std::vector<double> probs;
  };

  Trace forward(std::span<const double> x) const {
    if (x.size() != sizes_.front()) {
      throw Error(ErrorCode::kShapeMismatch, "input of length " + std::to_string(x.size()) +
                                                 ", network expects " + std::to_string(sizes_.front()));
    }
    Trace tr;
    tr.acts.emplace_back(x.begin(), x.end());
    for (std::size_t l = 0; l < layers(); ++l) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      const auto& h = tr.acts.back();
      std::vector<double> z(out);
      for (std::size_t o = 0; o < out; ++o) {
        double s = biases_[l][o];
        const double* row = &weights_[l][o * in];
        for (std::size_t i = 0; i < in; ++i) s += row[i] * h[i];
        z[o] = s;
      }
      if (l + 1 < layers()) {
        for (double& v : z) v = std::tanh(v);
        tr.acts.push_back(std::move(z));
      } else {
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double& v : z) sum += (v = std::exp(v - zmax));
        for (double& v : z) v /= sum;
        tr.probs = std::move(z);
      }
    }
    return tr;
  }

  /// Accumulates d(loss)/d(params) given d(loss)/d(logits) for one example.
  void backward(const Trace& tr, std::vector<double> dz, std::vector<std::vector<double>>& gw,
                std::vector<std::vector<double>>& gb) const {
    for (std::size_t l = layers(); l-- > 0;) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      const auto& h = tr.acts[l];
      for (std::size_t o = 0; o < out; ++o) {
        gb[l][o] += dz[o];
        if (dz[o] == 0.0) continue;
        double* grow = &gw[l][o * in];
        for (std::size_t i = 0; i < in; ++i) grow[i] += dz[o] * h[i];
      }
      if (l == 0) break;
      std::vector<double> dh(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        if (dz[o] == 0.0) continue;
        const double* row = &weights_[l][o * in];
        for (std::size_t i = 0; i < in; ++i) dh[i] += row[i] * dz[o];
      }
      for (std::size_t i = 0; i < in; ++i) dh[i] *= 1.0 - h[i] * h[i];
      dz = std::move(dh);
    }
  }

  void zero_grads(std::vector<std::vector<double>>& gw, std::vector<std::vector<double>>& gb) const {
    gw.assign(layers(), {});
    gb.assign(layers(), {});
    for (std::size_t l = 0; l < layers(); ++l) {
      gw[l].assign(weights_[l].size(), 0.0);
      gb[l].assign(biases_[l].size(), 0.0);
    }
  }

  ParamSet grads_to_params(std::vector<std::vector<double>>& gw,
                           std::vector<std::vector<double>>& gb) const {
    ParamSet out;
    for (std::size_t l = 0; l < layers(); ++l) {
      out.insert(weight_name(l), Tensor({sizes_[l + 1], sizes_[l]}, std::move(gw[l])));
      out.insert(bias_name(l), Tensor({sizes_[l + 1]}, std::move(gb[l])));
    }
    return out;
  }

 private:
  static std::vector<double> combined(const Tensor& base, const Tensor* delta) {
    std::vector<double> v(base.values().begin(), base.values().end());
    if (delta != nullptr) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += (*delta)[i];
    }
    return v;
  }

  std::vector<std::size_t> sizes_;
  std::vector<std::vector<double>> weights_;
  std::vector<std::vector<double>> biases_;
};

/// d log(clamped p_y) / d logits.
inline std::vector<double> dlogp_dz(const std::vector<double>& p, std::size_t y) {
  std::vector<double> g(p.size(), 0.0);
  if (prob_clamped(p[y])) return g;
  for (std::size_t j = 0; j < p.size(); ++j) g[j] = (j == y ? 1.0 : 0.0) - p[j];
  return g;
}

inline void check_label(std::size_t label, std::size_t classes) {
  if (label >= classes) {
    throw Error(ErrorCode::kInvalidArgument,
                "label " + std::to_string(label) + " outside " + std::to_string(classes) + " classes");
  }
}

inline void check_pair(const PreferencePair& pair, std::size_t classes) {
  check_label(pair.winner, classes);
  check_label(pair.loser, classes);
  if (pair.winner == pair.loser) throw Error(ErrorCode::kInvalidArgument, "winner equals loser");
}

/// Probability of class y and 1 - p_y, both clamped; 1 - p_y is summed from
/// the other classes to keep precision when p_y is close to 1.
inline std::pair<double, double> clamped_p_and_complement(const std::vector<double>& p, std::size_t y) {
  double rest = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (j != y) rest += p[j];
  }
  return {clamp_prob(p[y]), clamp_prob(rest)};
}

}  // namespace detail

/// Softmax output of the network with parameters base + delta (an empty
/// delta means zero).
inline std::vector<double> forward(const ToyNet& net, const ParamSet& delta, std::span<const double> x) {
  return detail::EffectiveNet(net, delta).forward(x).probs;
}

/// Mean cross-entropy plus lambda * ||delta||_1. The L1 subgradient is
/// sign(delta), taken as 0 at exactly zero.
inline LossValue sft_loss(const ToyNet& net, const ParamSet& delta, std::span<const SftExample> batch,
                          double lambda) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "sft_loss on an empty batch");
  if (!(lambda >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda must be non-negative");
  const detail::EffectiveNet eff(net, delta);
  std::vector<std::vector<double>> gw, gb;
  eff.zero_grads(gw, gb);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    detail::check_label(ex.label, eff.classes());
    const auto tr = eff.forward(ex.x);
    total += -std::log(detail::clamp_prob(tr.probs[ex.label]));
    auto dz = detail::dlogp_dz(tr.probs, ex.label);
    for (double& v : dz) v *= -inv_n;
    eff.backward(tr, std::move(dz), gw, gb);
  }
  LossValue out;
  out.value = total * inv_n;
  out.gradients = eff.grads_to_params(gw, gb);
  if (lambda > 0.0 && !delta.empty()) {
    double l1 = 0.0;
    ParamSet with_l1;
    for (const auto& [name, g] : out.gradients) {
      const Tensor& d = delta.at(name);
      l1 += l1_norm(d);
      std::vector<double> v(g.values().begin(), g.values().end());
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] += d[i] > 0.0 ? lambda : (d[i] < 0.0 ? -lambda : 0.0);
      }
      with_l1.insert(name, Tensor(g.shape(), std::move(v)));
    }
    out.value += lambda * l1;
    out.gradients = std::move(with_l1);
  }
  return out;
}

/// Pre-sigmoid DPO margin for one pair:
/// beta * [(log pi(w) - log ref(w)) - (log pi(l) - log ref(l))].
inline double dpo_margin(const ToyNet& net, const ParamSet& ref_delta, const ParamSet& policy_delta,
                         const PreferencePair& pair, double beta) {
  const auto pol = forward(net, policy_delta, pair.x);
  const auto ref = forward(net, ref_delta, pair.x);
  auto lp = [](const std::vector<double>& p, std::size_t y) { return std::log(detail::clamp_prob(p[y])); };
  return beta * ((lp(pol, pair.winner) - lp(ref, pair.winner)) - (lp(pol, pair.loser) - lp(ref, pair.loser)));
}

/// Mean over pairs of -log sigmoid(margin); gradients w.r.t. policy_delta.
inline LossValue dpo_loss(const ToyNet& net, const ParamSet& ref_delta, const ParamSet& policy_delta,
                          std::span<const PreferencePair> batch, double beta) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "dpo_loss on an empty batch");
  if (!(beta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "beta must be positive");
  const detail::EffectiveNet policy(net, policy_delta);
  const detail::EffectiveNet reference(net, ref_delta);
  std::vector<std::vector<double>> gw, gb;
  policy.zero_grads(gw, gb);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& pair : batch) {
    detail::check_pair(pair, policy.classes());
    const auto tr = policy.forward(pair.x);
    const auto ref = reference.forward(pair.x).probs;
    auto lp = [](const std::vector<double>& p, std::size_t y) { return std::log(detail::clamp_prob(p[y])); };
    const double margin = beta * ((lp(tr.probs, pair.winner) - lp(ref, pair.winner)) -
                                  (lp(tr.probs, pair.loser) - lp(ref, pair.loser)));
    total += detail::softplus(-margin);
    const double dmargin = -detail::sigmoid(-margin) * beta * inv_n;
    const auto gw_z = detail::dlogp_dz(tr.probs, pair.winner);
    const auto gl_z = detail::dlogp_dz(tr.probs, pair.loser);
    std::vector<double> dz(gw_z.size());
    for (std::size_t j = 0; j < dz.size(); ++j) dz[j] = dmargin * (gw_z[j] - gl_z[j]);
    policy.backward(tr, std::move(dz), gw, gb);
  }
  return {total * inv_n, policy.grads_to_params(gw, gb)};
}

/// Mean over pairs of -log p(w) + beta_or * -log sigmoid(log odds(w) - log odds(l)),
/// with odds(y) = p_y / (1 - p_y).
inline LossValue orpo_loss(const ToyNet& net, const ParamSet& delta, std::span<const PreferencePair> batch,
                           double beta_or) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "orpo_loss on an empty batch");
  if (!(beta_or >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "beta_or must be non-negative");
  const detail::EffectiveNet eff(net, delta);
  std::vector<std::vector<double>> gw, gb;
  eff.zero_grads(gw, gb);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& pair : batch) {
    detail::check_pair(pair, eff.classes());
    const auto tr = eff.forward(pair.x);
    const auto& p = tr.probs;
    const auto [pw, qw] = detail::clamped_p_and_complement(p, pair.winner);
    const auto [pl, ql] = detail::clamped_p_and_complement(p, pair.loser);
    const double gap = (std::log(pw) - std::log(qw)) - (std::log(pl) - std::log(ql));
    total += -std::log(pw) + beta_or * detail::softplus(-gap);

    // d log odds(y) / dz = (e_y - p) / (1 - p_y), zero where clamped.
    auto dlogodds = [&](std::size_t y, double q) {
      std::vector<double> g(p.size(), 0.0);
      if (detail::prob_clamped(p[y]) || q <= kProbClamp) return g;
      for (std::size_t j = 0; j < p.size(); ++j) g[j] = ((j == y ? 1.0 : 0.0) - p[j]) / q;
      return g;
    };
    const auto nll = detail::dlogp_dz(p, pair.winner);
    const auto ow = dlogodds(pair.winner, qw);
    const auto ol = dlogodds(pair.loser, ql);
    const double dgap = -detail::sigmoid(-gap) * beta_or;
    std::vector<double> dz(p.size());
    for (std::size_t j = 0; j < dz.size(); ++j) dz[j] = inv_n * (-nll[j] + dgap * (ow[j] - ol[j]));
    eff.backward(tr, std::move(dz), gw, gb);
  }
  return {total * inv_n, eff.grads_to_params(gw, gb)};
}

}  // namespace paft
