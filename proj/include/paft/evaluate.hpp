// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "paft/error.hpp"
#include "paft/toy_model.hpp"

namespace paft {

/// A held-out suite: classification examples scored by accuracy, or
/// preference pairs scored by win rate (p_winner > p_loser).
struct EvalSuite {
  std::string name;
  std::variant<std::vector<SftExample>, std::vector<PreferencePair>> data;
};

struct EvalReport {
  std::vector<std::pair<std::string, double>> per_suite;
  double average = 0.0;
};

inline double accuracy(const ToyNet& model, const std::vector<SftExample>& data) {
  if (data.empty()) throw Error(ErrorCode::kEmptySuite, "accuracy on an empty suite");
  const ParamSet none;
  std::size_t hits = 0;
  for (const auto& e : data) {
    const auto p = forward(model, none, e.x);
    std::size_t best = 0;
    for (std::size_t j = 1; j < p.size(); ++j) {
      if (p[j] > p[best]) best = j;
    }
    hits += best == e.label ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

inline double win_rate(const ToyNet& model, const std::vector<PreferencePair>& data) {
  if (data.empty()) throw Error(ErrorCode::kEmptySuite, "win rate on an empty suite");
  const ParamSet none;
  std::size_t wins = 0;
  for (const auto& pair : data) {
    const auto p = forward(model, none, pair.x);
    wins += p[pair.winner] > p[pair.loser] ? 1 : 0;
  }
  return static_cast<double>(wins) / static_cast<double>(data.size());
}

/// Scores `model` (its own parameters, no delta) on each suite; the average
/// is the unweighted mean over suites.
inline EvalReport evaluate(const ToyNet& model, const std::vector<EvalSuite>& suites) {
  if (suites.empty()) throw Error(ErrorCode::kEmptySuite, "no evaluation suites");
  EvalReport out;
  double sum = 0.0;
  for (const auto& s : suites) {
    const double m = std::visit(
        [&](const auto& data) {
          using T = std::decay_t<decltype(data)>;
          if constexpr (std::is_same_v<T, std::vector<SftExample>>) {
            return accuracy(model, data);
          } else {
            return win_rate(model, data);
          }
        },
        s.data);
    out.per_suite.emplace_back(s.name, m);
    sum += m;
  }
  out.average = sum / static_cast<double>(suites.size());
  return out;
}

}  // namespace paft
