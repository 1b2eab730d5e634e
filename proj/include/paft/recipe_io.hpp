// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>

#include <json.hpp>

#include "paft/error.hpp"
#include "paft/merge.hpp"
#include "paft/sparsify.hpp"

namespace paft {

inline std::string_view to_string(SparsifyMethod m) {
  switch (m) {
    case SparsifyMethod::kDare: return "dare";
    case SparsifyMethod::kTrimTopK: return "trim_topk";
    case SparsifyMethod::kThreshold: return "threshold";
  }
  return "unknown";
}

inline std::string_view to_string(Granularity g) {
  return g == Granularity::kGlobal ? "global" : "per_tensor";
}

inline std::string_view to_string(SlerpScope s) {
  return s == SlerpScope::kGlobal ? "global" : "per_tensor";
}

namespace detail {

inline void reject_unknown_fields(const nlohmann::json& j, const std::set<std::string_view>& allowed,
                                  std::string_view where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.contains(it.key())) {
      throw Error(ErrorCode::kRecipeError,
                  "unknown field '" + it.key() + "' in " + std::string(where));
    }
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* name, std::string_view where) {
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kRecipeError,
                "field '" + std::string(name) + "' in " + std::string(where) + " is missing or has the wrong type");
  }
}

inline double number_field(const nlohmann::json& j, const char* name, std::string_view where) {
  if (!j.contains(name) || !j[name].is_number()) {
    throw Error(ErrorCode::kRecipeError,
                "field '" + std::string(name) + "' in " + std::string(where) + " must be a number");
  }
  return j[name].get<double>();
}

inline std::uint64_t seed_field(const nlohmann::json& j, std::string_view where) {
  if (!j["seed"].is_number_unsigned()) {
    throw Error(ErrorCode::kRecipeError,
                "field 'seed' in " + std::string(where) + " must be a non-negative integer");
  }
  return j["seed"].get<std::uint64_t>();
}

inline Granularity parse_granularity(const std::string& s) {
  if (s == "per_tensor") return Granularity::kPerTensor;
  if (s == "global") return Granularity::kGlobal;
  throw Error(ErrorCode::kRecipeError, "field 'granularity' must be 'per_tensor' or 'global', got '" + s + "'");
}

}  // namespace detail

inline SparsifyMethod parse_sparsify_method(std::string_view s) {
  if (s == "dare") return SparsifyMethod::kDare;
  if (s == "trim_topk") return SparsifyMethod::kTrimTopK;
  if (s == "threshold") return SparsifyMethod::kThreshold;
  throw Error(ErrorCode::kUnsupportedMethod, "unknown sparsify method '" + std::string(s) + "'");
}

/// Only the fields used by the method are emitted.
inline nlohmann::json sparsify_spec_to_json(const SparsifySpec& s) {
  nlohmann::json j;
  j["method"] = std::string(to_string(s.method));
  switch (s.method) {
    case SparsifyMethod::kDare:
      j["p"] = s.p;
      j["seed"] = s.seed;
      break;
    case SparsifyMethod::kTrimTopK:
      j["k"] = s.k;
      j["granularity"] = std::string(to_string(s.granularity));
      break;
    case SparsifyMethod::kThreshold: j["tau"] = s.tau; break;
  }
  return j;
}

inline SparsifySpec sparsify_spec_from_json(const nlohmann::json& j) {
  constexpr std::string_view where = "sparsify";
  if (!j.is_object()) throw Error(ErrorCode::kRecipeError, "'sparsify' must be an object");
  detail::reject_unknown_fields(j, {"method", "p", "k", "tau", "seed", "granularity"}, where);
  SparsifySpec s;
  try {
    s.method = parse_sparsify_method(detail::field<std::string>(j, "method", where));
  } catch (const Error& e) {
    throw Error(ErrorCode::kRecipeError, e.what());
  }
  switch (s.method) {
    case SparsifyMethod::kDare:
      s.p = detail::number_field(j, "p", where);
      if (!(s.p >= 0.0 && s.p < 1.0)) throw Error(ErrorCode::kRecipeError, "field 'p' must be in [0, 1)");
      if (j.contains("seed")) s.seed = detail::seed_field(j, where);
      break;
    case SparsifyMethod::kTrimTopK:
      s.k = detail::number_field(j, "k", where);
      if (!(s.k > 0.0 && s.k <= 1.0)) throw Error(ErrorCode::kRecipeError, "field 'k' must be in (0, 1]");
      if (j.contains("granularity")) {
        s.granularity = detail::parse_granularity(detail::field<std::string>(j, "granularity", where));
      }
      break;
    case SparsifyMethod::kThreshold:
      s.tau = detail::number_field(j, "tau", where);
      if (!(s.tau > 0.0)) throw Error(ErrorCode::kRecipeError, "field 'tau' must be positive");
      break;
  }
  return s;
}

/// Normalized form: every field the method uses, with defaults filled in.
inline nlohmann::json recipe_to_json(const MergeRecipe& r) {
  nlohmann::json j;
  j["method"] = std::string(to_string(r.method));
  j["base"] = r.base;
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& in : r.inputs) inputs.push_back({{"delta", in.delta}, {"weight", in.weight}});
  j["inputs"] = std::move(inputs);
  switch (r.method) {
    case MergeMethod::kLinear: j["normalize_weights"] = r.normalize(); break;
    case MergeMethod::kTaskArithmetic: j["normalize_weights"] = false; break;
    case MergeMethod::kDareTies:
      j["drop"] = r.drop;
      j["seed"] = r.seed;
      [[fallthrough]];
    case MergeMethod::kTies:
      j["density"] = r.density;
      j["granularity"] = std::string(to_string(r.trim_granularity));
      break;
    case MergeMethod::kSlerp:
      j["t"] = r.t;
      j["slerp_scope"] = std::string(to_string(r.slerp_scope));
      break;
  }
  if (r.sparsify) j["sparsify"] = sparsify_spec_to_json(*r.sparsify);
  return j;
}

/// Parses and validates a recipe document; errors name the offending field.
inline MergeRecipe recipe_from_json(const nlohmann::json& j) {
  constexpr std::string_view where = "recipe";
  if (!j.is_object()) throw Error(ErrorCode::kRecipeError, "recipe must be a JSON object");
  detail::reject_unknown_fields(j,
                                {"method", "base", "inputs", "density", "drop", "seed", "t",
                                 "normalize_weights", "granularity", "slerp_scope", "sparsify"},
                                where);
  MergeRecipe r;
  r.method = parse_merge_method(detail::field<std::string>(j, "method", where));
  if (j.contains("base")) r.base = detail::field<std::string>(j, "base", where);
  if (!j.contains("inputs") || !j["inputs"].is_array()) {
    throw Error(ErrorCode::kRecipeError, "field 'inputs' must be an array");
  }
  for (const auto& in : j["inputs"]) {
    if (!in.is_object()) throw Error(ErrorCode::kRecipeError, "each entry of 'inputs' must be an object");
    detail::reject_unknown_fields(in, {"delta", "weight"}, "inputs entry");
    MergeInput mi;
    mi.delta = detail::field<std::string>(in, "delta", "inputs entry");
    if (in.contains("weight")) mi.weight = detail::number_field(in, "weight", "inputs entry");
    r.inputs.push_back(std::move(mi));
  }
  if (j.contains("density")) r.density = detail::number_field(j, "density", where);
  if (j.contains("drop")) r.drop = detail::number_field(j, "drop", where);
  if (j.contains("seed")) r.seed = detail::seed_field(j, where);
  if (j.contains("t")) r.t = detail::number_field(j, "t", where);
  if (j.contains("normalize_weights")) {
    r.normalize_weights = detail::field<bool>(j, "normalize_weights", where);
  }
  if (j.contains("granularity")) {
    r.trim_granularity = detail::parse_granularity(detail::field<std::string>(j, "granularity", where));
  }
  if (j.contains("slerp_scope")) {
    const auto s = detail::field<std::string>(j, "slerp_scope", where);
    if (s == "global") {
      r.slerp_scope = SlerpScope::kGlobal;
    } else if (s == "per_tensor") {
      r.slerp_scope = SlerpScope::kPerTensor;
    } else {
      throw Error(ErrorCode::kRecipeError, "field 'slerp_scope' must be 'global' or 'per_tensor'");
    }
  }
  if (j.contains("sparsify")) r.sparsify = sparsify_spec_from_json(j["sparsify"]);
  validate_recipe(r);
  return r;
}

inline MergeRecipe recipe_from_string(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kRecipeError, std::string("recipe is not valid JSON: ") + e.what());
  }
  return recipe_from_json(j);
}

}  // namespace paft
