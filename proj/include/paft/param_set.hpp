// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "paft/error.hpp"
#include "paft/tensor.hpp"

namespace paft {

/// Reserved header key in checkpoint files; not a legal parameter name.
inline constexpr std::string_view kMetadataKey = "__metadata__";

inline bool is_valid_param_name(std::string_view name) {
  if (name.empty() || name == kMetadataKey) return false;
  for (unsigned char c : name) {
    if (c < 0x20 || c == 0x7f) return false;
  }
  return true;
}

/// Named parameters in lexicographic name order, plus free-form string metadata.
class ParamSet {
 public:
  using Entries = std::map<std::string, Tensor, std::less<>>;
  using Metadata = std::map<std::string, std::string, std::less<>>;

  ParamSet() = default;

  /// Adds a new entry; throws DuplicateName if `name` is already present.
  void insert(std::string name, Tensor tensor) {
    if (!is_valid_param_name(name)) {
      throw Error(ErrorCode::kInvalidName, "invalid parameter name '" + name + "'");
    }
    auto [it, inserted] = entries_.try_emplace(std::move(name), std::move(tensor));
    if (!inserted) throw Error(ErrorCode::kDuplicateName, "duplicate parameter '" + it->first + "'");
  }

  /// Adds or overwrites an entry.
  void set(std::string name, Tensor tensor) {
    if (!is_valid_param_name(name)) {
      throw Error(ErrorCode::kInvalidName, "invalid parameter name '" + name + "'");
    }
    entries_.insert_or_assign(std::move(name), std::move(tensor));
  }

  const Tensor& at(std::string_view name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw Error(ErrorCode::kUnknownParameter, "no parameter '" + std::string(name) + "'");
    }
    return it->second;
  }

  const Tensor* find(std::string_view name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
  }

  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// Total number of scalar elements across all tensors.
  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  const Entries& entries() const noexcept { return entries_; }
  const Metadata& metadata() const noexcept { return metadata_; }
  Metadata& metadata() noexcept { return metadata_; }

  /// Same names and shapes, values ignored.
  bool same_schema(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    auto it = other.entries_.begin();
    for (const auto& [name, t] : entries_) {
      if (name != it->first || t.shape() != it->second.shape()) return false;
      ++it;
    }
    return true;
  }

  /// Bit-exact equality of names, shapes, values and metadata.
  bool bit_equal(const ParamSet& other) const {
    if (metadata_ != other.metadata_ || entries_.size() != other.entries_.size()) return false;
    auto it = other.entries_.begin();
    for (const auto& [name, t] : entries_) {
      if (name != it->first || !t.bit_equal(it->second)) return false;
      ++it;
    }
    return true;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.entries_ == b.entries_ && a.metadata_ == b.metadata_;
  }

 private:
  Entries entries_;
  Metadata metadata_;
};

/// One name/shape pair of a ParamSet layout.
struct SchemaEntry {
  std::string name;
  Shape shape;
  friend bool operator==(const SchemaEntry&, const SchemaEntry&) = default;
};
using Schema = std::vector<SchemaEntry>;

inline Schema schema_of(const ParamSet& p) {
  Schema s;
  for (const auto& [name, t] : p) s.push_back({name, t.shape()});
  return s;
}

inline ParamSet zeros_like(const ParamSet& p) {
  ParamSet out;
  for (const auto& [name, t] : p) out.insert(name, Tensor::zeros(t.shape()));
  return out;
}

/// Concatenates every tensor, in name order, into one rank-1 tensor.
inline Tensor flatten_concat(const ParamSet& p) {
  if (p.empty()) throw Error(ErrorCode::kEmptyParamSet, "flatten_concat of an empty ParamSet");
  std::vector<double> flat;
  flat.reserve(p.element_count());
  for (const auto& [_, t] : p) flat.insert(flat.end(), t.values().begin(), t.values().end());
  return Tensor::vector(std::move(flat));
}

/// Inverse of flatten_concat for a given schema.
inline ParamSet unflatten(const Tensor& flat, const Schema& schema) {
  std::size_t total = 0;
  for (const auto& e : schema) total += element_count(e.shape);
  if (flat.rank() != 1 || flat.size() != total) {
    throw Error(ErrorCode::kShapeMismatch, "unflatten: vector of " + std::to_string(flat.size()) +
                                               " elements does not fit schema of " +
                                               std::to_string(total));
  }
  ParamSet out;
  std::size_t offset = 0;
  for (const auto& e : schema) {
    const std::size_t n = element_count(e.shape);
    std::vector<double> chunk(flat.values().begin() + static_cast<std::ptrdiff_t>(offset),
                              flat.values().begin() + static_cast<std::ptrdiff_t>(offset + n));
    out.insert(e.name, Tensor(e.shape, std::move(chunk)));
    offset += n;
  }
  return out;
}

}  // namespace paft
