// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "amuse/linalg.hpp"

namespace amuse {

/// Muon-eligible matrices are orthogonalized; everything else goes through
/// the auxiliary base optimizer (SGD or AdamW).
enum class ParamGroup { muon, auxiliary };

struct Param {
  std::string name;
  DenseMatrix value;
  ParamGroup group = ParamGroup::auxiliary;
};

/// Ordered, named parameter matrices. Declaration order defines the flat
/// layout used by every Hessian and projection computation.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<Param> items) : items_(std::move(items)) {}

  void add(std::string name, DenseMatrix value, ParamGroup group) {
    items_.push_back(Param{std::move(name), std::move(value), group});
  }

  std::size_t count() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }

  Param& operator[](std::size_t i) { return items_[i]; }
  const Param& operator[](std::size_t i) const { return items_[i]; }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }

  /// Offset of parameter i inside the flat vector.
  std::size_t offset_of(std::size_t i) const {
    std::size_t off = 0;
    for (std::size_t j = 0; j < i; ++j) off += items_[j].value.size();
    return off;
  }

  std::vector<Shape> shapes() const {
    std::vector<Shape> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.emplace_back(p.value.rows(), p.value.cols());
    return out;
  }

  FlatVector flatten() const {
    FlatVector out;
    out.reserve(total_size());
    for (const auto& p : items_) out.insert(out.end(), p.value.values().begin(), p.value.values().end());
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    if (flat.size() != total_size()) {
      throw ShapeError("ParamSet::assign_flat: length " + std::to_string(flat.size()) + " != " +
                       std::to_string(total_size()));
    }
    std::size_t off = 0;
    for (auto& p : items_) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p.value.size(), p.value.data());
      off += p.value.size();
    }
  }

  /// Same names, shapes and groups; all values zero.
  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& p : items_) out.add(p.name, DenseMatrix(p.value.rows(), p.value.cols()), p.group);
    return out;
  }

  bool same_layout(const ParamSet& o) const {
    if (o.items_.size() != items_.size()) return false;
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (!items_[i].value.same_shape(o.items_[i].value)) return false;
    return true;
  }

  /// Bitwise equality of every value.
  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.items_.size() != b.items_.size()) return false;
    for (std::size_t i = 0; i < a.items_.size(); ++i)
      if (!(a.items_[i].value == b.items_[i].value)) return false;
    return true;
  }

 private:
  std::vector<Param> items_;
};

inline double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) throw ShapeError("max_abs_diff: parameter layouts differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.count(); ++i) m = std::max(m, max_abs_diff(a[i].value, b[i].value));
  return m;
}

inline double global_norm(const ParamSet& p) {
  double s = 0.0;
  for (const auto& item : p)
    for (double v : item.value.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace amuse
