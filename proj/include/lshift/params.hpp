#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lshift/tensor.hpp"

namespace lshift {

/// Ordered, uniquely named set of learnable tensors.
template <class T>
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T>& add(std::string name, Tensor<T> value) {
    if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter: " + name);
    value.set_requires_grad(true);
    entries_.emplace_back(std::move(name), std::move(value));
    return entries_.back().second;
  }

  const Tensor<T>& at(std::string_view name) const {
    const Tensor<T>* t = find(name);
    if (t == nullptr) throw std::out_of_range("no parameter named " + std::string(name));
    return *t;
  }

  Tensor<T>& at(std::string_view name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Total number of learnable scalars.
  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  /// Deep copy with fresh leaves.
  ParamStore clone() const { return cast<T>(); }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : entries_) out.add(name, lshift::cast<U>(t));
    return out;
  }

  /// Overwrites values in place from a store with identical names and shapes.
  template <class U>
  void assign_from(const ParamStore<U>& other) {
    if (other.size() != entries_.size())
      throw std::invalid_argument("parameter sets differ in size");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& [name, t] = entries_[i];
      const auto& [oname, ot] = other.entries()[i];
      if (name != oname || t.shape() != ot.shape())
        throw std::invalid_argument("parameter mismatch at " + name);
      auto dst = t.mutable_data();
      const auto src = ot.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src[j]);
    }
  }

 private:
  const Tensor<T>* find(std::string_view name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }

  std::vector<Entry> entries_;
};

}  // namespace lshift
