#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "wplus/ad/var.hpp"
#include "wplus/tensor_archive.hpp"

namespace wplus::nn {

/// Ordered, named collection of trainable leaves.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    ad::Var<T> var;
  };

  ad::Var<T> add(std::string name, ad::Shape shape, ad::Array<T> value) {
    auto v = ad::Var<T>::parameter(shape, std::move(value));
    entries_.push_back({std::move(name), v});
    return v;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t count() const { return entries_.size(); }

  long long scalar_count() const {
    long long n = 0;
    for (const auto& e : entries_) n += e.var.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  void set_requires_grad(bool on) {
    for (auto& e : entries_) e.var.set_requires_grad(on);
  }

  /// Copies values from a store with identical names and sizes (any scalar type).
  template <typename U>
  void copy_from(const ParameterStore<U>& other) {
    if (other.count() != count()) throw ValidationError("parameter stores differ in layout");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& src = other.entries()[i];
      if (src.name != entries_[i].name || src.var.size() != entries_[i].var.size())
        throw ValidationError("parameter mismatch at " + entries_[i].name);
      entries_[i].var.value() = src.var.value().template cast<T>();
    }
  }

  TensorArchive to_archive(const std::string& prefix = "") const {
    TensorArchive ar;
    for (const auto& e : entries_) {
      const auto& s = e.var.shape();
      ar.put(prefix + e.name, {s.c, s.h, s.w}, e.var.value().template cast<float>());
    }
    return ar;
  }

  void load_archive(const TensorArchive& ar, const std::string& prefix = "") {
    for (auto& e : entries_) {
      const auto& t = ar.get(prefix + e.name);
      if (t.values.size() != e.var.size())
        throw FormatError("tensor " + prefix + e.name + " has " + std::to_string(t.values.size()) +
                          " values, expected " + std::to_string(e.var.size()));
      e.var.value() = t.values.template cast<T>();
    }
  }

 private:
  std::vector<Entry> entries_;
};

/// Kaiming-uniform style initial values with the given fan-in.
template <typename T>
ad::Array<T> uniform_init(Eigen::Index n, double fan_in, std::mt19937_64& rng, double gain = 1.0) {
  const double bound = gain * std::sqrt(1.0 / std::max(1.0, fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Array<T> out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = T(dist(rng));
  return out;
}

template <typename T>
ad::Array<T> normal_init(Eigen::Index n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  ad::Array<T> out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = T(dist(rng));
  return out;
}

}  // namespace wplus::nn
