#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmrl/ad/graph.hpp"
#include "gmrl/util/random.hpp"

namespace gmrl::ad {

// Named trainable arrays plus adaptive-moment optimizer state.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<T> param;
    Tensor<T> first_moment;
    Tensor<T> second_moment;
  };

  Var<T> add(const std::string& name, Tensor<T> init) {
    if (index_.count(name) != 0) {
      throw std::invalid_argument("ParamStore: duplicate parameter '" + name +
                                  "'");
    }
    const std::size_t r = init.rows(), c = init.cols();
    index_[name] = entries_.size();
    entries_.push_back(
        {name, Var<T>::parameter(std::move(init)), Tensor<T>(r, c), Tensor<T>(r, c)});
    return entries_.back().param;
  }

  // Glorot-uniform initialisation scaled by `gain`.
  Var<T> add_uniform(const std::string& name, std::size_t rows,
                     std::size_t cols, double gain, Rng& rng) {
    Tensor<T> init(rows, cols);
    const double bound = gain * std::sqrt(6.0 / double(rows + cols));
    for (std::size_t i = 0; i < init.size(); ++i) {
      init[i] = T(rng.uniform(-bound, bound));
    }
    return add(name, std::move(init));
  }

  bool contains(const std::string& name) const {
    return index_.count(name) != 0;
  }
  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
    }
    return entries_[it->second].param;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grad() {
    for (auto& e : entries_) e.param.zero_grad();
  }

  std::size_t parameter_count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.name.rfind(prefix, 0) == 0) n += e.param.value().size();
    }
    return n;
  }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }
  std::int64_t skipped_updates() const { return skipped_; }
  void note_skipped() { ++skipped_; }
  void advance_step() { ++step_; }

  // Copies values (not optimizer state) from another store with the same
  // layout, converting the scalar type.
  template <typename U>
  void copy_values_from(const ParamStore<U>& other) {
    for (const auto& e : other.entries()) {
      auto it = index_.find(e.name);
      if (it == index_.end()) {
        throw std::out_of_range("ParamStore: unknown parameter '" + e.name + "'");
      }
      auto& dst = entries_[it->second].param.mutable_value();
      if (!(dst.rows() == e.param.value().rows() &&
            dst.cols() == e.param.value().cols())) {
        throw std::invalid_argument("ParamStore: shape mismatch for '" + e.name + "'");
      }
      dst = e.param.value().template cast<T>();
    }
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
  std::int64_t skipped_ = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Learning rate decaying linearly from `initial` to zero over
// `total_updates` optimizer steps.
struct LinearDecay {
  double initial = 1e-4;
  std::int64_t total_updates = 1;

  double at(std::int64_t update) const {
    if (total_updates <= 0) return 0.0;
    const double frac = 1.0 - double(update) / double(total_updates);
    return initial * std::max(0.0, frac);
  }
};

using ParamFilter = std::function<bool(const std::string&)>;

template <typename T>
bool gradients_finite(const ParamStore<T>& store, const ParamFilter& trainable = {}) {
  for (const auto& e : store.entries()) {
    if (trainable && !trainable(e.name)) continue;
    for (T g : e.param.grad().values()) {
      if (!std::isfinite(double(g))) return false;
    }
  }
  return true;
}

// Rescales gradients so their global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& store, double max_norm,
                      const ParamFilter& trainable = {}) {
  double sq = 0.0;
  for (const auto& e : store.entries()) {
    if (trainable && !trainable(e.name)) continue;
    for (T g : e.param.grad().values()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = T(max_norm / (norm + 1e-12));
    for (auto& e : store.entries()) {
      if (trainable && !trainable(e.name)) continue;
      for (T& g : e.param.mutable_grad().values()) g *= factor;
    }
  }
  return norm;
}

// One bias-corrected adaptive-moment update using the gradients currently
// accumulated in the store. Non-finite gradients skip the update and are
// counted; returns whether the update was applied.
template <typename T>
bool adam_step(ParamStore<T>& store, double lr, const AdamConfig& cfg = {},
               const ParamFilter& trainable = {}) {
  if (!gradients_finite(store, trainable)) {
    store.note_skipped();
    std::cerr << "adam_step: non-finite gradient, update skipped (total "
              << store.skipped_updates() << ")\n";
    return false;
  }
  store.advance_step();
  const double t = double(store.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : store.entries()) {
    if (trainable && !trainable(e.name)) continue;
    auto& value = e.param.mutable_value();
    const auto& grad = e.param.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = double(grad[i]);
      const double m = cfg.beta1 * double(e.first_moment[i]) + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * double(e.second_moment[i]) + (1.0 - cfg.beta2) * g * g;
      e.first_moment[i] = T(m);
      e.second_moment[i] = T(v);
      const double update = lr * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon);
      value[i] = T(double(value[i]) - update);
    }
  }
  return true;
}

}  // namespace gmrl::ad
