// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iatn/error.hpp"
#include "iatn/ndgrad/graph.hpp"
#include "iatn/ndgrad/rng.hpp"
#include "iatn/ndgrad/tensor.hpp"

namespace iatn::nd {

/// Named, ordered collection of parameter nodes.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor value) {
    if (index_.contains(name)) throw Error("duplicate parameter name '" + name + "'");
    Var p = parameter(name, std::move(value));
    index_.emplace(name, params_.size());
    params_.push_back(p);
    return p;
  }

  const Var& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return params_[it->second];
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  const std::vector<Var>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::map<std::string, Tensor> snapshot() const {
    std::map<std::string, Tensor> out;
    for (const Var& p : params_) out.emplace(p->name(), p->value());
    return out;
  }

  void restore(const std::map<std::string, Tensor>& values) {
    for (const auto& [name, value] : values) {
      Tensor& dst = get(name)->mutable_value();
      if (dst.shape() != value.shape()) {
        throw ShapeError("restore '" + name + "': " + shape_str(dst.shape()) + " vs " +
                         shape_str(value.shape()));
      }
      dst = value;
    }
  }

 private:
  std::vector<Var> params_;
  std::map<std::string, std::size_t> index_;
};

inline Tensor init_normal(const Shape& shape, Rng& rng, double mean = 0.0,
                          double stddev = 0.05) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal(mean, stddev);
  return t;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// One bias-corrected ADAM update. Parameters absent from `grads` are treated
/// as having zero gradient.
inline void adam_step(ParamStore& params, const Gradients& grads, AdamState& state,
                      double lr, const AdamConfig& cfg = {}) {
  if (!(lr >= 0.0)) throw Error("adam_step: learning rate must be non-negative");
  for (const auto& [name, g] : grads) {
    const Tensor& p = params.get(name)->value();
    if (p.shape() != g.shape()) {
      throw ShapeError("adam_step '" + name + "': gradient " + shape_str(g.shape()) +
                       " vs parameter " + shape_str(p.shape()));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (const Var& param : params.all()) {
    Tensor& value = param->mutable_value();
    auto [mi, _m] = state.m.try_emplace(param->name(), value.shape(), 0.0);
    auto [vi, _v] = state.v.try_emplace(param->name(), value.shape(), 0.0);
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    auto git = grads.find(param->name());
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

inline double global_norm(const Gradients& grads) {
  double total = 0.0;
  for (const auto& [_, g] : grads) total += squared_norm(g);
  return std::sqrt(total);
}

/// Rescales every gradient by threshold / norm when the global L2 norm
/// exceeds `threshold`. Returns the norm before clipping.
inline double clip_by_global_norm(Gradients& grads, double threshold) {
  if (!(threshold > 0.0)) throw Error("clip_by_global_norm: threshold must be positive");
  const double norm = global_norm(grads);
  if (norm > threshold) {
    const double factor = threshold / norm;
    for (auto& [_, g] : grads)
      for (double& v : g.data()) v *= factor;
  }
  return norm;
}

inline void accumulate(Gradients& into, const Gradients& from) {
  for (const auto& [name, g] : from) {
    auto [it, inserted] = into.try_emplace(name, g);
    if (!inserted) it->second += g;
  }
}

}  // namespace iatn::nd
