#pragma once

// Named parameter registry plus the SGD-with-momentum optimizer used for
// every trainable module. Registration order is stable, which keeps
// checkpoints and update sweeps deterministic.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "facegcd/autograd.hpp"
#include "facegcd/common.hpp"

namespace facegcd {

class ParamStore {
 public:
  ag::Var add(const std::string& name, Tensor value, bool trainable) {
    if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
    ag::Var v = ag::Var::leaf(std::move(value), trainable);
    index_[name] = vars_.size();
    names_.push_back(name);
    vars_.push_back(v);
    return v;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  ag::Var get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return vars_[it->second];
  }

  void set_trainable(const std::string& name, bool trainable) {
    get(name).node()->requires_grad = trainable;
  }

  size_t size() const { return vars_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  ag::Var at(size_t i) const { return vars_[i]; }
  const std::string& name_at(size_t i) const { return names_[i]; }

  void zero_grad() {
    for (auto& v : vars_) v.zero_grad();
  }

  std::int64_t numel(bool trainable_only = false) const {
    std::int64_t total = 0;
    for (const auto& v : vars_)
      if (!trainable_only || v.requires_grad()) total += v.val().numel();
    return total;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i].requires_grad()) out.push_back(names_[i]);
    return out;
  }

  float grad_max_abs() const {
    float mx = 0.0f;
    for (const auto& v : vars_)
      if (v.requires_grad() && !v.grad().empty()) mx = std::max(mx, v.grad().max_abs());
    return mx;
  }

  bool values_finite() const {
    for (const auto& v : vars_)
      if (!v.val().all_finite()) return false;
    return true;
  }

 private:
  std::map<std::string, size_t> index_;
  std::vector<std::string> names_;
  std::vector<ag::Var> vars_;
};

// v <- mu * v + (g + wd * p); p <- p - lr * v
class SgdMomentum {
 public:
  SgdMomentum(float momentum, float weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamStore& params, float lr) {
    if (velocity_.empty()) velocity_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      ag::Var v = params.at(i);
      if (!v.requires_grad() || v.grad().empty()) continue;
      Tensor& vel = velocity_[i];
      if (vel.empty()) vel = Tensor::zeros(v.val().shape());
      Tensor& p = v.val();
      const Tensor& g = v.grad();
      for (std::int64_t k = 0; k < p.numel(); ++k) {
        float upd = g[k] + weight_decay_ * p[k];
        vel[k] = momentum_ * vel[k] + upd;
        p[k] -= lr * vel[k];
      }
    }
  }

  void reset() { velocity_.clear(); }

 private:
  float momentum_;
  float weight_decay_;
  std::vector<Tensor> velocity_;
};

}  // namespace facegcd
