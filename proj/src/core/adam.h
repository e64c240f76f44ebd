#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.h"

namespace nvs {

// Adam with bias correction. Parameters join with an individual base
// learning rate; step(scale) applies base_lr * scale so one schedule can
// drive several rate groups. Parameters whose grad is empty are skipped
// for that step, state untouched.
template <class S>
class Adam {
 public:
  explicit Adam(S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add_param(const std::string& name, TensorT<S> p, S base_lr) {
    if (!p.requires_grad()) {
      throw ContractError("optimizer param '" + name +
                          "' does not require grad");
    }
    Slot s;
    s.name = name;
    s.param = std::move(p);
    s.base_lr = base_lr;
    s.m.assign(s.param.size(), S(0));
    s.v.assign(s.param.size(), S(0));
    slots_.push_back(std::move(s));
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.clear_grad();
  }

  // Global L2 norm over every accumulated grad; grads are scaled in place
  // when the norm exceeds max_norm. Returns the pre-clip norm.
  double clip_global_norm(double max_norm) {
    double sq = 0.0;
    for (auto& s : slots_) {
      if (!s.param.has_grad()) continue;
      for (S g : s.param.grad()) sq += double(g) * double(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
      const S scale = static_cast<S>(max_norm / norm);
      for (auto& s : slots_) {
        if (!s.param.has_grad()) continue;
        for (S& g : s.param.grad_mutable()) g *= scale;
      }
    }
    return norm;
  }

  void step(S lr_scale) {
    ++t_;
    const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
    const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
    for (auto& s : slots_) {
      if (!s.param.has_grad()) continue;
      const S lr = s.base_lr * lr_scale;
      const std::vector<S>& g = s.param.grad();
      S* p = s.param.data();
      const int64_t n = s.param.size();
      for (int64_t i = 0; i < n; ++i) {
        s.m[i] = beta1_ * s.m[i] + (S(1) - beta1_) * g[i];
        s.v[i] = beta2_ * s.v[i] + (S(1) - beta2_) * g[i] * g[i];
        const S mhat = s.m[i] / bc1;
        const S vhat = s.v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  int64_t t() const { return t_; }
  void set_t(int64_t t) { t_ = t; }

  size_t num_params() const { return slots_.size(); }
  const std::string& name(size_t i) const { return slots_[i].name; }
  const TensorT<S>& param(size_t i) const { return slots_[i].param; }
  std::vector<S>& m_state(size_t i) { return slots_[i].m; }
  std::vector<S>& v_state(size_t i) { return slots_[i].v; }

 private:
  struct Slot {
    std::string name;
    TensorT<S> param;
    S base_lr = 0;
    std::vector<S> m, v;
  };
  std::vector<Slot> slots_;
  S beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace nvs
