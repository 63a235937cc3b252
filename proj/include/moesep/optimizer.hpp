// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "moesep/nn.hpp"
#include "moesep/tensor.hpp"

namespace moesep::opt {

// Rescales all gradients so their global L2 norm is at most max_norm;
// returns the norm before clipping.
template <class S>
double clip_global_norm(nn::ParameterStore<S>& store, double max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : store) {
    for (int64_t i = 0; i < p.grad.numel(); ++i) {
      sq += static_cast<double>(p.grad[i]) * static_cast<double>(p.grad[i]);
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto& [name, p] : store) p.grad *= scale;
  }
  return norm;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

// Adaptive-moment update with decoupled weight decay.
template <class S>
class AdamW {
 public:
  explicit AdamW(nn::ParameterStore<S>& store, AdamWConfig cfg = {})
      : store_(&store), cfg_(cfg) {
    for (auto& [name, p] : store) {
      moments_.emplace(name,
                       std::pair<Tensor<S>, Tensor<S>>{Tensor<S>(p.value.shape()),
                                                       Tensor<S>(p.value.shape())});
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : *store_) {
      auto& [m, v] = moments_.at(name);
      for (int64_t i = 0; i < p.value.numel(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * g;
        const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * g * g;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        const double update =
            mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * static_cast<double>(p.value[i]);
        p.value[i] -= static_cast<S>(lr * update);
      }
    }
  }

  int64_t step_count() const { return t_; }

 private:
  nn::ParameterStore<S>* store_;
  AdamWConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, std::pair<Tensor<S>, Tensor<S>>> moments_;
};

// Linear warm-up to peak_lr at warmup_steps, then linear decay to zero at
// total_steps. Steps count from 1.
inline double lr_schedule(int64_t step, double peak_lr, int64_t warmup_steps,
                          int64_t total_steps) {
  if (step <= 0) return 0.0;
  if (step <= warmup_steps) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (step >= total_steps) return 0.0;
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup_steps);
}

}  // namespace moesep::opt
