#pragma once

#include <algorithm>
#include <cmath>

#include "crossview/nn/param_store.hpp"

namespace crossview::nn {

// lr0 * (1 - step/total_steps), floored at 0.
inline double lr_schedule(int64_t step, double lr0, int64_t total_steps) {
  CV_REQUIRE(total_steps > 0 && step >= 0, "lr_schedule: bad arguments");
  double f = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * std::max(0.0, f);
}

// Scales trainable gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <class T>
double clip_grad_norm(GradBuffer<T>& grads, const std::set<std::string>& trainable,
                      double max_norm) {
  double norm = std::sqrt(grads.squared_norm(trainable));
  if (max_norm > 0 && norm > max_norm)
    grads.scale_partitions(trainable, static_cast<T>(max_norm / norm));
  return norm;
}

template <class T>
struct RmsPropState {
  GradBuffer<T> v;

  static RmsPropState zeros_like(const ParamStore<T>& store) {
    return RmsPropState{GradBuffer<T>::zeros_like(store)};
  }
};

// v <- decay*v + (1-decay)*g^2 ; p <- p - lr*g/(sqrt(v)+eps).
// Touches only trainable partitions; everything else stays bit-identical.
template <class T>
void rmsprop_step(ParamStore<T>& store, const GradBuffer<T>& grads, RmsPropState<T>& state,
                  double lr, double decay, double eps) {
  CV_REQUIRE(lr >= 0, "rmsprop: negative learning rate");
  for (const auto& name : store.trainable) {
    auto git = grads.parts.find(name);
    auto vit = state.v.parts.find(name);
    CV_REQUIRE(git != grads.parts.end() && vit != state.v.parts.end(),
               "rmsprop: missing buffers for partition '" + name + "'");
    auto& tensors = store.partition(name);
    for (size_t i = 0; i < tensors.size(); ++i) {
      Tensor<T>& p = tensors[i].value;
      const Tensor<T>& g = git->second[i];
      Tensor<T>& v = vit->second[i];
      for (int k = 0; k < p.numel(); ++k) {
        double gv = static_cast<double>(g[k]);
        double nv = decay * static_cast<double>(v[k]) + (1.0 - decay) * gv * gv;
        v[k] = static_cast<T>(nv);
        p[k] = static_cast<T>(static_cast<double>(p[k]) - lr * gv / (std::sqrt(nv) + eps));
      }
    }
  }
}

}  // namespace crossview::nn
