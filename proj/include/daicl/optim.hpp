#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "daicl/nn/params.hpp"

namespace daicl::optim {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<nn::Matrix> m;
  std::vector<nn::Matrix> v;
  std::size_t step = 0;
};

AdamState init_adam(const nn::ParamStore& params);

// Decoupled AdamW over trainable parameters. `lr_scale[i]` multiplies lr for param i
// (empty = all 1). `decay[i]` selects which parameters receive weight decay (empty = all).
// Throws NonFiniteGradient without touching params or state.
void adamw_step(nn::ParamStore& params, const nn::Gradients& grads, AdamState& state, double lr,
                double weight_decay, const AdamConfig& cfg = {},
                std::span<const double> lr_scale = {}, std::span<const bool> decay = {});

// Linear warmup over ceil(warmup_frac * total) steps, then linear decay to 0.
double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_frac = 0.1);

// Scales grads so their global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_global_norm(nn::Gradients& grads, double max_norm);

}  // namespace daicl::optim
