#include "daicl/optim.hpp"

#include <cmath>

#include "daicl/common.hpp"

namespace daicl::optim {

AdamState init_adam(const nn::ParamStore& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.push_back(nn::Matrix::Zero(p.value.rows(), p.value.cols()));
    s.v.push_back(nn::Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  return s;
}

void adamw_step(nn::ParamStore& params, const nn::Gradients& grads, AdamState& state, double lr,
                double weight_decay, const AdamConfig& cfg, std::span<const double> lr_scale,
                std::span<const bool> decay) {
  if (grads.g.size() != params.size() || state.m.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable && !grads.g[i].allFinite()) {
      throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient in " + params[i].name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    const double a = lr * (lr_scale.empty() ? 1.0 : lr_scale[i]);
    const auto& g = grads.g[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    if (weight_decay != 0.0 && (decay.empty() || decay[i])) p.value *= (1.0 - a * weight_decay);
    p.value.array() -= a * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
}

double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_frac) {
  if (total_steps == 0) return 0.0;
  const auto warm = static_cast<std::size_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
  if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (step >= total_steps) return 0.0;
  return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warm);
}

double clip_global_norm(nn::Gradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm && norm > 0.0) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace daicl::optim
