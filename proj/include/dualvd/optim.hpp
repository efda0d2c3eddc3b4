#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>

#include "dualvd/params.hpp"

namespace dualvd {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  AdamConfig config;
};

// One bias-corrected Adam update. Parameters missing from `grads` are treated
// as having zero gradient (their moments still decay).
inline void adam_step(ParamStore& params, const ParamStore& grads, OptimizerState& state, double lr) {
  if (!(lr > 0.0)) throw DomainError("adam_step: learning rate must be positive");
  for (const auto& [name, g] : grads.entries())
    if (!params.contains(name) || params.at(name).shape() != g.shape())
      throw DimensionError("adam_step: gradient '" + name + "' does not match a parameter");

  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  for (const auto& [name, p0] : params.entries()) {
    Tensor& p = params.at(name);
    auto [mit, fresh_m] = state.m.try_emplace(name, Tensor(p.shape()));
    auto [vit, fresh_v] = state.v.try_emplace(name, Tensor(p.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (m.shape() != p.shape() || v.shape() != p.shape())
      throw DimensionError("adam_step: moment buffers for '" + name + "' have the wrong shape");
    const Tensor* g = grads.contains(name) ? &grads.at(name) : nullptr;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

// Linear warm-up followed by cosine annealing, one value per epoch.
struct LrSchedule {
  double eta_max = 1e-3;
  double eta_min = 3.4e-4;
  int warmup_epochs = 2;
  double warmup_factor = 0.2;
  int total_epochs = 16;
};

// Cosine phase as a function of t ∈ [0, total−warmup]; continuous in t so the
// endpoint (eta_min) is reachable.
inline double annealed_lr(double t, const LrSchedule& s) {
  const double span = static_cast<double>(s.total_epochs - s.warmup_epochs);
  if (span <= 0.0 || t < 0.0 || t > span)
    throw DomainError("annealed_lr: t outside the cosine phase");
  return s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + std::cos(std::numbers::pi * t / span));
}

inline double lr_at(int epoch, const LrSchedule& s) {
  if (epoch < 0 || epoch >= s.total_epochs)
    throw DomainError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(s.total_epochs) + ")");
  if (epoch < s.warmup_epochs) {
    const double frac = static_cast<double>(epoch) / static_cast<double>(s.warmup_epochs);
    return s.eta_max * (s.warmup_factor + (1.0 - s.warmup_factor) * frac);
  }
  return annealed_lr(static_cast<double>(epoch - s.warmup_epochs), s);
}

}  // namespace dualvd
