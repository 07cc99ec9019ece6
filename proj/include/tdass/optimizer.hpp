#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "tdass/errors.hpp"
#include "tdass/parameters.hpp"

namespace tdass {

enum class OptimizerKind : std::uint8_t { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2_weight = 1e-6;

  void validate() const {
    if (!(learning_rate > 0.0) || !(epsilon > 0.0) || l2_weight < 0.0) {
      throw ConfigError("optimizer rates must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0,1)");
  }
};

/// First/second moments per parameter; moments are created lazily at zero.
struct OptimizerState {
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  std::uint64_t step = 0;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

namespace detail {
inline const Tensor& checked_grad(const GradientMap& grads, const std::string& name, const Tensor& param) {
  auto it = grads.find(name);
  if (it == grads.end()) throw ContractError("optimizer: no gradient for '" + name + "'");
  if (it->second.shape() != param.shape()) {
    throw ContractError("optimizer: gradient shape " + shape_str(it->second.shape()) + " for '" + name + "' of shape " +
                        shape_str(param.shape()));
  }
  return it->second;
}
}  // namespace detail

/// Bias-corrected Adam on every parameter named in `grads`, with the L2 term added to the gradient
/// before the moment updates.
inline void adam_step(ParameterStore& params, const GradientMap& grads, OptimizerState& state,
                      const OptimizerConfig& cfg) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, g_raw] : grads) {
    Tensor& p = params.value(name);
    const Tensor& g = detail::checked_grad(grads, name, p);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, p.shape());
    auto [v_it, v_new] = state.second_moment.try_emplace(name, p.shape());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    if (m.shape() != p.shape() || v.shape() != p.shape()) throw ContractError("optimizer: moment shape drift for '" + name + "'");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + cfg.l2_weight * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

/// theta <- theta - mu * (g + l2 * theta).
inline void sgd_step(ParameterStore& params, const GradientMap& grads, OptimizerState& state,
                     const OptimizerConfig& cfg) {
  state.step += 1;
  for (const auto& [name, g_raw] : grads) {
    Tensor& p = params.value(name);
    const Tensor& g = detail::checked_grad(grads, name, p);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.learning_rate * (g[i] + cfg.l2_weight * p[i]);
  }
}

inline void optimizer_step(ParameterStore& params, const GradientMap& grads, OptimizerState& state,
                           const OptimizerConfig& cfg) {
  if (cfg.kind == OptimizerKind::Adam) {
    adam_step(params, grads, state, cfg);
  } else {
    sgd_step(params, grads, state, cfg);
  }
}

}  // namespace tdass
