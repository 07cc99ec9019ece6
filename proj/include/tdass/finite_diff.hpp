#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "tdass/errors.hpp"
#include "tdass/parameters.hpp"

namespace tdass {

/// Central-difference gradient (f(p + h e) - f(p - h e)) / 2h for every scalar entry of every parameter.
inline GradientMap finite_diff_grad(const std::function<double(const ParameterStore&)>& f,
                                    const ParameterStore& params, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step h must be positive");
  ParameterStore work = params;
  GradientMap out;
  for (const auto& name : params.names()) {
    Tensor& p = work.value(name);
    Tensor g(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = f(work);
      p[i] = orig - h;
      const double down = f(work);
      p[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff_grad: non-finite objective while perturbing '" + name + "'");
      }
      g[i] = (up - down) / (2.0 * h);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

/// max over entries of |a - b| / (|b| + 1e-8), with b taken as the reference.
inline double max_relative_error(const GradientMap& a, const GradientMap& reference) {
  double worst = 0.0;
  for (const auto& [name, ref] : reference) {
    auto it = a.find(name);
    if (it == a.end()) throw ContractError("gradient map missing '" + name + "'");
    if (it->second.shape() != ref.shape()) throw DimensionError("gradient shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst = std::max(worst, std::abs(it->second[i] - ref[i]) / (std::abs(ref[i]) + 1e-8));
    }
  }
  return worst;
}

inline constexpr double kTensorErrorFloor = 1e-6;

/// Worst over parameter tensors of ||a - b|| / max(||b||, floor). Used for whole-model checks,
/// where single entries of ~1e-8 sit at the central-difference noise floor (~1e-11 absolute) and
/// some tensors have an exactly zero gradient (a key bias shifts every attention score equally).
inline double max_tensor_relative_error(const GradientMap& a, const GradientMap& reference,
                                        double floor = kTensorErrorFloor) {
  double worst = 0.0;
  for (const auto& [name, ref] : reference) {
    auto it = a.find(name);
    if (it == a.end()) throw ContractError("gradient map missing '" + name + "'");
    if (it->second.shape() != ref.shape()) throw DimensionError("gradient shape mismatch for '" + name + "'");
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double d = it->second[i] - ref[i];
      diff += d * d;
      norm += ref[i] * ref[i];
    }
    worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), floor));
  }
  return worst;
}

inline double max_abs_error(const GradientMap& a, const GradientMap& b) {
  double worst = 0.0;
  for (const auto& [name, t] : b) {
    auto it = a.find(name);
    if (it == a.end()) throw ContractError("gradient map missing '" + name + "'");
    worst = std::max(worst, max_abs_diff(it->second, t));
  }
  return worst;
}

}  // namespace tdass
