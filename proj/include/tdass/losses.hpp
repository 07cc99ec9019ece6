#pragma once

#include <cmath>
#include <span>

#include "tdass/autodiff.hpp"
#include "tdass/errors.hpp"
#include "tdass/layers.hpp"

namespace tdass {

inline constexpr double kProbabilityFloor = 1e-12;

/// Scalar values of one step's objectives.
struct LossBreakdown {
  double l_gls = 0.0;
  double l_target = 0.0;
  double l_non_target = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  double k = 0.0;
};

/// Mean squared error over all frames and mel bins.
inline Var loss_gls(const Var& mel_pred, const Tensor& mel_gt) {
  if (mel_pred.shape() != mel_gt.shape()) {
    throw DimensionError("loss_gls: prediction " + shape_str(mel_pred.shape()) + " vs ground truth " +
                         shape_str(mel_gt.shape()));
  }
  Tape& tape = *mel_pred.tape();
  Var diff = sub(mel_pred, tape.constant(mel_gt));
  return scale(sum(square(diff)), 1.0 / static_cast<double>(mel_gt.size()));
}

/// Per-utterance MSE averaged over a batch.
inline Var loss_gls_batch(std::span<const Var> preds, std::span<const Tensor* const> targets) {
  if (preds.empty() || preds.size() != targets.size()) throw ContractError("loss_gls_batch: batch size mismatch");
  std::vector<Var> terms;
  terms.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) terms.push_back(reshape(loss_gls(preds[i], *targets[i]), {1}));
  return scale(sum(concat(terms, 0)), 1.0 / static_cast<double>(preds.size()));
}

struct ClassifierLosses {
  Var target;      // mean of -log P1 over label-1 rows, 0 if none
  Var non_target;  // mean of -log P0 over label-0 rows, 0 if none
};

/// Cross entropy split by label subset; the indicator zeroes the other subset.
inline ClassifierLosses loss_cls(const Var& probs, const SpeakerLabelBatch& labels) {
  labels.validate();
  const Shape& s = probs.shape();
  if (s.size() != 2 || s[1] != 2 || s[0] != labels.size()) {
    throw DimensionError("loss_cls: probabilities " + shape_str(s) + " for " + std::to_string(labels.size()) +
                         " labels");
  }
  Tape& tape = *probs.tape();
  const std::size_t n = labels.size();
  const std::size_t n_target = labels.count(1);
  const std::size_t n_non_target = n - n_target;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs.value().at(i, static_cast<std::size_t>(labels.labels[i]));
    if (p <= kProbabilityFloor) warn("loss_cls: true-class probability " + std::to_string(p) + " clamped to 1e-12");
  }
  Var log_p = log(clamp_min(probs, kProbabilityFloor));
  Tensor target_mask({n, 2}), non_target_mask({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels.labels[i] == 1) {
      target_mask.at(i, 1) = -1.0 / static_cast<double>(n_target);
    } else {
      non_target_mask.at(i, 0) = -1.0 / static_cast<double>(n_non_target);
    }
  }
  return {sum(mul(log_p, tape.constant(std::move(target_mask)))),
          sum(mul(log_p, tape.constant(std::move(non_target_mask))))};
}

/// l_gls + l_target + l_non_target. The -lambda on the non-target term reaches theta_P through
/// the conditional GRL in the backward pass, so the classifier itself still minimizes plain CE.
inline Var total_loss(const Var& l_gls, const ClassifierLosses& cls) {
  return add(add(l_gls, cls.target), cls.non_target);
}

/// Reversal strength 2 / (1 + exp(-10 k)) - 1 for training progress k in [0, 1].
inline double lambda_schedule(double k) {
  if (!(k >= 0.0 && k <= 1.0)) {
    warn("lambda_schedule: progress " + std::to_string(k) + " clamped to [0,1]");
    k = std::isnan(k) ? 0.0 : std::clamp(k, 0.0, 1.0);
  }
  return 2.0 / (1.0 + std::exp(-10.0 * k)) - 1.0;
}

}  // namespace tdass
