#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tdass/autodiff.hpp"
#include "tdass/checkpoint.hpp"
#include "tdass/corpus.hpp"
#include "tdass/errors.hpp"
#include "tdass/losses.hpp"
#include "tdass/model.hpp"
#include "tdass/optimizer.hpp"

namespace tdass {

struct TrainConfig {
  OptimizerConfig optimizer;   // Adam(0.9, 0.999, 1e-8), lr 1e-4, L2 1e-6
  std::size_t batch_size = 24;
  std::size_t steps = 200;
  std::uint32_t seed = 42;
  int target_speaker = 2;
  std::size_t budget = 30;      // 30, 100, 300 or 500 in the reference experiments
  bool use_classifier = true;
  bool use_xvector = true;
  double target_fraction = 0.5;  // share of each fine-tune batch drawn from the target subset

  /// Desk-scale defaults: batch 8 and a larger step size so 200 steps make visible progress.
  static TrainConfig toy() {
    TrainConfig c;
    c.batch_size = 8;
    c.optimizer.learning_rate = 2e-3;
    return c;
  }

  void validate() const {
    optimizer.validate();
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (budget == 0) throw ConfigError("target utterance budget must be positive");
    if (!(target_fraction > 0.0 && target_fraction < 1.0)) throw ConfigError("target fraction must lie in (0, 1)");
  }
};

struct StepRecord {
  std::size_t step = 0;
  LossBreakdown loss;
  double l_gls_target = 0.0;  // reconstruction loss over the batch's target rows (0 if none)
};

enum class Provenance : std::uint8_t { Restored, FreshInit };

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> trace;
  std::vector<std::string> target_utterances;        // fine-tune subset, in selection order
  std::map<std::string, Provenance> provenance;      // fine-tune only
  double target_gls_before = 0.0;
  double target_gls_after = 0.0;
};

namespace detail {

/// Endless reshuffled walk over a pool; every element appears once per pass.
class PoolCycler {
 public:
  PoolCycler(std::vector<const Utterance*> pool, std::uint64_t seed) : pool_(std::move(pool)), rng_(seed) {
    if (pool_.empty()) throw ContractError("PoolCycler: empty pool");
    reshuffle();
  }

  const Utterance* next() {
    if (pos_ == order_.size()) reshuffle();
    return pool_[order_[pos_++]];
  }

 private:
  void reshuffle() {
    order_.resize(pool_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }

  std::vector<const Utterance*> pool_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

inline void check_finite_loss(double v, std::size_t step) {
  if (!std::isfinite(v)) throw NumericError("training diverged at step " + std::to_string(step));
}

}  // namespace detail

/// Mean teacher-forced reconstruction loss over `utterances`.
inline double teacher_forced_gls(const TdassModel& model, const ParameterStore& params, const Corpus& corpus,
                                 std::span<const Utterance* const> utterances, bool zero_xvector) {
  if (utterances.empty()) return 0.0;
  double total = 0.0;
  ForwardOptions opts;
  opts.with_classifier = false;
  opts.zero_xvector = zero_xvector;
  for (const Utterance* u : utterances) {
    Tape tape;
    ModelSample s{u, &corpus.xvector(u->speaker), 0};
    ForwardOutput out = model.forward_full(tape, params, std::span(&s, 1), 0.0, opts);
    total += loss_gls(out.mel_pred[0], u->mel).value().item();
  }
  return total / static_cast<double>(utterances.size());
}

/// Reconstruction-only training of theta_P and theta_G on `pool`; the classifier does not exist yet.
inline TrainResult pretrain_on(std::span<const Utterance* const> pool, const Corpus& corpus,
                               const ModelConfig& model_config, const TrainConfig& cfg) {
  cfg.validate();
  std::set<int> speakers;
  for (const Utterance* u : pool) {
    if (u->speaker == cfg.target_speaker) {
      throw ConfigError("target speaker " + std::to_string(cfg.target_speaker) + " found in pretraining set (" + u->id + ")");
    }
    speakers.insert(u->speaker);
    corpus.xvector(u->speaker);
  }
  if (speakers.size() < 2) throw ConfigError("pretraining needs at least 2 non-target speakers");

  const TdassModel model(model_config);
  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.config = model_config;
  ckpt.params = model.init_parameters(cfg.seed, /*with_classifier=*/false);
  ckpt.stage = Stage::Pretrain;
  ckpt.run = {cfg.target_speaker, 0, false, cfg.use_xvector, cfg.seed};

  detail::PoolCycler cycler({pool.begin(), pool.end()}, detail::mix_seed(cfg.seed, 0x707265));
  ForwardOptions opts;
  opts.with_classifier = false;
  opts.zero_xvector = !cfg.use_xvector;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<ModelSample> batch;
    std::vector<const Tensor*> targets;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const Utterance* u = cycler.next();
      batch.push_back({u, &corpus.xvector(u->speaker), 0});
      targets.push_back(&u->mel);
    }
    Tape tape;
    ForwardOutput out = model.forward_full(tape, ckpt.params, batch, 0.0, opts);
    Var l_gls = loss_gls_batch(out.mel_pred, targets);
    const double value = l_gls.value().item();
    detail::check_finite_loss(value, step);
    GradientMap grads = tape.backward(l_gls, ckpt.params);
    optimizer_step(ckpt.params, grads, ckpt.optimizer, cfg.optimizer);

    StepRecord rec;
    rec.step = step;
    rec.loss.l_gls = value;
    rec.loss.total = value;
    result.trace.push_back(rec);
  }
  ckpt.global_step = cfg.steps;
  return result;
}

/// Pretraining pool: train-split utterances of every speaker except the target.
inline TrainResult pretrain(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& cfg) {
  std::vector<const Utterance*> pool;
  for (const auto& u : corpus.utterances) {
    if (u.split == Split::Train && u.speaker != cfg.target_speaker) pool.push_back(&u);
  }
  return pretrain_on(pool, corpus, model_config, cfg);
}

/// Seeded choice of `budget` distinct target training utterances.
inline std::vector<const Utterance*> select_target_subset(const Corpus& corpus, int target, std::size_t budget,
                                                          std::uint32_t seed) {
  std::vector<const Utterance*> pool = corpus.select(target, Split::Train);
  if (pool.empty()) throw ConfigError("no training utterances for target speaker " + std::to_string(target));
  if (budget > pool.size()) {
    throw ConfigError("budget " + std::to_string(budget) + " exceeds the " + std::to_string(pool.size()) +
                      " available target utterances");
  }
  Rng rng(detail::mix_seed(seed, 0x627564));
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(budget);
  return pool;
}

/// Progress fraction of fine-tune step `step` out of `total`, running from 0 at the first step to 1 at the last.
inline double finetune_progress(std::size_t step, std::size_t total) {
  return total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 0.0;
}

/// Two-speaker-class adaptation from a pretrain checkpoint. Each batch holds target_fraction target
/// rows (at least one) and non-target rows for the rest; lambda follows the schedule over the
/// fine-tune steps; all groups are updated.
inline TrainResult finetune(const Checkpoint& pretrained, const Corpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  if (pretrained.stage != Stage::Pretrain) throw ConfigError("finetune expects a pretrain-stage checkpoint");
  const TdassModel model(pretrained.config);
  if (corpus.n_mels != model.config().n_mels || corpus.xvector_dim != model.config().xvector_dim ||
      corpus.n_phonemes > model.config().n_phonemes) {
    throw ConfigError("corpus dimensions do not match the checkpoint's model config");
  }

  TrainResult result;
  const auto subset = select_target_subset(corpus, cfg.target_speaker, cfg.budget, cfg.seed);
  for (const Utterance* u : subset) result.target_utterances.push_back(u->id);
  std::vector<const Utterance*> others;
  for (const auto& u : corpus.utterances) {
    if (u.split == Split::Train && u.speaker != cfg.target_speaker) others.push_back(&u);
  }
  if (others.empty()) throw ConfigError("fine-tuning needs non-target utterances");
  for (const Utterance* u : subset) corpus.xvector(u->speaker);
  for (const Utterance* u : others) corpus.xvector(u->speaker);

  Checkpoint& ckpt = result.checkpoint;
  ckpt.config = pretrained.config;
  ckpt.params = pretrained.params;
  ckpt.params.erase_group(Group::C);
  for (const auto& name : ckpt.params.names()) result.provenance[name] = Provenance::Restored;
  if (cfg.use_classifier) {
    model.init_classifier(ckpt.params, cfg.seed);
    for (const auto& name : ckpt.params.names(Group::C)) result.provenance[name] = Provenance::FreshInit;
  }
  ckpt.stage = Stage::Finetune;
  ckpt.run = {cfg.target_speaker, static_cast<std::uint32_t>(cfg.budget), cfg.use_classifier, cfg.use_xvector, cfg.seed};

  result.target_gls_before = teacher_forced_gls(model, ckpt.params, corpus, subset, !cfg.use_xvector);

  const std::size_t n_target = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(cfg.target_fraction * static_cast<double>(cfg.batch_size))), 1,
      std::max<std::size_t>(1, cfg.batch_size - 1));
  const std::size_t n_other = cfg.batch_size > n_target ? cfg.batch_size - n_target : 0;
  detail::PoolCycler target_cycle(subset, detail::mix_seed(cfg.seed, 0x746774));
  detail::PoolCycler other_cycle(others, detail::mix_seed(cfg.seed, 0x6f7468));
  ForwardOptions opts;
  opts.with_classifier = cfg.use_classifier;
  opts.zero_xvector = !cfg.use_xvector;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double k = finetune_progress(step, cfg.steps);
    const double lambda = lambda_schedule(k);
    std::vector<ModelSample> batch;
    std::vector<const Tensor*> targets;
    for (std::size_t i = 0; i < n_target; ++i) {
      const Utterance* u = target_cycle.next();
      batch.push_back({u, &corpus.xvector(u->speaker), 1});
      targets.push_back(&u->mel);
    }
    for (std::size_t i = 0; i < n_other; ++i) {
      const Utterance* u = other_cycle.next();
      batch.push_back({u, &corpus.xvector(u->speaker), 0});
      targets.push_back(&u->mel);
    }

    Tape tape;
    ForwardOutput out = model.forward_full(tape, ckpt.params, batch, lambda, opts);
    Var l_gls = loss_gls_batch(out.mel_pred, targets);
    StepRecord rec;
    rec.step = step;
    rec.loss.k = k;
    rec.loss.lambda = lambda;
    rec.loss.l_gls = l_gls.value().item();
    double target_sum = 0.0;
    for (std::size_t i = 0; i < n_target; ++i) target_sum += loss_gls(out.mel_pred[i], *targets[i]).value().item();
    rec.l_gls_target = target_sum / static_cast<double>(n_target);

    Var total = l_gls;
    if (cfg.use_classifier) {
      ClassifierLosses cls = loss_cls(*out.probs, out.labels);
      rec.loss.l_target = cls.target.value().item();
      rec.loss.l_non_target = cls.non_target.value().item();
      total = total_loss(l_gls, cls);
    }
    rec.loss.total = total.value().item();
    detail::check_finite_loss(rec.loss.total, step);
    GradientMap grads = tape.backward(total, ckpt.params);
    optimizer_step(ckpt.params, grads, ckpt.optimizer, cfg.optimizer);
    result.trace.push_back(rec);
  }
  ckpt.global_step = pretrained.global_step + cfg.steps;
  result.target_gls_after = teacher_forced_gls(model, ckpt.params, corpus, subset, !cfg.use_xvector);
  return result;
}

inline std::string trace_csv(const std::vector<StepRecord>& trace) {
  std::string s = "step,k,lambda,l_gls,l_gls_target,l_target,l_non_target,total\n";
  for (const auto& r : trace) {
    s += std::to_string(r.step) + "," + format_double(r.loss.k) + "," + format_double(r.loss.lambda) + "," +
         format_double(r.loss.l_gls) + "," + format_double(r.l_gls_target) + "," + format_double(r.loss.l_target) +
         "," + format_double(r.loss.l_non_target) + "," + format_double(r.loss.total) + "\n";
  }
  return s;
}

}  // namespace tdass
