#pragma once

// Central-difference checks of every primitive and of the whole model. Used by the
// `gradcheck` CLI subcommand and the acceptance suite.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tdass/autodiff.hpp"
#include "tdass/finite_diff.hpp"
#include "tdass/layers.hpp"
#include "tdass/losses.hpp"
#include "tdass/model.hpp"
#include "tdass/optimizer.hpp"

namespace tdass {

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;

struct GradcheckEntry {
  std::string name;
  std::size_t cases = 0;
  double max_rel_error = 0.0;      // the gated figure: elementwise for primitives, per tensor for the model
  double max_entry_error = 0.0;    // elementwise |a - b| / (|b| + 1e-8), reported for every check
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed(double tol = kGradcheckTolerance) const { return max_rel_error() < tol; }
};

/// Builds a scalar loss from parameters bound on `tape`.
using LossBuilder = std::function<Var(Tape&, const ParameterStore&)>;

struct GradientComparison {
  double entry = 0.0;   // max_relative_error
  double tensor = 0.0;  // max_tensor_relative_error
};

inline GradientComparison compare_gradients(const GradientMap& analytic, const GradientMap& numeric) {
  return {max_relative_error(analytic, numeric), max_tensor_relative_error(analytic, numeric)};
}

/// Tape gradients vs central differences of the same builder.
inline GradientComparison check_builder(const LossBuilder& build, const ParameterStore& params,
                                        double h = kGradcheckStep) {
  Tape tape;
  Var loss = build(tape, params);
  const GradientMap analytic = tape.backward(loss, params);
  const GradientMap numeric = finite_diff_grad(
      [&](const ParameterStore& p) {
        Tape t;
        return build(t, p).value().item();
      },
      params, h);
  return compare_gradients(analytic, numeric);
}

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

/// Values with magnitude in [0.2, 1.2] and random sign, keeping kinks out of the difference stencil.
inline Tensor away_from_zero(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.2);
  std::bernoulli_distribution sign(0.5);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

/// sum(out * W) with a fixed random W, so every output entry carries a distinct weight.
inline Var weighted_sum(Tape& tape, const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, tape.constant(random_tensor(out.shape(), rng))));
}

struct PrimitiveCase {
  std::string name;
  std::function<ParameterStore(Rng&)> inputs;
  std::function<Var(Tape&, const ParameterStore&)> apply;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  auto P = [](Tape& t, const ParameterStore& s, const char* n) { return t.parameter(s, n); };
  auto one = [](Shape shape, bool signed_away = false, double lo = -1.0, double hi = 1.0) {
    return [=](Rng& rng) {
      ParameterStore s;
      s.add("x", Group::P, signed_away ? away_from_zero(shape, rng) : random_tensor(shape, rng, lo, hi));
      return s;
    };
  };
  auto two = [](Shape a, Shape b) {
    return [=](Rng& rng) {
      ParameterStore s;
      s.add("x", Group::P, random_tensor(a, rng));
      s.add("y", Group::P, random_tensor(b, rng));
      return s;
    };
  };
  std::vector<PrimitiveCase> c;
  c.push_back({"matmul", two({3, 4}, {4, 2}), [=](Tape& t, const ParameterStore& s) { return matmul(P(t, s, "x"), P(t, s, "y")); }});
  c.push_back({"matmul-transposed", two({3, 4}, {5, 4}),
               [=](Tape& t, const ParameterStore& s) { return matmul(P(t, s, "x"), P(t, s, "y"), true); }});
  c.push_back({"add", two({3, 4}, {3, 4}), [=](Tape& t, const ParameterStore& s) { return add(P(t, s, "x"), P(t, s, "y")); }});
  c.push_back({"add-bias", two({3, 4}, {4}), [=](Tape& t, const ParameterStore& s) { return add(P(t, s, "x"), P(t, s, "y")); }});
  c.push_back({"sub", two({2, 5}, {2, 5}), [=](Tape& t, const ParameterStore& s) { return sub(P(t, s, "x"), P(t, s, "y")); }});
  c.push_back({"elementwise-mul", two({3, 3}, {3, 3}),
               [=](Tape& t, const ParameterStore& s) { return mul(P(t, s, "x"), P(t, s, "y")); }});
  c.push_back({"scale", one({4, 2}), [=](Tape& t, const ParameterStore& s) { return scale(P(t, s, "x"), -1.7); }});
  c.push_back({"concat-last-axis", two({3, 2}, {3, 4}),
               [=](Tape& t, const ParameterStore& s) { return concat_last(P(t, s, "x"), P(t, s, "y")); }});
  c.push_back({"concat-first-axis", two({2, 3}, {4, 3}), [=](Tape& t, const ParameterStore& s) {
                 const Var parts[] = {P(t, s, "x"), P(t, s, "y")};
                 return concat(parts, 0);
               }});
  c.push_back({"slice", one({4, 6}), [=](Tape& t, const ParameterStore& s) { return slice(P(t, s, "x"), 1, 2, 5); }});
  c.push_back({"reshape", one({2, 6}), [=](Tape& t, const ParameterStore& s) { return reshape(P(t, s, "x"), {3, 2, 2}); }});
  c.push_back({"gather-rows", one({5, 3}), [=](Tape& t, const ParameterStore& s) {
                 const std::size_t ids[] = {4, 0, 4, 2};
                 return gather_rows(P(t, s, "x"), ids);
               }});
  c.push_back({"tanh", one({3, 4}, false, -2.0, 2.0), [=](Tape& t, const ParameterStore& s) { return tanh(P(t, s, "x")); }});
  c.push_back({"sigmoid", one({3, 4}, false, -3.0, 3.0),
               [=](Tape& t, const ParameterStore& s) { return sigmoid(P(t, s, "x")); }});
  c.push_back({"relu", one({3, 4}, true), [=](Tape& t, const ParameterStore& s) { return relu(P(t, s, "x")); }});
  c.push_back({"log", one({3, 4}, false, 0.5, 2.0), [=](Tape& t, const ParameterStore& s) { return log(P(t, s, "x")); }});
  c.push_back({"clamp-min", one({3, 4}, true), [=](Tape& t, const ParameterStore& s) { return clamp_min(P(t, s, "x"), 0.0); }});
  c.push_back({"softmax-last-axis", one({3, 5}, false, -2.0, 2.0),
               [=](Tape& t, const ParameterStore& s) { return softmax_last(P(t, s, "x")); }});
  c.push_back({"mean-over-axis", one({3, 4, 2}), [=](Tape& t, const ParameterStore& s) { return mean_axis(P(t, s, "x"), 1); }});
  c.push_back({"sum", one({3, 4}), [=](Tape& t, const ParameterStore& s) { return sum(P(t, s, "x")); }});
  c.push_back({"square", one({3, 4}), [=](Tape& t, const ParameterStore& s) { return square(P(t, s, "x")); }});
  c.push_back({"conditional-grl (target rows)", one({3, 4}), [=](Tape& t, const ParameterStore& s) {
                 return conditional_grl(P(t, s, "x"), SpeakerLabelBatch{{1, 1, 1}}, 0.6);
               }});
  return c;
}

}  // namespace detail

/// Every primitive over `cases` seeded inputs, loss = sum(W * op(inputs)).
inline GradcheckReport run_primitive_gradchecks(std::uint64_t seed, std::size_t cases = 20) {
  GradcheckReport report;
  for (const auto& pc : detail::primitive_cases()) {
    GradcheckEntry entry{pc.name, cases};
    for (std::size_t i = 0; i < cases; ++i) {
      Rng rng(detail::splitmix64(seed * 1000 + i));
      const ParameterStore inputs = pc.inputs(rng);
      const std::uint64_t wseed = detail::splitmix64(seed + 17 * i);
      const GradientComparison c = check_builder(
          [&](Tape& t, const ParameterStore& s) {
            Var out = pc.apply(t, s);
            return out.shape().empty() ? out : detail::weighted_sum(t, out, wseed);
          },
          inputs);
      entry.max_rel_error = std::max(entry.max_rel_error, c.entry);
      entry.max_entry_error = std::max(entry.max_entry_error, c.entry);
    }
    report.entries.push_back(entry);
  }
  return report;
}

/// A two-utterance batch (one target, one non-target) of 2 phonemes and 3 frames on a tiny model.
struct TinyModelFixture {
  ModelConfig config;
  ParameterStore params;
  std::vector<Utterance> utterances;
  std::vector<Tensor> xvectors;

  std::vector<ModelSample> batch(std::vector<int> labels) const {
    std::vector<ModelSample> b;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      b.push_back({&utterances[i % utterances.size()], &xvectors[i % xvectors.size()], labels[i]});
    }
    return b;
  }
};

inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.n_phonemes = 4;
  c.phoneme_embed_dim = 3;
  c.encoder_hidden = 4;
  c.decoder_hidden = 5;
  c.attention_dim = 3;
  c.n_mels = 2;
  c.xvector_dim = 2;
  c.classifier_dims = {{{9, 4}, {4, 3}, {3, 2}}};
  c.validate();
  return c;
}

inline TinyModelFixture make_tiny_fixture(std::uint64_t seed, std::size_t n_utterances = 2) {
  TinyModelFixture f;
  f.config = tiny_model_config();
  const TdassModel model(f.config);
  f.params = model.init_parameters(seed, /*with_classifier=*/true);
  Rng rng(detail::splitmix64(seed ^ 0xabcdef));
  std::uniform_int_distribution<int> ph(0, static_cast<int>(f.config.n_phonemes) - 1);
  for (std::size_t i = 0; i < n_utterances; ++i) {
    Utterance u;
    u.id = "tiny" + std::to_string(i);
    u.speaker = static_cast<int>(i);
    u.phonemes = {static_cast<std::uint16_t>(ph(rng)), static_cast<std::uint16_t>(ph(rng))};
    u.mel = detail::random_tensor({3, f.config.n_mels}, rng);
    f.utterances.push_back(std::move(u));
    f.xvectors.push_back(detail::random_tensor({f.config.xvector_dim}, rng));
  }
  return f;
}

/// Per-term losses of one forward pass over `batch`.
struct ModelLosses {
  Var gls;
  ClassifierLosses cls;
};

inline ModelLosses model_losses(Tape& tape, const TdassModel& model, const ParameterStore& params,
                                std::span<const ModelSample> batch, double lambda, bool grl_enabled) {
  ForwardOptions opts;
  opts.grl_enabled = grl_enabled;
  ForwardOutput out = model.forward_full(tape, params, batch, lambda, opts);
  std::vector<const Tensor*> targets;
  for (const auto& s : batch) targets.push_back(&s.utterance->mel);
  return {loss_gls_batch(out.mel_pred, targets), loss_cls(*out.probs, out.labels)};
}

/// Whole-model checks on `cases` seeded tiny instances, gated on the per-tensor error:
///  - GRL-free total loss against central differences over all parameters;
///  - GRL-routed total loss against central differences of L_GLS + L_target - lambda L_non-target
///    on theta_P and of L_GLS + L_target + L_non-target on theta_G and theta_C.
inline GradcheckReport run_model_gradchecks(std::uint64_t seed, std::size_t cases = 20) {
  GradcheckReport report;
  GradcheckEntry plain{"model: full loss, no reversal", cases};
  GradcheckEntry routed{"model: reversal-routed gradients", cases};
  auto record = [](GradcheckEntry& e, const GradientComparison& c) {
    e.max_rel_error = std::max(e.max_rel_error, c.tensor);
    e.max_entry_error = std::max(e.max_entry_error, c.entry);
  };
  const double lambda = 0.5;
  for (std::size_t i = 0; i < cases; ++i) {
    const TinyModelFixture f = make_tiny_fixture(detail::splitmix64(seed * 7919 + i));
    const TdassModel model(f.config);
    const auto batch = f.batch({1, 0});

    record(plain, check_builder(
                      [&](Tape& t, const ParameterStore& p) {
                        ModelLosses l = model_losses(t, model, p, batch, lambda, false);
                        return total_loss(l.gls, l.cls);
                      },
                      f.params));

    Tape tape;
    ModelLosses l = model_losses(tape, model, f.params, batch, lambda, true);
    const GradientMap analytic = tape.backward(total_loss(l.gls, l.cls), f.params);
    auto surrogate = [&](double non_target_weight) {
      return [&, non_target_weight](const ParameterStore& p) {
        Tape t;
        ModelLosses m = model_losses(t, model, p, batch, lambda, false);
        return m.gls.value().item() + m.cls.target.value().item() + non_target_weight * m.cls.non_target.value().item();
      };
    };
    const GradientMap fd_p = finite_diff_grad(surrogate(-lambda), f.params, kGradcheckStep);
    const GradientMap fd_rest = finite_diff_grad(surrogate(1.0), f.params, kGradcheckStep);
    GradientMap expected;
    for (const auto& [name, e] : f.params) {
      expected.emplace(name, e.group == Group::P ? fd_p.at(name) : fd_rest.at(name));
    }
    record(routed, compare_gradients(analytic, expected));
  }
  report.entries.push_back(plain);
  report.entries.push_back(routed);
  return report;
}

/// Toy-preset model with `labels.size()` short seeded utterances (3-5 phonemes, 6-10 frames).
struct ToyBatchFixture {
  ModelConfig config;
  ParameterStore params;
  std::vector<Utterance> utterances;
  std::vector<Tensor> xvectors;
  std::vector<ModelSample> batch;
};

inline ToyBatchFixture make_toy_batch(std::uint64_t seed, const std::vector<int>& labels) {
  ToyBatchFixture f;
  f.config = ModelConfig::toy();
  f.params = TdassModel(f.config).init_parameters(seed, /*with_classifier=*/true);
  Rng rng(detail::mix_seed(seed, 0x746f79));
  std::uniform_int_distribution<int> ph(0, static_cast<int>(f.config.n_phonemes) - 1);
  std::uniform_int_distribution<std::size_t> n_ph(3, 5), n_fr(6, 10);
  f.utterances.resize(labels.size());
  f.xvectors.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Utterance& u = f.utterances[i];
    u.id = "toy" + std::to_string(i);
    u.speaker = static_cast<int>(i);
    u.phonemes.resize(n_ph(rng));
    for (auto& p : u.phonemes) p = static_cast<std::uint16_t>(ph(rng));
    u.mel = detail::random_tensor({n_fr(rng), f.config.n_mels}, rng);
    f.xvectors[i] = detail::random_tensor({f.config.xvector_dim}, rng);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) f.batch.push_back({&f.utterances[i], &f.xvectors[i], labels[i]});
  return f;
}

namespace detail {

/// Sample i's share of the classifier loss: -log P_{y_i} / |subset of y_i|.
inline Var sample_cls_loss(Tape& tape, const Var& probs, const SpeakerLabelBatch& labels, std::size_t i) {
  const int y = labels.labels[i];
  Tensor mask({labels.size(), 2});
  mask.at(i, static_cast<std::size_t>(y)) = -1.0 / static_cast<double>(labels.count(y));
  return sum(mul(log(clamp_min(probs, kProbabilityFloor)), tape.constant(std::move(mask))));
}

inline double max_abs_error_in(const GradientMap& a, const GradientMap& b, const ParameterStore& s, Group g) {
  double worst = 0.0;
  for (const auto& name : s.names(g)) worst = std::max(worst, max_abs_diff(a.at(name), b.at(name)));
  return worst;
}

inline GradientMap scaled(const GradientMap& g, double factor) {
  GradientMap out;
  for (const auto& [name, t] : g) {
    Tensor c = t;
    for (auto& v : c.data()) v *= factor;
    out.emplace(name, std::move(c));
  }
  return out;
}

}  // namespace detail

struct RoutingReport {
  double per_sample_p_error = 0.0;  // max |routed - s_i * plain| over samples and theta_P entries
  double batch_p_error = 0.0;       // whole-batch classifier loss, same comparison summed over samples
  double c_error = 0.0;             // theta_C gradients with vs without the GRL
  double g_classifier_max = 0.0;    // largest |dL_cls / d theta_G| (must be exactly 0)
};

/// Per-sample theta_P gradients of the classifier loss through the GRL against GRL-free ones
/// scaled by +1 (target) or -lambda (non-target); theta_C gradients with and without the GRL.
inline RoutingReport grl_routing_check(std::uint64_t seed, const std::vector<int>& labels, double lambda) {
  const ToyBatchFixture f = make_toy_batch(seed, labels);
  const TdassModel model(f.config);
  auto cls_grads = [&](bool grl, std::optional<std::size_t> sample) {
    Tape tape;
    ForwardOptions opts;
    opts.grl_enabled = grl;
    ForwardOutput out = model.forward_full(tape, f.params, f.batch, lambda, opts);
    Var loss;
    if (sample) {
      loss = detail::sample_cls_loss(tape, *out.probs, out.labels, *sample);
    } else {
      ClassifierLosses c = loss_cls(*out.probs, out.labels);
      loss = add(c.target, c.non_target);
    }
    return tape.backward(loss, f.params);
  };
  RoutingReport r;
  GradientMap expected_batch = zero_gradients(f.params);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double factor = labels[i] == 1 ? 1.0 : -lambda;
    const GradientMap expected = detail::scaled(cls_grads(false, i), factor);
    r.per_sample_p_error =
        std::max(r.per_sample_p_error, detail::max_abs_error_in(cls_grads(true, i), expected, f.params, Group::P));
    for (auto& [name, t] : expected_batch) {
      for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] += expected.at(name)[k];
    }
  }
  const GradientMap routed = cls_grads(true, std::nullopt);
  const GradientMap plain = cls_grads(false, std::nullopt);
  r.batch_p_error = detail::max_abs_error_in(routed, expected_batch, f.params, Group::P);
  r.c_error = detail::max_abs_error_in(routed, plain, f.params, Group::C);
  for (const auto& name : f.params.names(Group::G)) {
    for (double v : routed.at(name).data()) r.g_classifier_max = std::max(r.g_classifier_max, std::abs(v));
  }
  return r;
}

struct UpdateReport {
  double max_error = 0.0;  // over all parameters after one step
};

/// One plain-SGD step through the library (GRL forward, total loss, backward, sgd_step) against the
/// hand-written update theta_P -= mu (dGLS + dL_target - lambda dL_non-target),
/// theta_G -= mu dGLS, theta_C -= mu (dL_target + dL_non-target), each term from its own
/// GRL-free backward pass.
inline UpdateReport update_rule_check(std::uint64_t seed, const std::vector<int>& labels, double lambda,
                                      double mu = 0.05) {
  const ToyBatchFixture f = make_toy_batch(seed, labels);
  const TdassModel model(f.config);
  std::vector<const Tensor*> targets;
  for (const auto& s : f.batch) targets.push_back(&s.utterance->mel);

  OptimizerConfig sgd;
  sgd.kind = OptimizerKind::Sgd;
  sgd.learning_rate = mu;
  sgd.l2_weight = 0.0;
  ParameterStore library = f.params;
  {
    Tape tape;
    ForwardOutput out = model.forward_full(tape, library, f.batch, lambda);
    Var total = total_loss(loss_gls_batch(out.mel_pred, targets), loss_cls(*out.probs, out.labels));
    OptimizerState state;
    sgd_step(library, tape.backward(total, library), state, sgd);
  }

  Tape tape;
  ForwardOptions plain;
  plain.grl_enabled = false;
  ForwardOutput out = model.forward_full(tape, f.params, f.batch, lambda, plain);
  const ClassifierLosses cls = loss_cls(*out.probs, out.labels);
  const GradientMap d_gls = tape.backward(loss_gls_batch(out.mel_pred, targets), f.params);
  const GradientMap d_target = tape.backward(cls.target, f.params);
  const GradientMap d_non_target = tape.backward(cls.non_target, f.params);
  ParameterStore hand = f.params;
  for (const auto& [name, e] : f.params) {
    Tensor& p = hand.value(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double g = d_gls.at(name)[i];
      if (e.group == Group::P) g += d_target.at(name)[i] - lambda * d_non_target.at(name)[i];
      if (e.group == Group::C) g += d_target.at(name)[i] + d_non_target.at(name)[i];
      p.data()[i] -= mu * g;
    }
  }
  UpdateReport r;
  for (const auto& [name, e] : hand) r.max_error = std::max(r.max_error, max_abs_diff(e.value, library.value(name)));
  return r;
}

}  // namespace tdass
