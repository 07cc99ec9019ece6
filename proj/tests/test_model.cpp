#include <gtest/gtest.h>

#include <algorithm>

#include "tdass/gradcheck.hpp"
#include "tdass/model.hpp"

using namespace tdass;

namespace {

ParameterStore zeroed(const ParameterStore& p) {
  ParameterStore z;
  for (const auto& [name, e] : p) z.add(name, e.group, Tensor::zeros(e.value.shape()));
  return z;
}

std::vector<std::uint16_t> ids(std::size_t n) {
  std::vector<std::uint16_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::uint16_t>((i * 7) % 24);
  return v;
}

}  // namespace

TEST(ModelConfig, ToyDefaults) {
  const ModelConfig c = ModelConfig::toy();
  EXPECT_EQ(c.delta_dim(), 160u);
  EXPECT_EQ(c.memory_dim(), 80u);
  EXPECT_EQ(c.classifier_dims[0], (LayerDims{160, 64}));
  EXPECT_EQ(c.classifier_dims[2], (LayerDims{16, 2}));
}

TEST(ModelConfig, FullSizeGivesDeltaOf1536) {
  const ModelConfig c = ModelConfig::full_size();
  EXPECT_EQ(c.delta_dim(), 1536u);
  EXPECT_EQ(c.xvector_dim, 512u);
}

TEST(ModelConfig, RejectsInconsistentClassifier) {
  ModelConfig c = ModelConfig::toy();
  c.classifier_dims[0].in = 150;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::toy();
  c.classifier_dims[1].in = 32;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::full_size();
  c.xvector_dim = 256;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, GroupsPartitionTheParameters) {
  const TdassModel m(ModelConfig::toy());
  const ParameterStore p = m.init_parameters(1, true);
  EXPECT_EQ(p.names(Group::P).size() + p.names(Group::G).size() + p.names(Group::C).size(), p.size());
  for (const auto& n : p.names(Group::C)) EXPECT_EQ(n.rfind("classifier.", 0), 0u) << n;
  for (const auto& n : p.names(Group::G)) EXPECT_EQ(n.rfind("generator.", 0), 0u) << n;
  EXPECT_EQ(m.init_parameters(1, false).names(Group::C).size(), 0u);
}

TEST(Model, AddingClassifierLeavesBackboneInitUnchanged) {
  const TdassModel m(ModelConfig::toy());
  ParameterStore with = m.init_parameters(3, true);
  with.erase_group(Group::C);
  EXPECT_EQ(with, m.init_parameters(3, false));
}

TEST(Model, EncodeShape) {
  const TdassModel m(ModelConfig::toy());
  const ParameterStore p = m.init_parameters(1, false);
  Tape t;
  EXPECT_EQ(m.encode(t, p, ids(20)).shape(), (Shape{20, 64}));
}

TEST(Model, EncodeWithZeroParametersIsZero) {
  const TdassModel m(ModelConfig::toy());
  const ParameterStore p = zeroed(m.init_parameters(1, false));
  Tape t;
  EXPECT_EQ(m.encode(t, p, ids(5)).value(), Tensor::zeros({5, 64}));
}

TEST(Model, EncodeIsDeterministic) {
  const TdassModel m(ModelConfig::toy());
  Tape t1, t2;
  EXPECT_EQ(m.encode(t1, m.init_parameters(9, false), ids(6)).value(),
            m.encode(t2, m.init_parameters(9, false), ids(6)).value());
}

TEST(Model, EncodeRejectsBadInput) {
  const TdassModel m(ModelConfig::toy());
  const ParameterStore p = m.init_parameters(1, false);
  Tape t;
  EXPECT_THROW(m.encode(t, p, {}), InputError);
  const std::vector<std::uint16_t> bad{1, 24};
  EXPECT_THROW(m.encode(t, p, bad), InputError);
}

TEST(Model, EmbedConcatLayout) {
  const TdassModel m(ModelConfig::toy());
  const ParameterStore p = m.init_parameters(1, false);
  Tape t;
  Var z = m.encode(t, p, ids(4));
  Var Z = m.embed_concat(t, z, Tensor::zeros({16}));
  ASSERT_EQ(Z.shape(), (Shape{4, 80}));
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(Z.value().at(r, c), z.value().at(r, c));
    for (std::size_t c = 64; c < 80; ++c) EXPECT_EQ(Z.value().at(r, c), 0.0);
  }
  EXPECT_THROW(m.embed_concat(t, z, Tensor::zeros({15})), DimensionError);
}

TEST(Model, TeacherForcedLengthFollowsTeacher) {
  const TdassModel m(ModelConfig::toy());
  const ParameterStore p = m.init_parameters(1, false);
  Tape t;
  Var Z = m.embed_concat(t, m.encode(t, p, ids(5)), Tensor::filled({16}, 0.1));
  const Tensor teacher = Tensor::filled({50, 20}, 0.3);
  DecodeOutput d = m.attend_and_decode(t, p, Z, 3, &teacher);
  EXPECT_EQ(d.mel.shape(), (Shape{50, 20}));
  EXPECT_EQ(d.deltas.shape(), (Shape{50, 160}));
  for (const auto& w : d.attention) {
    double s = 0.0;
    for (double v : w.data()) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Model, ZeroParametersDecodeZeroFrames) {
  const TdassModel m(ModelConfig::toy());
  const ParameterStore p = zeroed(m.init_parameters(1, false));
  Tape t;
  Var Z = m.embed_concat(t, m.encode(t, p, ids(3)), Tensor::filled({16}, 1.0));
  DecodeOutput d = m.attend_and_decode(t, p, Z, 7, nullptr);
  EXPECT_EQ(d.mel.value(), Tensor::zeros({7, 20}));
}

TEST(Model, ZeroClassifierGivesEvenOdds) {
  const TdassModel m(ModelConfig::toy());
  ParameterStore p = m.init_parameters(1, false);
  for (const auto& layer : m.classifier_layers()) {
    p.add(layer.weight_name(), Group::C, Tensor::zeros({layer.out, layer.in}));
    p.add(layer.bias_name(), Group::C, Tensor::zeros({layer.out}));
  }
  Rng rng(2);
  Tape t;
  Var probs = m.classify(t, p, t.constant(detail::random_tensor({3, 160}, rng)), SpeakerLabelBatch{{0, 1, 0}}, 0.5);
  for (double v : probs.value().data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Model, ClassifierProbabilitiesSumToOne) {
  const TdassModel m(ModelConfig::toy());
  const ParameterStore p = m.init_parameters(4, true);
  Rng rng(5);
  Tape t;
  Var probs = m.classify(t, p, t.constant(detail::random_tensor({6, 160}, rng, -3, 3)),
                         SpeakerLabelBatch{{0, 1, 0, 1, 1, 0}}, 0.2);
  ASSERT_EQ(probs.shape(), (Shape{6, 2}));
  for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(probs.value().at(r, 0) + probs.value().at(r, 1), 1.0, 1e-12);
}

TEST(Model, ClassifierInputWidthMismatchIsConfigError) {
  const TdassModel m(ModelConfig::toy());
  const ParameterStore p = m.init_parameters(4, true);
  Tape t;
  EXPECT_THROW(m.classify(t, p, t.constant(Tensor::zeros({2, 150})), SpeakerLabelBatch{{0, 1}}, 0.5), ConfigError);
}

TEST(Model, ForwardFullShapesAndDeterminism) {
  auto run = [] {
    const ToyBatchFixture f = make_toy_batch(21, {1, 0, 1, 0});
    Tape t;
    ForwardOutput out = TdassModel(f.config).forward_full(t, f.params, f.batch, 0.4);
    std::vector<Tensor> mels;
    for (const auto& v : out.mel_pred) mels.push_back(v.value());
    return std::make_pair(mels, out.probs->value());
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.first.size(), 4u);
  EXPECT_EQ(a.second.shape(), (Shape{4, 2}));
  EXPECT_EQ(a, b);
}

TEST(Model, PooledDeltaIsTimeMean) {
  const ToyBatchFixture f = make_toy_batch(2, {1});
  Tape t;
  ForwardOutput out = TdassModel(f.config).forward_full(t, f.params, f.batch, 0.0);
  const Tensor& d = out.deltas[0].value();
  std::vector<std::size_t> order(d.dim(0));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::reverse(order.begin(), order.end());
  for (std::size_t c = 0; c < d.dim(1); ++c) {
    double fwd = 0.0, rev = 0.0;
    for (std::size_t r = 0; r < d.dim(0); ++r) fwd += d.at(r, c);
    for (auto r : order) rev += d.at(r, c);
    EXPECT_NEAR(out.delta_pooled.value().at(0, c), fwd / static_cast<double>(d.dim(0)), 1e-15);
    EXPECT_NEAR(fwd, rev, 1e-12);
  }
}

TEST(Model, ClassifierLossLeavesGeneratorUntouched) {
  const RoutingReport r = grl_routing_check(6, {1, 0, 1, 0}, 0.5);
  EXPECT_EQ(r.g_classifier_max, 0.0);
}

TEST(Model, ReconstructionLossLeavesClassifierUntouched) {
  const ToyBatchFixture f = make_toy_batch(6, {1, 0});
  Tape t;
  ForwardOutput out = TdassModel(f.config).forward_full(t, f.params, f.batch, 0.5);
  std::vector<const Tensor*> targets{&f.utterances[0].mel, &f.utterances[1].mel};
  const GradientMap g = t.backward(loss_gls_batch(out.mel_pred, targets), f.params);
  for (const auto& n : f.params.names(Group::C)) {
    for (double v : g.at(n).data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Model, ZeroLambdaNonTargetBatchSendsNothingToBackbone) {
  const ToyBatchFixture f = make_toy_batch(8, {0, 0, 0});
  Tape t;
  ForwardOutput out = TdassModel(f.config).forward_full(t, f.params, f.batch, 0.0);
  ClassifierLosses c = loss_cls(*out.probs, out.labels);
  const GradientMap g = t.backward(add(c.target, c.non_target), f.params);
  for (const auto& n : f.params.names(Group::P)) {
    for (double v : g.at(n).data()) EXPECT_EQ(v, 0.0) << n;
  }
}

TEST(Model, RoutingOracleOnMixedBatch) {
  const RoutingReport r = grl_routing_check(42, {1, 1, 0, 0}, 0.5);
  EXPECT_LT(r.per_sample_p_error, 1e-12);
  EXPECT_LT(r.batch_p_error, 1e-12);
  EXPECT_LT(r.c_error, 1e-12);
}

TEST(Model, EndToEndGradientCheck) {
  const GradcheckReport r = run_model_gradchecks(42, 5);
  for (const auto& e : r.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.name;
}

TEST(Model, InferenceFlagsEarlyStop) {
  const ToyBatchFixture f = make_toy_batch(3, {1});
  const TdassModel m(f.config);
  const InferenceOutput out = m.infer(f.params, f.utterances[0].phonemes, f.xvectors[0], 4);
  EXPECT_EQ(out.mel.shape(), (Shape{4, 20}));
  const auto& last = out.attention.back();
  const auto peak = static_cast<std::size_t>(std::max_element(last.data().begin(), last.data().end()) -
                                             last.data().begin());
  EXPECT_EQ(out.truncated, peak + 1 < f.utterances[0].phonemes.size());
}
