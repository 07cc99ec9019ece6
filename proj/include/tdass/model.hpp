#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdass/autodiff.hpp"
#include "tdass/errors.hpp"
#include "tdass/layers.hpp"
#include "tdass/parameters.hpp"
#include "tdass/utterance.hpp"

namespace tdass {

struct LayerDims {
  std::size_t in = 0;
  std::size_t out = 0;

  friend bool operator==(const LayerDims&, const LayerDims&) = default;
};

struct ModelConfig {
  std::string preset = "toy";
  std::size_t n_phonemes = 24;
  std::size_t phoneme_embed_dim = 32;
  std::size_t encoder_hidden = 64;
  std::size_t decoder_hidden = 96;
  std::size_t attention_dim = 32;
  std::size_t n_mels = 20;
  std::size_t xvector_dim = 16;
  std::array<LayerDims, 3> classifier_dims{{{160, 64}, {64, 16}, {16, 2}}};

  static ModelConfig toy(std::size_t n_phonemes = 24, std::size_t n_mels = 20) {
    ModelConfig c;
    c.n_phonemes = n_phonemes;
    c.n_mels = n_mels;
    c.validate();
    return c;
  }

  /// Classifier (1536,1024),(1024,64),(64,2) with a 512-wide x-vector; context 512 + state 1024 = 1536.
  static ModelConfig full_size(std::size_t n_phonemes = 24, std::size_t n_mels = 80) {
    ModelConfig c;
    c.preset = "full-size";
    c.n_phonemes = n_phonemes;
    c.phoneme_embed_dim = 512;
    c.encoder_hidden = 512;
    c.decoder_hidden = 1024;
    c.attention_dim = 128;
    c.n_mels = n_mels;
    c.xvector_dim = 512;
    c.classifier_dims = {{{1536, 1024}, {1024, 64}, {64, 2}}};
    c.validate();
    return c;
  }

  /// Width of Z: encoder output concatenated with the x-vector.
  std::size_t memory_dim() const { return encoder_hidden + xvector_dim; }

  /// Width of delta: attention context concatenated with the attention-RNN state.
  std::size_t delta_dim() const { return encoder_hidden + decoder_hidden; }

  void validate() const {
    if (preset != "toy" && preset != "full-size") throw ConfigError("unknown model preset '" + preset + "'");
    for (std::size_t v : {n_phonemes, phoneme_embed_dim, encoder_hidden, decoder_hidden, attention_dim, n_mels,
                          xvector_dim}) {
      if (v == 0) throw ConfigError("model dimensions must be positive");
    }
    if (classifier_dims[0].in != delta_dim()) {
      throw ConfigError("classifier input " + std::to_string(classifier_dims[0].in) + " != delta width " +
                        std::to_string(delta_dim()));
    }
    for (std::size_t i = 1; i < classifier_dims.size(); ++i) {
      if (classifier_dims[i].in != classifier_dims[i - 1].out) throw ConfigError("classifier dims do not chain");
    }
    if (classifier_dims.back().out != 2) throw ConfigError("classifier must end in 2 outputs");
    if (preset == "full-size") {
      const std::array<LayerDims, 3> fixed{{{1536, 1024}, {1024, 64}, {64, 2}}};
      if (classifier_dims != fixed || xvector_dim != 512) {
        throw ConfigError("full-size preset requires classifier (1536,1024),(1024,64),(64,2) and x-vector 512");
      }
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One utterance as fed to the network, with its speaker embedding and target/non-target label.
struct ModelSample {
  const Utterance* utterance = nullptr;
  const Tensor* xvector = nullptr;
  int label = 0;
};

struct ForwardOptions {
  bool with_classifier = true;
  bool grl_enabled = true;   // false: classifier gradients reach theta_P unmodified
  bool zero_xvector = false;
};

struct DecodeOutput {
  Var mel;                               // frames x n_mels
  Var deltas;                            // frames x delta_dim
  std::vector<Tensor> attention;         // one (1 x T) row per decoder step
  bool truncated = false;
};

struct ForwardOutput {
  std::vector<Var> mel_pred;
  std::vector<Var> deltas;               // per sample, frames x delta_dim
  Var delta_pooled;                      // batch x delta_dim
  std::optional<Var> probs;              // batch x 2, columns (P0, P1)
  std::vector<std::vector<Tensor>> attention;
  SpeakerLabelBatch labels;
};

struct InferenceOutput {
  Tensor mel;
  std::vector<Tensor> attention;
  bool truncated = false;
};

/// Encoder phi + attention f (group P), generator G, self-interested classifier C.
class TdassModel {
 public:
  explicit TdassModel(ModelConfig config) : config_(std::move(config)) { config_.validate(); }

  const ModelConfig& config() const noexcept { return config_; }

  std::string embedding_name() const { return "encoder.embedding"; }
  GruCell encoder_rnn() const { return {"encoder.rnn", config_.phoneme_embed_dim, config_.encoder_hidden, Group::P}; }
  LinearLayer attention_key() const { return {"attention.key", config_.memory_dim(), config_.attention_dim, Group::P}; }
  LinearLayer attention_value() const {
    return {"attention.value", config_.memory_dim(), config_.encoder_hidden, Group::P};
  }
  LinearLayer attention_query() const {
    return {"attention.query", config_.decoder_hidden, config_.attention_dim, Group::P};
  }
  GruCell attention_rnn() const {
    return {"attention.rnn", config_.n_mels + config_.encoder_hidden, config_.decoder_hidden, Group::P};
  }
  GruCell generator_rnn() const { return {"generator.rnn", config_.delta_dim(), config_.decoder_hidden, Group::G}; }
  LinearLayer generator_proj() const {
    return {"generator.proj", config_.decoder_hidden + config_.encoder_hidden, config_.n_mels, Group::G};
  }
  std::array<LinearLayer, 3> classifier_layers() const {
    std::array<LinearLayer, 3> out;
    for (std::size_t i = 0; i < 3; ++i) {
      out[i] = {"classifier.fc" + std::to_string(i + 1), config_.classifier_dims[i].in, config_.classifier_dims[i].out,
                Group::C};
    }
    return out;
  }

  /// Seeded init of groups P and G (and C when requested).
  ParameterStore init_parameters(std::uint64_t seed, bool with_classifier) const {
    ParameterStore store;
    Rng rng(seed);
    store.add(embedding_name(), Group::P, uniform_init({config_.n_phonemes, config_.phoneme_embed_dim}, 1, rng));
    encoder_rnn().init(store, rng);
    attention_key().init(store, rng);
    attention_value().init(store, rng);
    attention_query().init(store, rng);
    attention_rnn().init(store, rng);
    generator_rnn().init(store, rng);
    generator_proj().init(store, rng);
    if (with_classifier) init_classifier(store, seed);
    return store;
  }

  /// Classifier draws from its own stream so adding it never perturbs the P/G init.
  void init_classifier(ParameterStore& store, std::uint64_t seed) const {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (const auto& layer : classifier_layers()) layer.init(store, rng);
  }

  /// z = phi(x): embedding lookup then recurrent encoding, (T x encoder_hidden).
  Var encode(Tape& tape, const ParameterStore& store, std::span<const std::uint16_t> phonemes) const {
    if (phonemes.empty()) throw InputError("encode: empty phoneme sequence");
    std::vector<std::size_t> ids;
    ids.reserve(phonemes.size());
    for (auto p : phonemes) {
      if (p >= config_.n_phonemes) {
        throw InputError("encode: phoneme id " + std::to_string(p) + " outside vocabulary of " +
                         std::to_string(config_.n_phonemes));
      }
      ids.push_back(p);
    }
    const std::size_t T = ids.size();
    Var emb = gather_rows(tape.parameter(store, embedding_name()), ids);
    Var h0 = tape.constant(Tensor::zeros({1, config_.encoder_hidden}));
    Var states = recurrent_forward(tape, store, encoder_rnn(), reshape(emb, {T, 1, config_.phoneme_embed_dim}), h0);
    return reshape(states, {T, config_.encoder_hidden});
  }

  /// Z = [z | x-vector], the x-vector repeated on every encoder frame.
  Var embed_concat(Tape& tape, const Var& z, const Tensor& xvector) const {
    if (z.shape().size() != 2 || xvector.rank() != 1 || xvector.size() != config_.xvector_dim) {
      throw DimensionError("embed_concat: z " + shape_str(z.shape()) + " with x-vector " + shape_str(xvector.shape()) +
                           ", expected width " + std::to_string(config_.xvector_dim));
    }
    const std::size_t T = z.shape()[0];
    Tensor tiled({T, config_.xvector_dim});
    for (std::size_t t = 0; t < T; ++t) {
      std::copy(xvector.data().begin(), xvector.data().end(),
                tiled.data().begin() + static_cast<std::ptrdiff_t>(t * config_.xvector_dim));
    }
    return concat_last(z, tape.constant(std::move(tiled)));
  }

  /// Autoregressive decoding over memory Z. Each step: attention RNN on [previous frame | previous
  /// context], content attention gives context_t, delta_t = [context_t | state_t], generator RNN on
  /// delta_t, frame_t = proj([generator state | context_t]). With a teacher, the previous frame is
  /// the ground truth and the frame count follows it; otherwise `max_frames` frames are produced.
  DecodeOutput attend_and_decode(Tape& tape, const ParameterStore& store, const Var& Z, std::size_t max_frames,
                                 const Tensor* teacher) const {
    const std::size_t T = Z.shape().at(0);
    if (Z.shape().size() != 2 || Z.shape()[1] != config_.memory_dim()) {
      throw DimensionError("attend_and_decode: memory " + shape_str(Z.shape()) + " expected width " +
                           std::to_string(config_.memory_dim()));
    }
    if (teacher && (teacher->rank() != 2 || teacher->dim(1) != config_.n_mels)) {
      throw DimensionError("attend_and_decode: teacher mel " + shape_str(teacher->shape()));
    }
    const std::size_t frames = teacher ? teacher->dim(0) : max_frames;
    if (frames == 0) throw InputError("attend_and_decode: zero frames requested");

    Var keys = reshape(attention_key().forward(tape, store, Z), {T, 1, config_.attention_dim});
    Var values = reshape(attention_value().forward(tape, store, Z), {T, 1, config_.encoder_hidden});
    const GruCell att_rnn = attention_rnn();
    const GruCell gen_rnn = generator_rnn();
    const LinearLayer query = attention_query();
    const LinearLayer proj = generator_proj();

    Var prev_frame = tape.constant(Tensor::zeros({1, config_.n_mels}));
    Var context = tape.constant(Tensor::zeros({1, config_.encoder_hidden}));
    Var att_state = tape.constant(Tensor::zeros({1, config_.decoder_hidden}));
    Var gen_state = att_state;

    DecodeOutput out;
    std::vector<Var> frames_out, deltas;
    frames_out.reserve(frames);
    deltas.reserve(frames);
    for (std::size_t t = 0; t < frames; ++t) {
      att_state = att_rnn.step(tape, store, concat_last(prev_frame, context), att_state);
      AttentionResult att = attention_step(query.forward(tape, store, att_state), keys, values);
      context = att.context;
      Var delta = concat_last(context, att_state);
      gen_state = gen_rnn.step(tape, store, delta, gen_state);
      Var frame = proj.forward(tape, store, concat_last(gen_state, context));
      frames_out.push_back(frame);
      deltas.push_back(delta);
      out.attention.push_back(att.weights.value());
      prev_frame = teacher ? tape.constant(teacher->rows(t, t + 1)) : tape.constant(frame.value());
    }
    out.mel = concat(frames_out, 0);
    out.deltas = concat(deltas, 0);
    if (!teacher) {
      const auto& last = out.attention.back();
      const auto peak = std::max_element(last.data().begin(), last.data().end()) - last.data().begin();
      out.truncated = static_cast<std::size_t>(peak) + 1 < T;
    }
    return out;
  }

  /// (P0, P1) = C(delta): conditional GRL, three linear layers with tanh between, softmax.
  Var classify(Tape& tape, const ParameterStore& store, const Var& delta_pooled, const SpeakerLabelBatch& labels,
               double lambda, bool grl_enabled = true) const {
    const Shape& s = delta_pooled.shape();
    if (s.size() != 2 || s[1] != config_.classifier_dims[0].in) {
      throw ConfigError("classify: input " + shape_str(s) + " does not match classifier input width " +
                        std::to_string(config_.classifier_dims[0].in));
    }
    Var h = grl_enabled ? conditional_grl(delta_pooled, labels, lambda) : delta_pooled;
    const auto layers = classifier_layers();
    h = tanh(layers[0].forward(tape, store, h));
    h = tanh(layers[1].forward(tape, store, h));
    return softmax_last(layers[2].forward(tape, store, h));
  }

  /// encode -> embed_concat -> attend_and_decode (teacher forced) -> time-mean pool -> classify.
  ForwardOutput forward_full(Tape& tape, const ParameterStore& store, std::span<const ModelSample> batch,
                             double lambda, const ForwardOptions& options = {}) const {
    if (batch.empty()) throw ContractError("forward_full: empty batch");
    ForwardOutput out;
    std::vector<Var> pooled;
    for (const ModelSample& sample : batch) {
      if (!sample.utterance || !sample.xvector) throw ContractError("forward_full: sample without data");
      const Utterance& utt = *sample.utterance;
      Var z = encode(tape, store, utt.phonemes);
      const Tensor xv = options.zero_xvector ? Tensor::zeros({config_.xvector_dim}) : *sample.xvector;
      Var Z = embed_concat(tape, z, xv);
      DecodeOutput dec = attend_and_decode(tape, store, Z, utt.n_frames(), &utt.mel);
      out.mel_pred.push_back(dec.mel);
      out.deltas.push_back(dec.deltas);
      out.attention.push_back(std::move(dec.attention));
      pooled.push_back(reshape(mean_axis(dec.deltas, 0), {1, config_.delta_dim()}));
      out.labels.labels.push_back(sample.label);
    }
    out.labels.validate();
    out.delta_pooled = concat(pooled, 0);
    if (options.with_classifier) {
      out.probs = classify(tape, store, out.delta_pooled, out.labels, lambda, options.grl_enabled);
    }
    return out;
  }

  /// Free-running synthesis of `max_frames` frames.
  InferenceOutput infer(const ParameterStore& store, std::span<const std::uint16_t> phonemes, const Tensor& xvector,
                        std::size_t max_frames) const {
    Tape tape;
    Var Z = embed_concat(tape, encode(tape, store, phonemes), xvector);
    DecodeOutput dec = attend_and_decode(tape, store, Z, max_frames, nullptr);
    return {dec.mel.value(), std::move(dec.attention), dec.truncated};
  }

 private:
  ModelConfig config_;
};

}  // namespace tdass
