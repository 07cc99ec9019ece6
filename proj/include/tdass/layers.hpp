#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tdass/autodiff.hpp"
#include "tdass/errors.hpp"
#include "tdass/parameters.hpp"

namespace tdass {

/// Per-utterance speaker labels: 0 = non-target, 1 = target.
struct SpeakerLabelBatch {
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }

  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }

  void validate() const {
    for (int l : labels) {
      if (l != 0 && l != 1) throw ContractError("speaker label " + std::to_string(l) + " is not 0 or 1");
    }
  }
};

/// Uniform in +-sqrt(1/fan_in).
inline Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

/// x * W^T + b for x (batch x in), W (out x in), b (out).
inline Var linear_forward(const Var& x, const Var& weight, const Var& bias) {
  if (x.shape().size() != 2 || weight.shape().size() != 2 || x.shape()[1] != weight.shape()[1]) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not fit weight " + shape_str(weight.shape()));
  }
  return add(matmul(x, weight, /*transpose_b=*/true), bias);
}

struct LinearLayer {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  Group group = Group::P;

  std::string weight_name() const { return name + ".weight"; }
  std::string bias_name() const { return name + ".bias"; }

  void init(ParameterStore& store, Rng& rng) const {
    store.add(weight_name(), group, uniform_init({out, in}, in, rng));
    store.add(bias_name(), group, uniform_init({out}, in, rng));
  }

  Var forward(Tape& tape, const ParameterStore& store, const Var& x) const {
    return linear_forward(x, tape.parameter(store, weight_name()), tape.parameter(store, bias_name()));
  }
};

/// Single-layer GRU: update gate u, reset gate r, candidate n; h' = n + u * (h - n).
/// Input and recurrent projections hold the three gates stacked as rows [u; r; n].
struct GruCell {
  std::string name;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Group group = Group::P;

  LinearLayer input_proj() const { return {name + ".input", input_dim, 3 * hidden_dim, group}; }
  LinearLayer hidden_proj() const { return {name + ".hidden", hidden_dim, 3 * hidden_dim, group}; }

  void init(ParameterStore& store, Rng& rng) const {
    input_proj().init(store, rng);
    hidden_proj().init(store, rng);
  }

  Var step(Tape& tape, const ParameterStore& store, const Var& x, const Var& h) const {
    if (h.shape().size() != 2 || h.shape()[1] != hidden_dim) {
      throw DimensionError("gru " + name + ": hidden state " + shape_str(h.shape()) + " expected width " +
                           std::to_string(hidden_dim));
    }
    const std::size_t H = hidden_dim;
    Var gx = input_proj().forward(tape, store, x);
    Var gh = hidden_proj().forward(tape, store, h);
    Var u = sigmoid(add(slice(gx, 1, 0, H), slice(gh, 1, 0, H)));
    Var r = sigmoid(add(slice(gx, 1, H, 2 * H), slice(gh, 1, H, 2 * H)));
    Var n = tanh(add(slice(gx, 1, 2 * H, 3 * H), mul(r, slice(gh, 1, 2 * H, 3 * H))));
    return add(n, mul(u, sub(h, n)));
  }
};

/// Runs `cell` over inputs (T x batch x d) from h0 (batch x h); returns all states (T x batch x h).
inline Var recurrent_forward(Tape& tape, const ParameterStore& store, const GruCell& cell, const Var& inputs,
                             const Var& h0) {
  const Shape& s = inputs.shape();
  if (s.size() != 3) throw DimensionError("recurrent_forward: inputs must be (T x batch x d), got " + shape_str(s));
  if (s[0] == 0) throw InputError("recurrent_forward: empty sequence");
  if (h0.shape() != Shape{s[1], cell.hidden_dim}) {
    throw DimensionError("recurrent_forward: h0 " + shape_str(h0.shape()) + " vs batch " + std::to_string(s[1]) +
                         " hidden " + std::to_string(cell.hidden_dim));
  }
  std::vector<Var> states;
  states.reserve(s[0]);
  Var h = h0;
  for (std::size_t t = 0; t < s[0]; ++t) {
    Var x = reshape(slice(inputs, 0, t, t + 1), {s[1], s[2]});
    h = cell.step(tape, store, x, h);
    states.push_back(reshape(h, {1, s[1], cell.hidden_dim}));
  }
  return concat(states, 0);
}

struct AttentionResult {
  Var context;  // batch x v
  Var weights;  // batch x T
};

/// Scaled dot-product content attention of one query row per batch element over T memory slots.
inline AttentionResult attention_step(const Var& query, const Var& keys, const Var& values) {
  const Shape& qs = query.shape();
  const Shape& ks = keys.shape();
  const Shape& vs = values.shape();
  if (qs.size() != 2 || ks.size() != 3 || vs.size() != 3) {
    throw DimensionError("attention: expected query (batch x q), keys/values (T x batch x d); got " + shape_str(qs) +
                         ", " + shape_str(ks) + ", " + shape_str(vs));
  }
  if (ks[0] != vs[0] || ks[1] != vs[1] || ks[1] != qs[0]) {
    throw DimensionError("attention: keys " + shape_str(ks) + " and values " + shape_str(vs) +
                         " disagree on T/batch with query " + shape_str(qs));
  }
  if (qs[1] != ks[2]) {
    throw DimensionError("attention: query dim " + std::to_string(qs[1]) + " != key dim " + std::to_string(ks[2]));
  }
  const std::size_t T = ks[0], B = ks[1];
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(ks[2]));
  std::vector<Var> contexts, weights;
  for (std::size_t b = 0; b < B; ++b) {
    Var k = B == 1 ? reshape(keys, {T, ks[2]}) : reshape(slice(keys, 1, b, b + 1), {T, ks[2]});
    Var v = B == 1 ? reshape(values, {T, vs[2]}) : reshape(slice(values, 1, b, b + 1), {T, vs[2]});
    Var q = B == 1 ? query : slice(query, 0, b, b + 1);
    Var w = softmax_last(scale(matmul(q, k, /*transpose_b=*/true), inv_sqrt));  // 1 x T
    contexts.push_back(matmul(w, v));
    weights.push_back(w);
  }
  if (B == 1) return {contexts[0], weights[0]};
  return {concat(contexts, 0), concat(weights, 0)};
}

/// Identity forward. Backward scales each row's upstream gradient by -lambda for
/// non-target rows (label 0) and passes target rows (label 1) unchanged.
inline Var conditional_grl(const Var& features, const SpeakerLabelBatch& labels, double lambda) {
  labels.validate();
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("conditional_grl: lambda outside [0,1]");
  const Shape& s = features.shape();
  if (s.empty() || s[0] != labels.size()) {
    throw DimensionError("conditional_grl: features " + shape_str(s) + " vs " + std::to_string(labels.size()) +
                         " labels");
  }
  Node node;
  node.op = Op::RowGradScale;
  node.inputs = {features.id()};
  node.value = features.value();
  node.row_scale.reserve(labels.size());
  for (int l : labels.labels) node.row_scale.push_back(l == 1 ? 1.0 : -lambda);
  return detail::tape_of(features).record(std::move(node));
}

}  // namespace tdass
