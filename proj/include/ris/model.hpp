#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ris/conv_lstm.hpp"
#include "ris/fcn.hpp"
#include "ris/heads.hpp"
#include "ris/instances.hpp"

namespace ris {

struct ModelConfig {
  int in_channels = 1;
  int channels = 16;       // d: FCN output channels == recurrent state channels
  int fcn_layers = 5;
  int fcn_first_kernel = 9;
  int fcn_kernel = 3;
  int fcn_stride = 2;      // first-layer stride, the only downsampling
  int lstm_layers = 2;
  int gate_kernel = 3;
  bool sigmoid_before_upsample = false;

  void validate() const {
    if (in_channels < 1 || channels < 1) throw std::invalid_argument("ModelConfig: bad channels");
    if (fcn_layers < 1 || lstm_layers < 1) throw std::invalid_argument("ModelConfig: bad layer counts");
    if (fcn_stride < 1) throw std::invalid_argument("ModelConfig: bad stride");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels},
                     {"channels", c.channels},
                     {"fcn_layers", c.fcn_layers},
                     {"fcn_first_kernel", c.fcn_first_kernel},
                     {"fcn_kernel", c.fcn_kernel},
                     {"fcn_stride", c.fcn_stride},
                     {"lstm_layers", c.lstm_layers},
                     {"gate_kernel", c.gate_kernel},
                     {"sigmoid_before_upsample", c.sigmoid_before_upsample}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.in_channels = j.value("in_channels", c.in_channels);
  c.channels = j.value("channels", c.channels);
  c.fcn_layers = j.value("fcn_layers", c.fcn_layers);
  c.fcn_first_kernel = j.value("fcn_first_kernel", c.fcn_first_kernel);
  c.fcn_kernel = j.value("fcn_kernel", c.fcn_kernel);
  c.fcn_stride = j.value("fcn_stride", c.fcn_stride);
  c.lstm_layers = j.value("lstm_layers", c.lstm_layers);
  c.gate_kernel = j.value("gate_kernel", c.gate_kernel);
  c.sigmoid_before_upsample = j.value("sigmoid_before_upsample", c.sigmoid_before_upsample);
}

// All learnable tensors. E is Tensor<T> for storage, Var when bound to a tape.
template <typename E>
struct ModelParamsT {
  FcnParamsT<E> fcn;
  std::vector<ConvLstmLayerT<E>> lstm;
  HeadParamsT<E> head;
};

template <typename T>
using ModelParams = ModelParamsT<Tensor<T>>;
using ModelVars = ModelParamsT<Var>;

template <typename T>
ModelParams<T> make_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> p;
  p.fcn = make_fcn_params<T>(cfg.in_channels, cfg.channels, cfg.fcn_layers,
                             cfg.fcn_first_kernel, cfg.fcn_kernel, cfg.fcn_stride);
  for (int l = 0; l < cfg.lstm_layers; ++l)
    p.lstm.push_back(make_conv_lstm_layer<T>(cfg.channels, cfg.gate_kernel));
  p.head = make_head_params<T>(cfg.channels);
  return p;
}

// Enumerates every parameter in a fixed order with a stable name. The order
// is the contract for optimizer state, gradient collection and checkpoints.
template <typename E, typename F>
void visit_params(ModelParamsT<E>& p, F&& fn) {
  for (std::size_t i = 0; i < p.fcn.layers.size(); ++i) {
    const std::string base = "fcn." + std::to_string(i);
    fn(base + ".weight", p.fcn.layers[i].weight);
    fn(base + ".bias", p.fcn.layers[i].bias);
  }
  for (std::size_t l = 0; l < p.lstm.size(); ++l) {
    const std::string base = "lstm." + std::to_string(l);
    auto gate = [&](const char* name, ConvLstmGateT<E>& g) {
      fn(base + "." + name + ".w_x", g.w_x);
      fn(base + "." + name + ".w_h", g.w_h);
      fn(base + "." + name + ".b", g.b);
    };
    gate("in", p.lstm[l].in_gate);
    gate("forget", p.lstm[l].forget_gate);
    gate("out", p.lstm[l].out_gate);
    gate("cell", p.lstm[l].cell_gate);
  }
  fn("head.proj.weight", p.head.proj.weight);
  fn("head.proj.bias", p.head.proj.bias);
  fn("head.threshold", p.head.threshold);
  fn("head.conf_weight", p.head.conf_weight);
  fn("head.conf_bias", p.head.conf_bias);
}

template <typename E, typename F>
void visit_params(const ModelParamsT<E>& p, F&& fn) {
  visit_params(const_cast<ModelParamsT<E>&>(p),
               [&fn](const std::string& name, E& e) {
                 fn(name, static_cast<const E&>(e));
               });
}

// Pushes every parameter tensor onto the tape as a leaf and returns the
// parallel Var structure.
template <typename T>
ModelVars bind_params(Tape<T>& tape, const ModelParams<T>& params) {
  ModelVars vars;
  vars.fcn.stride = params.fcn.stride;
  vars.fcn.layers.resize(params.fcn.layers.size());
  vars.lstm.resize(params.lstm.size());
  std::vector<Var*> slots;
  visit_params(vars, [&slots](const std::string&, Var& v) { slots.push_back(&v); });
  std::size_t i = 0;
  visit_params(params, [&](const std::string&, const Tensor<T>& t) {
    *slots[i++] = tape.leaf(t);
  });
  return vars;
}

// Gradients of every parameter in visit order; parameters the loss never
// reached come back as zeros.
template <typename T>
std::vector<Tensor<T>> collect_grads(Tape<T>& tape, const ModelVars& vars) {
  std::vector<Tensor<T>> out;
  visit_params(const_cast<ModelVars&>(vars), [&](const std::string&, Var& v) {
    out.push_back(tape.grad(v));
  });
  return out;
}

struct StepVars {
  Var mask;   // [1,H,W]
  Var score;  // [1]
  Var state;  // top-layer hidden state [d,h',w']
};

// The full differentiable pipeline for a fixed number of steps: features are
// extracted once and fed to the recurrent stack at every iteration; each
// step's top state is read out as one mask and one confidence score.
template <typename T>
std::vector<StepVars> forward_sequence(Tape<T>& tape, const ModelVars& vars,
                                       Var image, int steps,
                                       const ModelConfig& cfg) {
  const auto& img = tape.val(image);
  if (img.shape.size() != 3 || img.shape[0] != cfg.in_channels)
    throw std::invalid_argument("forward_sequence: image must be [" +
                                std::to_string(cfg.in_channels) + ",H,W]");
  const int h = img.shape[1], w = img.shape[2];
  Var features = fcn_extract(tape, image, vars.fcn, vars.fcn.stride);
  auto states = conv_lstm_unroll(tape, features, vars.lstm, steps);
  std::vector<StepVars> out;
  out.reserve(states.size());
  for (const auto& st : states) {
    out.push_back(StepVars{
        segment_head(tape, st.h, vars.head, h, w, cfg.sigmoid_before_upsample),
        confidence_head(tape, st.h, vars.head), st.h});
  }
  return out;
}

// Inference: keep emitting masks until the confidence drops below the stop
// threshold (that final low-confidence step is included in the returned
// sequence) or until max_steps. No gradients are consumed; the tape is local.
template <typename T>
PredictedSequence<T> predict(const ModelParams<T>& params, const Tensor<T>& image,
                             const ModelConfig& cfg, int max_steps,
                             double stop_threshold = 0.5) {
  if (max_steps < 1) throw std::invalid_argument("predict: max_steps must be >= 1");
  Tape<T> tape;
  ModelVars vars = bind_params(tape, params);
  Var image_var = tape.leaf(image);
  Var features = fcn_extract(tape, image_var, vars.fcn, vars.fcn.stride);
  const Shape fs = tape.val(features).shape;
  std::vector<ConvLstmState> state(vars.lstm.size());
  for (auto& st : state) {
    st.h = tape.leaf(Tensor<T>(fs));
    st.c = tape.leaf(Tensor<T>(fs));
  }
  PredictedSequence<T> seq;
  for (int t = 0; t < max_steps; ++t) {
    Var x = features;
    for (std::size_t l = 0; l < vars.lstm.size(); ++l) {
      state[l] = conv_lstm_step(tape, x, state[l], vars.lstm[l]);
      x = state[l].h;
    }
    Var mask = segment_head(tape, state.back().h, vars.head, image.shape[1],
                            image.shape[2], cfg.sigmoid_before_upsample);
    Var score = confidence_head(tape, state.back().h, vars.head);
    seq.masks.push_back(tape.val(mask));
    seq.scores.push_back(tape.val(score)[0]);
    if (static_cast<double>(seq.scores.back()) < stop_threshold) break;
  }
  return seq;
}

}  // namespace ris
