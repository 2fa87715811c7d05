#pragma once

#include <vector>

#include "ris/ops.hpp"

namespace ris {

// One gate of a convolutional LSTM: a filter over the step input, a filter
// over the previous hidden state, and a per-channel bias. The E parameter is
// Tensor<T> for stored parameters and Var once bound to a tape.
template <typename E>
struct ConvLstmGateT {
  E w_x;  // [d,d,f,f]
  E w_h;  // [d,d,f,f]
  E b;    // [d]
};

template <typename E>
struct ConvLstmLayerT {
  ConvLstmGateT<E> in_gate, forget_gate, out_gate, cell_gate;
};

template <typename T>
using ConvLstmLayer = ConvLstmLayerT<Tensor<T>>;
using ConvLstmLayerVars = ConvLstmLayerT<Var>;

struct ConvLstmState {
  Var h, c;
};

template <typename T>
ConvLstmLayer<T> make_conv_lstm_layer(int channels, int kernel) {
  if (channels < 1) throw std::invalid_argument("conv_lstm: channels must be >= 1");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("conv_lstm: gate kernel must be odd and >= 1");
  const Shape w{channels, channels, kernel, kernel};
  const Shape b{channels};
  auto gate = [&] {
    return ConvLstmGateT<Tensor<T>>{Tensor<T>(w), Tensor<T>(w), Tensor<T>(b)};
  };
  return ConvLstmLayer<T>{gate(), gate(), gate(), gate()};
}

namespace detail {

template <typename T>
Var gate_preact(Tape<T>& tape, Var x, Var h_prev, const ConvLstmGateT<Var>& g) {
  Var from_x = conv2d(tape, x, g.w_x, g.b, Padding::Same);
  Var from_h = conv2d(tape, h_prev, g.w_h, Var{}, Padding::Same);
  return add(tape, from_x, from_h);
}

}  // namespace detail

// One recurrent update:
//   i,f,o = sigmoid(conv(x) + conv(h_{t-1}) + bias)
//   g     = tanh   (conv(x) + conv(h_{t-1}) + bias)
//   c_t   = f (.) c_{t-1} + i (.) g
//   h_t   = o (.) tanh(c_t)
template <typename T>
ConvLstmState conv_lstm_step(Tape<T>& tape, Var x, const ConvLstmState& prev,
                             const ConvLstmLayerVars& p) {
  const auto& xs = tape.val(x).shape;
  if (tape.val(prev.h).shape != xs || tape.val(prev.c).shape != xs) {
    throw std::invalid_argument("conv_lstm_step: state shape " +
                                shape_str(tape.val(prev.h).shape) +
                                " does not match input " + shape_str(xs));
  }
  Var i = sigmoid(tape, detail::gate_preact(tape, x, prev.h, p.in_gate));
  Var f = sigmoid(tape, detail::gate_preact(tape, x, prev.h, p.forget_gate));
  Var o = sigmoid(tape, detail::gate_preact(tape, x, prev.h, p.out_gate));
  Var g = tanh_op(tape, detail::gate_preact(tape, x, prev.h, p.cell_gate));
  Var c = add(tape, mul(tape, f, prev.c), mul(tape, i, g));
  Var h = mul(tape, o, tanh_op(tape, c));
  return ConvLstmState{h, c};
}

// Unrolls a stack of layers over a constant input map for `steps` iterations.
// Every layer starts from the all-zero state; layer l>0 consumes the hidden
// state of layer l-1 as its step input. Returns the top layer's state at
// each step.
template <typename T>
std::vector<ConvLstmState> conv_lstm_unroll(Tape<T>& tape, Var input,
                                            const std::vector<ConvLstmLayerVars>& layers,
                                            int steps) {
  if (layers.empty()) throw std::invalid_argument("conv_lstm_unroll: no layers");
  if (steps < 1) throw std::invalid_argument("conv_lstm_unroll: steps must be >= 1");
  const Shape s = tape.val(input).shape;
  std::vector<ConvLstmState> state(layers.size());
  for (auto& st : state) {
    st.h = tape.leaf(Tensor<T>(s));
    st.c = tape.leaf(Tensor<T>(s));
  }
  std::vector<ConvLstmState> top;
  top.reserve(steps);
  for (int t = 0; t < steps; ++t) {
    Var x = input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      state[l] = conv_lstm_step(tape, x, state[l], layers[l]);
      x = state[l].h;
    }
    top.push_back(state.back());
  }
  return top;
}

}  // namespace ris
