#pragma once

#include "ris/fcn.hpp"
#include "ris/ops.hpp"

namespace ris {

// Parameters of the two read-out heads that turn the recurrent state into
// one instance mask plus a confidence score.
template <typename E>
struct HeadParamsT {
  Conv2dParamsT<E> proj;  // d -> 1, 1x1 filter
  E threshold;            // learned scalar added after the log-softmax
  E conf_weight;          // [1, d]
  E conf_bias;            // [1]
};

template <typename T>
using HeadParams = HeadParamsT<Tensor<T>>;
using HeadParamsVars = HeadParamsT<Var>;

template <typename T>
HeadParams<T> make_head_params(int d) {
  return HeadParams<T>{make_conv2d_params<T>(1, d, 1), Tensor<T>(Shape{1}),
                       Tensor<T>(Shape{1, d}), Tensor<T>(Shape{1})};
}

// Mask head. A 1x1 convolution collapses the state to one channel, a spatial
// log-softmax makes the pixels compete (the winner suppresses everything
// else), a learned scalar threshold shifts the map, and a sigmoid squashes it
// into [0,1] at full image resolution. The sigmoid is applied after the
// bilinear upsampling by default; `sigmoid_before_upsample` swaps that order.
template <typename T>
Var segment_head(Tape<T>& tape, Var state, const HeadParamsVars& p, int out_h,
                 int out_w, bool sigmoid_before_upsample = false) {
  Var z = conv2d(tape, state, p.proj.weight, p.proj.bias, Padding::Same);
  z = log_softmax_spatial(tape, z);
  z = bias_scalar_add(tape, z, p.threshold);
  if (sigmoid_before_upsample) {
    z = sigmoid(tape, z);
    return upsample_bilinear(tape, z, out_h, out_w);
  }
  z = upsample_bilinear(tape, z, out_h, out_w);
  return sigmoid(tape, z);
}

// Confidence head: global max-pool per channel, linear layer, sigmoid.
template <typename T>
Var confidence_head(Tape<T>& tape, Var state, const HeadParamsVars& p) {
  Var pooled = global_maxpool(tape, state);
  Var s = linear(tape, pooled, p.conf_weight, p.conf_bias);
  return sigmoid(tape, s);
}

// Per-pixel sum of absolute state values across channels. Diagnostic view of
// what the recurrent memory is tracking; never part of the training graph.
template <typename T>
Tensor<T> state_summary(const Tensor<T>& h) {
  if (h.shape.size() != 3)
    throw std::invalid_argument("state_summary: state must be [C,H,W]");
  const int c = h.shape[0], hh = h.shape[1], ww = h.shape[2];
  Tensor<T> out(Shape{1, hh, ww});
  for (int ic = 0; ic < c; ++ic)
    for (int y = 0; y < hh; ++y)
      for (int x = 0; x < ww; ++x) out.at3(0, y, x) += std::abs(h.at3(ic, y, x));
  return out;
}

}  // namespace ris
