#pragma once

#include <vector>

#include "ris/ops.hpp"

namespace ris {

template <typename E>
struct Conv2dParamsT {
  E weight;  // [out_ch, in_ch, f, f]
  E bias;    // [out_ch]
};

template <typename T>
using Conv2dParams = Conv2dParamsT<Tensor<T>>;
using Conv2dParamsVars = Conv2dParamsT<Var>;

template <typename T>
Conv2dParams<T> make_conv2d_params(int out_ch, int in_ch, int kernel) {
  if (out_ch < 1 || in_ch < 1)
    throw std::invalid_argument("conv2d params: channels must be >= 1");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("conv2d params: kernel must be odd");
  return Conv2dParams<T>{Tensor<T>(Shape{out_ch, in_ch, kernel, kernel}),
                         Tensor<T>(Shape{out_ch})};
}

// Feature extractor: a chain of same-padded convolutions, each followed by a
// ReLU. The first convolution may be strided, which is the only place the
// spatial resolution drops; everything downstream (recurrent state, masks
// before upsampling) lives at the reduced h' x w'.
template <typename E>
struct FcnParamsT {
  std::vector<Conv2dParamsT<E>> layers;
  int stride = 1;  // applied to the first layer only
};

template <typename T>
using FcnParams = FcnParamsT<Tensor<T>>;
using FcnParamsVars = FcnParamsT<Var>;

// Standard stack: first layer maps in_ch -> d with a large kernel, the rest
// keep d channels with small kernels.
template <typename T>
FcnParams<T> make_fcn_params(int in_ch, int d, int num_layers, int first_kernel,
                             int kernel, int stride) {
  if (num_layers < 1) throw std::invalid_argument("fcn: need at least one layer");
  FcnParams<T> p;
  p.stride = stride;
  p.layers.push_back(make_conv2d_params<T>(d, in_ch, first_kernel));
  for (int i = 1; i < num_layers; ++i)
    p.layers.push_back(make_conv2d_params<T>(d, d, kernel));
  return p;
}

template <typename T>
Var fcn_extract(Tape<T>& tape, Var image, const FcnParamsVars& p, int stride) {
  if (p.layers.empty()) throw std::invalid_argument("fcn_extract: no layers");
  const auto& img = tape.val(image);
  if (img.shape.size() != 3)
    throw std::invalid_argument("fcn_extract: image must be [C,H,W]");
  const int f0 = tape.val(p.layers.front().weight).shape[2];
  if (img.shape[1] < f0 || img.shape[2] < f0) {
    throw std::invalid_argument("fcn_extract: image " + shape_str(img.shape) +
                                " smaller than first kernel " + std::to_string(f0));
  }
  Var x = image;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    x = conv2d(tape, x, p.layers[i].weight, p.layers[i].bias, Padding::Same,
               i == 0 ? stride : 1);
    x = relu(tape, x);
  }
  return x;
}

}  // namespace ris
