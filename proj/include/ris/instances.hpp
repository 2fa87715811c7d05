#pragma once

#include <vector>

#include "ris/tensor.hpp"

namespace ris {

// Ground-truth annotation: one binary [H,W] mask per instance. Masks are
// stored in T for arithmetic convenience but hold only 0/1 values.
template <typename T>
struct InstanceLabelSet {
  std::vector<Tensor<T>> masks;

  int count() const { return static_cast<int>(masks.size()); }
};

// Model output: soft masks in [0,1]^{HxW} with one confidence score each.
template <typename T>
struct PredictedSequence {
  std::vector<Tensor<T>> masks;
  std::vector<T> scores;

  int count() const { return static_cast<int>(masks.size()); }
};

}  // namespace ris
