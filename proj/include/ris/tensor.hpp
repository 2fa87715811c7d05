#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ris {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline void check_shape_valid(const Shape& shape) {
  for (int e : shape) {
    if (e < 1) {
      throw std::invalid_argument("invalid shape " + shape_str(shape) +
                                  ": extents must be >= 1");
    }
  }
}

// Dense row-major array. Plain value type: copy/move do what you expect.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)) {
    check_shape_valid(shape);
    data.assign(static_cast<std::size_t>(numel(shape)), T(0));
  }
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    check_shape_valid(shape);
    if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
      throw std::invalid_argument("tensor data length " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  bool empty() const { return data.empty(); }
  bool is_scalar() const { return size() == 1; }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data[static_cast<std::size_t>(i)];
  }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // [C,H,W] accessor; the 3-d layout is pervasive in this codebase.
  T& at3(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  const T& at3(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

template <typename T>
Tensor<T> zeros(Shape shape) {
  return Tensor<T>(std::move(shape));
}

template <typename T>
Tensor<T> full(Shape shape, T value) {
  Tensor<T> t(std::move(shape));
  t.fill(value);
  return t;
}

// Deterministic for a fixed seed within one build.
template <typename T>
Tensor<T> uniform(Shape shape, double lo, double hi, std::uint64_t seed) {
  if (lo > hi) throw std::invalid_argument("uniform: lo > hi");
  Tensor<T> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <typename T>
void add_to(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.shape != src.shape) {
    throw std::invalid_argument("add_to: shape mismatch " +
                                shape_str(dst.shape) + " vs " +
                                shape_str(src.shape));
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
void add_scaled(Tensor<T>& dst, const Tensor<T>& src, T scale) {
  if (dst.shape != src.shape) {
    throw std::invalid_argument("add_scaled: shape mismatch");
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i)
    dst.data[i] += scale * src.data[i];
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    acc += static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]);
  return acc;
}

template <typename T>
double abs_sum(const Tensor<T>& t) {
  double acc = 0;
  for (T v : t.data) acc += std::abs(static_cast<double>(v));
  return acc;
}

template <typename T>
double max_abs(const Tensor<T>& t) {
  double m = 0;
  for (T v : t.data) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

// splitmix64; used to derive independent per-item seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace ris
