#include <catch2/catch_amalgamated.hpp>

#include "ris/fcn.hpp"
#include "support/fd.hpp"

using ris::Shape;
using ris::Tensor;
using ris::Var;

namespace {

template <typename T>
ris::FcnParamsVars bind_fcn(ris::Tape<T>& t, const ris::FcnParams<T>& p) {
  ris::FcnParamsVars vars;
  vars.stride = p.stride;
  for (const auto& l : p.layers)
    vars.layers.push_back(ris::Conv2dParamsVars{t.leaf(l.weight), t.leaf(l.bias)});
  return vars;
}

template <typename T>
void randomize(ris::FcnParams<T>& p, std::uint64_t seed) {
  std::uint64_t i = 0;
  for (auto& l : p.layers) {
    l.weight = ris::uniform<T>(l.weight.shape, -0.3, 0.3, seed + i++);
    l.bias = ris::uniform<T>(l.bias.shape, -0.1, 0.1, seed + i++);
  }
}

}  // namespace

TEST_CASE("zero weights produce an all-zero feature map", "[fcn]") {
  auto p = ris::make_fcn_params<double>(1, 4, 3, 5, 3, 1);
  ris::Tape<double> t;
  auto out = ris::fcn_extract(t, t.leaf(ris::uniform<double>({1, 12, 12}, -1, 1, 1)),
                              bind_fcn(t, p), p.stride);
  for (double v : t.val(out).data) REQUIRE(v == 0.0);
}

TEST_CASE("paper-scale configuration reproduces the documented shape", "[fcn]") {
  // 30 channels, 9x9 first kernel with stride 5, four 3x3 layers after:
  // a 500x530 input comes out as 100x106.
  auto p = ris::make_fcn_params<float>(3, 30, 5, 9, 3, 5);
  randomize(p, 77);
  ris::Tape<float> t;
  auto out = ris::fcn_extract(t, t.leaf(ris::uniform<float>({3, 500, 530}, 0, 1, 2)),
                              bind_fcn(t, p), p.stride);
  REQUIRE(t.val(out).shape == Shape{30, 100, 106});
}

TEST_CASE("desk-scale configuration halves the resolution", "[fcn]") {
  auto p = ris::make_fcn_params<double>(3, 16, 5, 9, 3, 2);
  ris::Tape<double> t;
  auto out = ris::fcn_extract(t, t.leaf(ris::zeros<double>({3, 64, 64})),
                              bind_fcn(t, p), p.stride);
  REQUIRE(t.val(out).shape == Shape{16, 32, 32});
}

TEST_CASE("images smaller than the first kernel are rejected", "[fcn]") {
  auto p = ris::make_fcn_params<double>(1, 4, 2, 9, 3, 1);
  ris::Tape<double> t;
  auto img = t.leaf(ris::zeros<double>({1, 6, 6}));
  REQUIRE_THROWS_AS(ris::fcn_extract(t, img, bind_fcn(t, p), p.stride),
                    std::invalid_argument);
}

TEST_CASE("interior translation covariance", "[fcn]") {
  // shifting the input by `stride` pixels shifts the feature map by one,
  // away from the zero-padded boundary
  const int stride = 2;
  auto p = ris::make_fcn_params<double>(1, 3, 2, 5, 3, stride);
  randomize(p, 88);

  auto base = ris::uniform<double>({1, 40, 40}, 0, 1, 9);
  Tensor<double> shifted({1, 40, 40});
  for (int y = 0; y + stride < 40; ++y)
    for (int x = 0; x < 40; ++x) shifted.at3(0, y, x) = base.at3(0, y + stride, x);

  ris::Tape<double> t;
  auto out_a = t.val(ris::fcn_extract(t, t.leaf(base), bind_fcn(t, p), stride));
  auto out_b = t.val(ris::fcn_extract(t, t.leaf(shifted), bind_fcn(t, p), stride));

  const int margin = 6;
  const int ho = out_a.shape[1], wo = out_a.shape[2];
  for (int c = 0; c < out_a.shape[0]; ++c)
    for (int y = margin; y < ho - margin - 1; ++y)
      for (int x = margin; x < wo - margin; ++x)
        REQUIRE(out_b.at3(c, y, x) ==
                Catch::Approx(out_a.at3(c, y + 1, x)).margin(1e-9));
}

TEST_CASE("reduced two-layer stack matches finite differences", "[fcn][gradcheck]") {
  auto worst = fd::gradcheck(
      [](ris::Tape<double>& t, const std::vector<Var>& v) {
        ris::FcnParamsVars vars;
        vars.stride = 2;
        vars.layers.push_back(ris::Conv2dParamsVars{v[0], v[1]});
        vars.layers.push_back(ris::Conv2dParamsVars{v[2], v[3]});
        auto out = ris::fcn_extract(t, v[4], vars, vars.stride);
        return ris::sum(t, ris::mul(t, out, out));
      },
      {ris::uniform<double>({3, 1, 5, 5}, -0.5, 0.5, 10),
       ris::uniform<double>({3}, -0.2, 0.2, 11),
       ris::uniform<double>({3, 3, 3, 3}, -0.5, 0.5, 12),
       ris::uniform<double>({3}, -0.2, 0.2, 13),
       ris::uniform<double>({1, 8, 8}, 0.05, 1, 14)});
  REQUIRE(worst < 1e-5);
}
