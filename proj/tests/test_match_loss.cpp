#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ris/match_loss.hpp"
#include "ris/ops.hpp"
#include "support/fd.hpp"

using ris::InstanceLabelSet;
using ris::LossConfig;
using ris::PredictedSequence;
using ris::Shape;
using ris::Tensor;

namespace {

Tensor<double> random_binary_mask(int h, int w, std::mt19937_64& rng,
                                  double density = 0.3) {
  std::uniform_real_distribution<double> unif(0, 1);
  Tensor<double> m({h, w});
  bool any = false;
  for (auto& v : m.data) {
    v = unif(rng) < density ? 1.0 : 0.0;
    any |= (v > 0);
  }
  if (!any) m[0] = 1.0;  // labels are nonempty by dataset invariant
  return m;
}

Tensor<double> random_soft_mask(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.02, 0.98);
  Tensor<double> m({h, w});
  for (auto& v : m.data) v = unif(rng);
  return m;
}

InstanceLabelSet<double> random_labels(int n, int h, int w, std::mt19937_64& rng) {
  InstanceLabelSet<double> y;
  for (int i = 0; i < n; ++i) y.masks.push_back(random_binary_mask(h, w, rng));
  return y;
}

PredictedSequence<double> random_preds(int n_hat, int h, int w,
                                       std::mt19937_64& rng) {
  PredictedSequence<double> p;
  std::uniform_real_distribution<double> sc(0.1, 0.9);
  for (int i = 0; i < n_hat; ++i) {
    p.masks.push_back(random_soft_mask(h, w, rng));
    p.scores.push_back(sc(rng));
  }
  return p;
}

}  // namespace

TEST_CASE("relaxed IoU analytic cases", "[matchloss][iou]") {
  std::mt19937_64 rng(1);
  auto y = random_binary_mask(6, 6, rng);

  REQUIRE(ris::relaxed_iou(y, y) == Catch::Approx(1.0).margin(1e-14));

  Tensor<double> disjoint(y.shape);
  for (std::int64_t i = 0; i < y.size(); ++i) disjoint[i] = y[i] > 0 ? 0.0 : 1.0;
  REQUIRE(ris::relaxed_iou(disjoint, y) == 0.0);

  // p = y/2 on support size k: I = k/2, D = k/2 + k - k/2 = k
  Tensor<double> half = y;
  for (auto& v : half.data) v *= 0.5;
  REQUIRE(ris::relaxed_iou(half, y) == Catch::Approx(0.5).margin(1e-14));

  // symmetric in its arguments
  auto p = random_soft_mask(6, 6, rng);
  REQUIRE(ris::relaxed_iou(p, y) == Catch::Approx(ris::relaxed_iou(y, p)).margin(1e-14));

  // both-empty input is defined as zero
  Tensor<double> z({4, 4});
  REQUIRE(ris::relaxed_iou(z, z) == 0.0);
  for (double g : ris::relaxed_iou_grad(z, z).data) REQUIRE(g == 0.0);
}

TEST_CASE("relaxed IoU gradient matches finite differences", "[matchloss][iou]") {
  std::mt19937_64 rng(2);
  auto y = random_binary_mask(8, 8, rng);
  auto p = random_soft_mask(8, 8, rng);
  auto g = ris::relaxed_iou_grad(p, y);
  auto numeric = fd::central_diff(
      [&](const std::vector<double>& x) {
        Tensor<double> q(p.shape, x);
        return ris::relaxed_iou(q, y);
      },
      p.data, 1e-6);
  for (std::int64_t i = 0; i < g.size(); ++i)
    REQUIRE(fd::rel_err(g[i], numeric[i]) < 1e-6);
}

TEST_CASE("relaxed IoU gradient signs", "[matchloss][iou]") {
  std::mt19937_64 rng(3);
  auto y = random_binary_mask(5, 5, rng);
  auto p = random_soft_mask(5, 5, rng);
  double inter = 0, psum = 0, ysum = 0;
  for (std::int64_t i = 0; i < p.size(); ++i) {
    inter += p[i] * y[i];
    psum += p[i];
    ysum += y[i];
  }
  const double denom = psum + ysum - inter;
  auto g = ris::relaxed_iou_grad(p, y);
  for (std::int64_t i = 0; i < p.size(); ++i) {
    if (y[i] == 0.0) {
      // raising a background pixel can only hurt: gradient is -I/D^2
      REQUIRE(g[i] == Catch::Approx(-inter / (denom * denom)).margin(1e-12));
      REQUIRE(g[i] <= 0.0);
    } else {
      REQUIRE(g[i] > 0.0);
    }
  }
}

TEST_CASE("loss on a perfect prediction approaches -n", "[matchloss]") {
  std::mt19937_64 rng(4);
  const int n = 3;
  auto y = random_labels(n, 8, 8, rng);
  PredictedSequence<double> pred;
  for (int t = 0; t < n; ++t) {
    pred.masks.push_back(y.masks[t]);
    pred.scores.push_back(1.0 - 1e-7);
  }
  for (int t = 0; t < 2; ++t) {
    pred.masks.push_back(Tensor<double>(Shape{8, 8}));
    pred.scores.push_back(1e-7);
  }
  auto lv = ris::loss_forward(pred, y, LossConfig{});
  REQUIRE(lv.cost == Catch::Approx(-double(n)).margin(1e-5));
  REQUIRE(lv.match.matched_sum == Catch::Approx(double(n)).margin(1e-12));
}

TEST_CASE("loss with no ground truth is pure confidence penalty", "[matchloss]") {
  PredictedSequence<double> pred;
  pred.masks.push_back(ris::full<double>({4, 4}, 0.2));
  pred.masks.push_back(ris::full<double>({4, 4}, 0.7));
  pred.scores = {0.5, 0.5};
  auto lv = ris::loss_forward(pred, InstanceLabelSet<double>{}, LossConfig{});
  REQUIRE(lv.cost == Catch::Approx(2.0 * std::log(2.0)).margin(1e-12));
}

TEST_CASE("scores at the boundary are clamped, not logged to infinity",
          "[matchloss]") {
  PredictedSequence<double> pred;
  pred.masks.push_back(ris::full<double>({2, 2}, 0.5));
  pred.scores = {1.0};
  auto lv = ris::loss_forward(pred, InstanceLabelSet<double>{}, LossConfig{});
  REQUIRE(std::isfinite(lv.cost));
}

TEST_CASE("ground-truth permutation leaves the cost bit-identical", "[matchloss]") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + int(rng() % 5);
    const int n_hat = n + 2;
    auto y = random_labels(n, 6, 6, rng);
    auto pred = random_preds(n_hat, 6, 6, rng);
    const double base = ris::loss_forward(pred, y, LossConfig{}).cost;
    auto shuffled = y;
    std::shuffle(shuffled.masks.begin(), shuffled.masks.end(), rng);
    REQUIRE(ris::loss_forward(pred, shuffled, LossConfig{}).cost == base);
  }
}

TEST_CASE("IoU term is invariant to prediction order", "[matchloss]") {
  std::mt19937_64 rng(6);
  const int n = 4;
  auto y = random_labels(n, 6, 6, rng);
  auto pred = random_preds(n, 6, 6, rng);  // n_hat == n: every mask in play
  const double sum0 = ris::loss_forward(pred, y, LossConfig{}).match.matched_sum;
  for (int trial = 0; trial < 10; ++trial) {
    auto shuffled = pred;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < n; ++i) shuffled.masks[i] = pred.masks[perm[i]];
    REQUIRE(ris::loss_forward(shuffled, y, LossConfig{}).match.matched_sum ==
            Catch::Approx(sum0).margin(1e-12));
  }
}

TEST_CASE("forward cost is the minimum over sampled feasible matchings",
          "[matchloss][property]") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 1 + int(rng() % 4);
    const int n_hat = 1 + int(rng() % 6);
    auto y = random_labels(n, 5, 5, rng);
    auto pred = random_preds(n_hat, 5, 5, rng);
    auto lv = ris::loss_forward(pred, y, LossConfig{});

    const int rows = std::min(n, n_hat);
    for (int s = 0; s < 50; ++s) {
      // random feasible matching: random subset of rows to random distinct cols
      ris::MatchResult random_match;
      random_match.rows = rows;
      random_match.cols = n;
      random_match.row_to_col.assign(rows, -1);
      std::vector<int> cols(n);
      std::iota(cols.begin(), cols.end(), 0);
      std::shuffle(cols.begin(), cols.end(), rng);
      int next_col = 0;
      for (int r = 0; r < rows && next_col < n; ++r)
        if (rng() % 2) random_match.row_to_col[r] = cols[next_col++];
      const double other = ris::cost_given_match(pred, y, random_match, LossConfig{});
      REQUIRE(lv.cost <= other + 1e-9);
    }
  }
}

TEST_CASE("backward matches finite differences with the matching fixed",
          "[matchloss][gradcheck]") {
  std::mt19937_64 rng(8);
  const int n = 3, n_hat = 5, h = 8, w = 8;
  auto y = random_labels(n, h, w, rng);
  auto pred = random_preds(n_hat, h, w, rng);
  const LossConfig cfg;

  auto lv = ris::loss_forward(pred, y, cfg);
  auto grads = ris::loss_backward(pred, y, lv.match, cfg);

  // flatten all mask pixels and scores into one parameter vector
  std::vector<double> flat;
  for (const auto& m : pred.masks) flat.insert(flat.end(), m.data.begin(), m.data.end());
  for (double s : pred.scores) flat.push_back(s);

  auto rebuild = [&](const std::vector<double>& x) {
    PredictedSequence<double> q = pred;
    std::size_t k = 0;
    for (auto& m : q.masks)
      for (auto& v : m.data) v = x[k++];
    for (auto& s : q.scores) s = x[k++];
    return q;
  };
  auto numeric = fd::central_diff(
      [&](const std::vector<double>& x) {
        return ris::cost_given_match(rebuild(x), y, lv.match, cfg);
      },
      flat, 1e-6);

  std::size_t k = 0;
  double worst = 0;
  for (const auto& gm : grads.masks)
    for (double g : gm.data) worst = std::max(worst, fd::rel_err(g, numeric[k++]));
  for (double gs : grads.scores) worst = std::max(worst, fd::rel_err(gs, numeric[k++]));
  REQUIRE(worst < 1e-5);
}

TEST_CASE("unmatched trailing masks receive zero gradient", "[matchloss]") {
  std::mt19937_64 rng(9);
  const int n = 2, n_hat = 4;
  auto y = random_labels(n, 5, 5, rng);
  auto pred = random_preds(n_hat, 5, 5, rng);
  auto lv = ris::loss_forward(pred, y, LossConfig{});
  auto grads = ris::loss_backward(pred, y, lv.match, LossConfig{});
  for (int t = n; t < n_hat; ++t)
    for (double g : grads.masks[t].data) REQUIRE(g == 0.0);
}

TEST_CASE("score gradient at one half is minus two", "[matchloss]") {
  std::mt19937_64 rng(10);
  auto y = random_labels(1, 4, 4, rng);
  PredictedSequence<double> pred;
  pred.masks.push_back(random_soft_mask(4, 4, rng));
  pred.scores = {0.5};
  auto lv = ris::loss_forward(pred, y, LossConfig{});
  auto grads = ris::loss_backward(pred, y, lv.match, LossConfig{});
  REQUIRE(grads.scores[0] == Catch::Approx(-2.0).margin(1e-12));
}

TEST_CASE("a stale matching is rejected", "[matchloss]") {
  std::mt19937_64 rng(11);
  auto y = random_labels(3, 5, 5, rng);
  auto pred = random_preds(5, 5, 5, rng);
  auto lv = ris::loss_forward(pred, y, LossConfig{});

  auto other_pred = random_preds(5, 5, 5, rng);
  REQUIRE_THROWS_AS(ris::loss_backward(other_pred, y, lv.match, LossConfig{}),
                    ris::StaleMatchError);

  auto wrong_dims = lv.match;
  wrong_dims.rows = 1;
  wrong_dims.row_to_col.resize(1);
  REQUIRE_THROWS_AS(ris::loss_backward(pred, y, wrong_dims, LossConfig{}),
                    ris::StaleMatchError);
}

TEST_CASE("match_loss_op wires the explicit gradients into the tape",
          "[matchloss][tape]") {
  std::mt19937_64 rng(12);
  const int n = 2, n_hat = 3, h = 4, w = 4;
  auto y = random_labels(n, h, w, rng);

  // masks and scores produced by differentiable ops so the chain continues
  std::vector<Tensor<double>> raw_masks;
  std::vector<double> raw_scores = {0.3, 0.6, 0.4};
  for (int t = 0; t < n_hat; ++t) raw_masks.push_back(random_soft_mask(h, w, rng));

  ris::Tape<double> tape;
  std::vector<ris::Var> mask_leafs, mask_vars, score_leafs, score_vars;
  for (int t = 0; t < n_hat; ++t) {
    mask_leafs.push_back(tape.leaf(raw_masks[t]));
    mask_vars.push_back(ris::scale(tape, mask_leafs[t], 1.0));
    Tensor<double> s({1});
    s[0] = raw_scores[t];
    score_leafs.push_back(tape.leaf(s));
    score_vars.push_back(ris::scale(tape, score_leafs[t], 1.0));
  }
  auto loss = ris::match_loss_op(tape, mask_vars, score_vars, y, LossConfig{});
  tape.backward(loss);

  PredictedSequence<double> pred;
  pred.masks = raw_masks;
  for (double s : raw_scores) pred.scores.push_back(s);
  auto lv = ris::loss_forward(pred, y, LossConfig{});
  REQUIRE(tape.val(loss)[0] == Catch::Approx(lv.cost).margin(1e-12));
  auto grads = ris::loss_backward(pred, y, lv.match, LossConfig{});
  for (int t = 0; t < n_hat; ++t) {
    for (std::int64_t i = 0; i < raw_masks[t].size(); ++i)
      REQUIRE(tape.grad(mask_leafs[t])[i] ==
              Catch::Approx(grads.masks[t][i]).margin(1e-12));
    REQUIRE(tape.grad(score_leafs[t])[0] ==
            Catch::Approx(grads.scores[t]).margin(1e-12));
  }
}

TEST_CASE("loss config validation", "[matchloss]") {
  LossConfig bad;
  bad.lambda = -1;
  PredictedSequence<double> pred;
  REQUIRE_THROWS_AS(ris::loss_forward(pred, InstanceLabelSet<double>{}, bad),
                    std::invalid_argument);
  bad.lambda = 1;
  bad.score_epsilon = 0.7;
  REQUIRE_THROWS_AS(ris::loss_forward(pred, InstanceLabelSet<double>{}, bad),
                    std::invalid_argument);
}
