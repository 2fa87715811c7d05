#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "ris/assignment.hpp"
#include "ris/instances.hpp"
#include "ris/tape.hpp"

namespace ris {

struct LossConfig {
  double lambda = 1.0;         // weight of the confidence term
  double score_epsilon = 1e-7; // scores clamped to [eps, 1-eps] before the logs

  void validate() const {
    if (lambda < 0) throw std::invalid_argument("LossConfig: lambda must be >= 0");
    if (!(score_epsilon > 0 && score_epsilon < 0.5))
      throw std::invalid_argument("LossConfig: score_epsilon must be in (0, 0.5)");
  }
};

// Soft intersection-over-union: <p,y> / (|p|_1 + |y|_1 - <p,y>). Equals the
// discrete IoU when p is binary; both-empty input is defined as 0.
template <typename T>
double relaxed_iou(const Tensor<T>& pred, const Tensor<T>& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("relaxed_iou: mask size mismatch");
  double inter = 0, psum = 0, ysum = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const double p = static_cast<double>(pred[i]);
    const double y = static_cast<double>(truth[i]);
    inter += p * y;
    psum += p;
    ysum += y;
  }
  const double denom = psum + ysum - inter;
  if (denom <= 0) return 0.0;
  return inter / denom;
}

// d f_IoU / d pred, per pixel: (y*D - I*(1-y)) / D^2 with I = <p,y> and
// D = |p|_1 + |y|_1 - I. Zero everywhere when both masks are empty.
template <typename T>
Tensor<T> relaxed_iou_grad(const Tensor<T>& pred, const Tensor<T>& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("relaxed_iou_grad: mask size mismatch");
  double inter = 0, psum = 0, ysum = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const double p = static_cast<double>(pred[i]);
    const double y = static_cast<double>(truth[i]);
    inter += p * y;
    psum += p;
    ysum += y;
  }
  const double denom = psum + ysum - inter;
  Tensor<T> g(pred.shape);
  if (denom <= 0) return g;
  const double d2 = denom * denom;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const double y = static_cast<double>(truth[i]);
    g[i] = static_cast<T>((y * denom - inter * (1.0 - y)) / d2);
  }
  return g;
}

namespace detail {

inline double clamp_score(double s, double eps) {
  return std::min(std::max(s, eps), 1.0 - eps);
}

// Binary cross entropy -(a log b + (1-a) log(1-b)) with a in {0,1}.
inline double bce(int target, double s) {
  return target ? -std::log(s) : -std::log(1.0 - s);
}

inline double bce_grad(int target, double s) {
  return target ? -1.0 / s : 1.0 / (1.0 - s);
}

template <typename T>
double score_terms(const PredictedSequence<T>& pred, int n, const LossConfig& cfg) {
  double acc = 0;
  for (int t = 0; t < pred.count(); ++t) {
    const double s = clamp_score(static_cast<double>(pred.scores[t]),
                                 cfg.score_epsilon);
    acc += bce(t < n ? 1 : 0, s);
  }
  return acc;
}

}  // namespace detail

struct LossValue {
  double cost = 0.0;
  MatchResult match;
};

// Forward pass of the set loss: fill the pairwise soft-IoU matrix over the
// first min(n, n_hat) predictions, solve the assignment, and combine
//   cost = -matched_sum + lambda * sum_t BCE([t <= n], s_t).
// Ground-truth order cannot matter: the matching minimizes over all feasible
// assignments.
template <typename T>
LossValue loss_forward(const PredictedSequence<T>& pred,
                       const InstanceLabelSet<T>& truth, const LossConfig& cfg) {
  cfg.validate();
  const int n = truth.count();
  const int n_hat = pred.count();
  const int n_tilde = std::min(n, n_hat);
  ScoreMatrix m(n_tilde, n);
  for (int i = 0; i < n_tilde; ++i)
    for (int j = 0; j < n; ++j) m.at(i, j) = relaxed_iou(pred.masks[i], truth.masks[j]);
  LossValue out;
  out.match = hungarian(m);
  out.cost = -out.match.matched_sum + cfg.lambda * detail::score_terms(pred, n, cfg);
  return out;
}

// Loss under a caller-fixed assignment; used where the matching must be held
// constant while the masks move (finite-difference probes, switch analysis).
template <typename T>
double cost_given_match(const PredictedSequence<T>& pred,
                        const InstanceLabelSet<T>& truth, const MatchResult& match,
                        const LossConfig& cfg) {
  cfg.validate();
  const int n = truth.count();
  double iou_sum = 0;
  for (int i = 0; i < match.rows; ++i) {
    const int j = match.row_to_col[i];
    if (j >= 0) iou_sum += relaxed_iou(pred.masks[i], truth.masks[j]);
  }
  return -iou_sum + cfg.lambda * detail::score_terms(pred, n, cfg);
}

struct StaleMatchError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct LossGradients {
  std::vector<Tensor<T>> masks;
  std::vector<T> scores;
};

// Backward pass with the matching frozen at the forward solution: matched
// masks receive -d f_IoU / d pred (the cost carries the IoU negatively),
// unmatched masks receive zero, and every score receives the BCE derivative
// for its [t <= n] target.
template <typename T>
LossGradients<T> loss_backward(const PredictedSequence<T>& pred,
                               const InstanceLabelSet<T>& truth,
                               const MatchResult& match, const LossConfig& cfg) {
  cfg.validate();
  const int n = truth.count();
  const int n_hat = pred.count();
  if (match.rows != std::min(n, n_hat) || match.cols != n ||
      static_cast<int>(match.row_to_col.size()) != match.rows) {
    throw StaleMatchError("loss_backward: match dimensions do not fit inputs");
  }
  double recomputed = 0;
  LossGradients<T> g;
  g.masks.reserve(n_hat);
  g.scores.resize(n_hat);
  for (int t = 0; t < n_hat; ++t) {
    const int j = t < match.rows ? match.row_to_col[t] : -1;
    if (j >= 0) {
      if (j >= n) throw StaleMatchError("loss_backward: assignment out of range");
      recomputed += relaxed_iou(pred.masks[t], truth.masks[j]);
      Tensor<T> gm = relaxed_iou_grad(pred.masks[t], truth.masks[j]);
      for (auto& v : gm.data) v = -v;
      g.masks.push_back(std::move(gm));
    } else {
      g.masks.emplace_back(pred.masks[t].shape);
    }
    const double s = detail::clamp_score(static_cast<double>(pred.scores[t]),
                                         cfg.score_epsilon);
    g.scores[t] = static_cast<T>(cfg.lambda * detail::bce_grad(t < n ? 1 : 0, s));
  }
  if (std::abs(recomputed - match.matched_sum) > 1e-9 * std::max(1.0, std::abs(match.matched_sum))) {
    throw StaleMatchError("loss_backward: match was not produced from these inputs");
  }
  return g;
}

// Records the whole set loss as a single scalar node: its forward runs the
// matching, its backward injects the explicit gradients above into the tape.
template <typename T>
Var match_loss_op(Tape<T>& tape, const std::vector<Var>& mask_vars,
                  const std::vector<Var>& score_vars,
                  const InstanceLabelSet<T>& truth, const LossConfig& cfg) {
  if (mask_vars.size() != score_vars.size())
    throw std::invalid_argument("match_loss_op: masks and scores must pair up");
  PredictedSequence<T> pred;
  pred.masks.reserve(mask_vars.size());
  pred.scores.reserve(score_vars.size());
  for (std::size_t t = 0; t < mask_vars.size(); ++t) {
    pred.masks.push_back(tape.val(mask_vars[t]));
    const auto& sv = tape.val(score_vars[t]);
    if (!sv.is_scalar())
      throw std::invalid_argument("match_loss_op: scores must be scalar");
    pred.scores.push_back(sv[0]);
  }
  LossValue lv = loss_forward(pred, truth, cfg);
  Tensor<T> out(Shape{1});
  out[0] = static_cast<T>(lv.cost);
  auto truth_copy = std::make_shared<InstanceLabelSet<T>>(truth);
  auto match = std::make_shared<MatchResult>(std::move(lv.match));
  return tape.push(
      "match_loss", std::move(out),
      [mask_vars, score_vars, truth_copy, match, cfg](Tape<T>& t,
                                                      const Tensor<T>& gout) {
        PredictedSequence<T> cur;
        cur.masks.reserve(mask_vars.size());
        cur.scores.reserve(score_vars.size());
        for (std::size_t i = 0; i < mask_vars.size(); ++i) {
          cur.masks.push_back(t.val(mask_vars[i]));
          cur.scores.push_back(t.val(score_vars[i])[0]);
        }
        LossGradients<T> g = loss_backward(cur, *truth_copy, *match, cfg);
        for (std::size_t i = 0; i < mask_vars.size(); ++i) {
          add_scaled(t.grad(mask_vars[i]), g.masks[i], gout[0]);
          t.grad(score_vars[i])[0] += gout[0] * g.scores[i];
        }
      });
}

}  // namespace ris
