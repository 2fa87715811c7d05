#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ris/checkpoint.hpp"
#include "ris/dataset.hpp"
#include "ris/match_loss.hpp"
#include "ris/metrics.hpp"
#include "ris/model.hpp"

namespace ris {

struct TrainConfig {
  double lr = 1e-4;           // initial learning rate
  double lr_decay = 0.1;      // multiplier applied on a final-stage plateau
  int plateau_window = 5;     // epochs
  double plateau_tol = 0.01;  // relative improvement below this is a plateau
  double clip = 5.0;          // per-element gradient clamp
  double lambda = 1.0;
  double score_epsilon = 1e-7;
  int curriculum_start_cap = 2;
  int max_epochs_per_stage = 40;
  std::uint64_t seed = 0;
  bool augment = false;
  double time_budget_sec = 3600.0;
  int eval_max_steps = 10;
  bool check_finite = false;

  void validate() const {
    if (lr <= 0 || lr_decay <= 0 || clip <= 0)
      throw std::invalid_argument("TrainConfig: rates and clip must be positive");
    if (plateau_window < 1 || max_epochs_per_stage < 1)
      throw std::invalid_argument("TrainConfig: bad window or epoch limit");
    if (curriculum_start_cap < 1)
      throw std::invalid_argument("TrainConfig: curriculum cap must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"lr_decay", c.lr_decay},
                     {"plateau_window", c.plateau_window},
                     {"plateau_tol", c.plateau_tol},
                     {"clip", c.clip},
                     {"lambda", c.lambda},
                     {"score_epsilon", c.score_epsilon},
                     {"curriculum_start_cap", c.curriculum_start_cap},
                     {"max_epochs_per_stage", c.max_epochs_per_stage},
                     {"seed", c.seed},
                     {"augment", c.augment},
                     {"time_budget_sec", c.time_budget_sec},
                     {"eval_max_steps", c.eval_max_steps},
                     {"check_finite", c.check_finite}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.plateau_window = j.value("plateau_window", c.plateau_window);
  c.plateau_tol = j.value("plateau_tol", c.plateau_tol);
  c.clip = j.value("clip", c.clip);
  c.lambda = j.value("lambda", c.lambda);
  c.score_epsilon = j.value("score_epsilon", c.score_epsilon);
  c.curriculum_start_cap = j.value("curriculum_start_cap", c.curriculum_start_cap);
  c.max_epochs_per_stage = j.value("max_epochs_per_stage", c.max_epochs_per_stage);
  c.seed = j.value("seed", c.seed);
  c.augment = j.value("augment", c.augment);
  c.time_budget_sec = j.value("time_budget_sec", c.time_budget_sec);
  c.eval_max_steps = j.value("eval_max_steps", c.eval_max_steps);
  c.check_finite = j.value("check_finite", c.check_finite);
}

// ---- initialization ----

// Every weight uniform in [-0.08, 0.08]; the ConvLSTM forget-gate biases are
// then set to 1 so the error can reach earlier iterations from the start.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<T> p = make_params<T>(cfg);
  std::uint64_t index = 0;
  visit_params(p, [&](const std::string&, Tensor<T>& t) {
    t = uniform<T>(t.shape, -0.08, 0.08, mix_seed(seed, index++));
  });
  for (auto& layer : p.lstm) layer.forget_gate.b.fill(T(1));
  return p;
}

// ---- optimizer ----

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <typename T>
std::vector<Tensor<T>*> param_tensors(ModelParams<T>& params) {
  std::vector<Tensor<T>*> out;
  visit_params(params, [&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <typename T>
AdamState<T> adam_init(ModelParams<T>& params) {
  AdamState<T> s;
  visit_params(params, [&](const std::string&, Tensor<T>& t) {
    s.m.emplace_back(t.shape);
    s.v.emplace_back(t.shape);
  });
  return s;
}

template <typename T>
void clip_gradients(std::vector<Tensor<T>>& grads, double clip = 5.0) {
  if (clip <= 0) throw std::invalid_argument("clip_gradients: clip must be > 0");
  const T c = static_cast<T>(clip);
  for (auto& g : grads)
    for (auto& v : g.data) v = std::clamp(v, -c, c);
}

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    if (p.shape != grads[k].shape)
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double g = static_cast<double>(grads[k][i]);
      const double m = state.beta1 * static_cast<double>(state.m[k][i]) +
                       (1.0 - state.beta1) * g;
      const double v = state.beta2 * static_cast<double>(state.v[k][i]) +
                       (1.0 - state.beta2) * g * g;
      state.m[k][i] = static_cast<T>(m);
      state.v[k][i] = static_cast<T>(v);
      p[i] -= static_cast<T>(lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps));
    }
  }
}

// ---- plateau detection ----

// Fires when the best epoch loss inside the trailing window improves on the
// loss just before the window by less than `tol` relatively. Cannot fire
// before window+1 epochs have been observed.
class PlateauDetector {
 public:
  PlateauDetector(int window, double tol) : window_(window), tol_(tol) {}

  void reset() { history_.clear(); }

  bool update(double epoch_loss) {
    history_.push_back(epoch_loss);
    if (history_.size() < static_cast<std::size_t>(window_) + 1) return false;
    const double baseline = history_[history_.size() - 1 - window_];
    double best = history_[history_.size() - window_];
    for (std::size_t i = history_.size() - window_; i < history_.size(); ++i)
      best = std::min(best, history_[i]);
    const double improvement =
        (baseline - best) / std::max(std::abs(baseline), 1e-12);
    return improvement < tol_;
  }

 private:
  int window_;
  double tol_;
  std::vector<double> history_;
};

// ---- training ----

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One optimization step on one sample (the batch size throughout is one
// image). The unroll length is n+2, capped by the curriculum stage.
template <typename T>
double train_step(const SceneSample<T>& sample, ModelParams<T>& params,
                  AdamState<T>& adam, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, int stage_cap) {
  if (stage_cap < 1) throw std::invalid_argument("train_step: stage cap must be >= 1");
  const int steps = std::min(sample.labels.count() + 2, stage_cap);

  Tape<T> tape;
  tape.check_finite = tcfg.check_finite;
  ModelVars vars = bind_params(tape, params);
  Var image = tape.leaf(sample.image);
  auto seq = forward_sequence(tape, vars, image, steps, mcfg);

  std::vector<Var> masks, scores;
  for (const auto& s : seq) {
    masks.push_back(s.mask);
    scores.push_back(s.score);
  }
  LossConfig lcfg;
  lcfg.lambda = tcfg.lambda;
  lcfg.score_epsilon = tcfg.score_epsilon;
  Var loss = match_loss_op(tape, masks, scores, sample.labels, lcfg);
  const double loss_value = static_cast<double>(tape.val(loss)[0]);
  if (!std::isfinite(loss_value)) {
    double norm = 0;
    visit_params(params, [&](const std::string&, Tensor<T>& t) {
      norm += dot(t, t);
    });
    double state_peak = 0;
    for (const auto& s : seq) state_peak = std::max(state_peak, max_abs(tape.val(s.state)));
    throw TrainingDiverged("train_step: non-finite loss on sample " + sample.id +
                           " (|params|^2 = " + std::to_string(norm) +
                           ", max |h| = " + std::to_string(state_peak) + ")");
  }

  tape.backward(loss);
  std::vector<Tensor<T>> grads = collect_grads(tape, vars);
  clip_gradients(grads, tcfg.clip);
  adam_step(param_tensors(params), grads, adam, tcfg.lr);
  return loss_value;
}

// ---- checkpoint glue ----

template <typename T>
void save_model_checkpoint(const std::string& path, const ModelParams<T>& params,
                           const AdamState<T>* adam, const ModelConfig& mcfg,
                           const TrainConfig& tcfg, int stage, int epoch) {
  CheckpointData<T> data;
  visit_params(params, [&](const std::string& name, const Tensor<T>& t) {
    data.params.emplace_back(name, t);
  });
  if (adam) {
    std::size_t k = 0;
    visit_params(params, [&](const std::string& name, const Tensor<T>&) {
      data.optimizer.emplace_back("adam.m." + name, adam->m[k]);
      data.optimizer.emplace_back("adam.v." + name, adam->v[k]);
      ++k;
    });
    Tensor<T> step({1});
    step[0] = static_cast<T>(adam->step);
    data.optimizer.emplace_back("adam.step", step);
  }
  data.config = nlohmann::json{{"model", mcfg},
                               {"train", tcfg},
                               {"stage", stage},
                               {"epoch", epoch},
                               {"precision", sizeof(T) == 4 ? "f32" : "f64"}};
  save_checkpoint(path, data);
}

template <typename T>
struct LoadedCheckpoint {
  ModelParams<T> params;
  AdamState<T> adam;
  bool has_adam = false;
  ModelConfig model_config;
  TrainConfig train_config;
  int stage = 0;
  int epoch = 0;
};

template <typename T>
LoadedCheckpoint<T> load_model_checkpoint(const std::string& path) {
  CheckpointData<T> data = load_checkpoint<T>(path);
  LoadedCheckpoint<T> out;
  out.model_config = data.config.at("model").template get<ModelConfig>();
  if (data.config.contains("train"))
    out.train_config = data.config.at("train").template get<TrainConfig>();
  out.stage = data.config.value("stage", 0);
  out.epoch = data.config.value("epoch", 0);

  std::map<std::string, Tensor<T>> by_name;
  for (auto& [name, t] : data.params) by_name.emplace(name, std::move(t));
  out.params = make_params<T>(out.model_config);
  visit_params(out.params, [&](const std::string& name, Tensor<T>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    if (it->second.shape != t.shape)
      throw std::runtime_error("checkpoint: parameter '" + name +
                               "' has shape " + shape_str(it->second.shape) +
                               ", config expects " + shape_str(t.shape));
    t = std::move(it->second);
    by_name.erase(it);
  });
  if (!by_name.empty())
    throw std::runtime_error("checkpoint: unknown parameter '" +
                             by_name.begin()->first + "'");

  if (!data.optimizer.empty()) {
    std::map<std::string, Tensor<T>> opt;
    for (auto& [name, t] : data.optimizer) opt.emplace(name, std::move(t));
    out.adam = adam_init(out.params);
    std::size_t k = 0;
    visit_params(out.params, [&](const std::string& name, Tensor<T>&) {
      out.adam.m[k] = opt.at("adam.m." + name);
      out.adam.v[k] = opt.at("adam.v." + name);
      ++k;
    });
    out.adam.step = static_cast<long>(opt.at("adam.step")[0]);
    out.has_adam = true;
  }
  return out;
}

// ---- curriculum ----

struct StageSummary {
  int cap = 0;
  int epochs = 0;
  double final_epoch_loss = 0;
  std::string checkpoint;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  AdamState<T> adam;
  std::vector<StageSummary> stages;
  long steps = 0;
  double final_lr = 0;
  bool hit_time_budget = false;
};

// Curriculum: stage caps grow 2, 3, ... until every sample can unroll its
// full n+2 sequence. A stage ends when the plateau detector fires or the
// epoch limit is reached. In the final stage the first plateau decays the
// learning rate once and the second one stops training.
template <typename T>
TrainResult<T> run_curriculum(const std::vector<SceneSample<T>>& train,
                              const ModelConfig& mcfg, const TrainConfig& tcfg,
                              const std::string& out_dir = "",
                              std::ostream* loss_csv = nullptr,
                              std::ostream* progress = nullptr) {
  if (train.empty()) throw std::invalid_argument("run_curriculum: empty dataset");
  mcfg.validate();
  tcfg.validate();

  int max_n = 0;
  for (const auto& s : train) max_n = std::max(max_n, s.labels.count());
  const int final_cap = std::max(tcfg.curriculum_start_cap, max_n + 2);

  TrainResult<T> result;
  result.params = init_params<T>(mcfg, tcfg.seed);
  result.adam = adam_init(result.params);
  double lr = tcfg.lr;
  TrainConfig step_cfg = tcfg;

  if (loss_csv) (*loss_csv) << "step,stage,loss,lr\n";
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  long global_step = 0;
  bool out_of_time = false;
  std::uint64_t shuffle_counter = 0;

  for (int cap = tcfg.curriculum_start_cap; cap <= final_cap && !out_of_time; ++cap) {
    const int stage = cap - tcfg.curriculum_start_cap + 1;
    PlateauDetector plateau(tcfg.plateau_window, tcfg.plateau_tol);
    bool lr_decayed_this_stage = false;
    StageSummary summary;
    summary.cap = cap;

    for (int epoch = 0; epoch < tcfg.max_epochs_per_stage && !out_of_time; ++epoch) {
      std::vector<int> order(train.size());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 shuffle_rng(mix_seed(tcfg.seed ^ 0x5a17ULL, ++shuffle_counter));
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      double epoch_loss = 0;
      int seen = 0;
      for (int idx : order) {
        step_cfg.lr = lr;
        const SceneSample<T>* sample = &train[idx];
        SceneSample<T> augmented;
        if (tcfg.augment) {
          std::mt19937_64 aug_rng(mix_seed(tcfg.seed ^ 0xa36f00dULL,
                                           static_cast<std::uint64_t>(global_step)));
          augmented = augment(*sample, aug_rng);
          sample = &augmented;
        }
        const double loss =
            train_step(*sample, result.params, result.adam, mcfg, step_cfg, cap);
        epoch_loss += loss;
        ++seen;
        ++global_step;
        if (loss_csv) {
          char row[96];
          std::snprintf(row, sizeof row, "%ld,%d,%.17g,%.17g\n", global_step, stage,
                        loss, lr);
          (*loss_csv) << row;
        }
        if (tcfg.time_budget_sec > 0 && elapsed() > tcfg.time_budget_sec) {
          out_of_time = true;
          break;
        }
      }
      epoch_loss /= std::max(seen, 1);
      summary.epochs = epoch + 1;
      summary.final_epoch_loss = epoch_loss;
      if (progress) {
        (*progress) << "stage " << stage << " (cap " << cap << ") epoch " << epoch + 1
                    << ": mean loss " << epoch_loss << ", lr " << lr << "\n";
      }

      if (plateau.update(epoch_loss)) {
        if (cap < final_cap) break;  // advance the curriculum
        if (!lr_decayed_this_stage) {
          lr *= tcfg.lr_decay;
          lr_decayed_this_stage = true;
          plateau.reset();
        } else {
          break;  // converged at the final stage
        }
      }
    }

    if (!out_dir.empty()) {
      const std::string path =
          out_dir + "/checkpoint_stage" + std::to_string(stage) + ".ckpt";
      save_model_checkpoint(path, result.params, &result.adam, mcfg, tcfg, stage,
                            summary.epochs);
      summary.checkpoint = path;
    }
    result.stages.push_back(summary);
  }

  result.steps = global_step;
  result.final_lr = lr;
  result.hit_time_budget = out_of_time;
  if (!out_dir.empty()) {
    const std::string path = out_dir + "/checkpoint_final.ckpt";
    save_model_checkpoint(path, result.params, &result.adam, mcfg, tcfg,
                          static_cast<int>(result.stages.size()),
                          result.stages.empty() ? 0 : result.stages.back().epochs);
  }
  return result;
}

// ---- evaluation ----

template <typename T>
MetricsReport evaluate(const ModelParams<T>& params, const ModelConfig& mcfg,
                       const std::vector<SceneSample<T>>& samples, int max_steps) {
  std::vector<ImageMetrics> rows;
  std::vector<ApInstance> ap_preds;
  std::vector<ApGroundTruth> ap_gts;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    auto pred = predict(params, s.image, mcfg, max_steps);
    auto dec = decode(pred);
    const int h = s.image.shape[1], w = s.image.shape[2];
    auto truth = labeling_from_truth(s.labels, h, w);

    ImageMetrics row;
    row.id = s.id;
    row.n_true = truth.count;
    row.n_pred = dec.labeling.count;
    row.dic = dic(dec.labeling.count, truth.count);
    row.sbd = sbd(dec.labeling, truth);
    rows.push_back(row);

    for (int k = 0; k < dec.labeling.count; ++k) {
      ApInstance inst;
      inst.sample = static_cast<int>(i);
      inst.emission = k;
      inst.score = dec.scores[k];
      for (std::size_t p = 0; p < dec.labeling.ids.size(); ++p)
        if (dec.labeling.ids[p] == k + 1) inst.pixels.push_back(static_cast<int>(p));
      ap_preds.push_back(std::move(inst));
    }
    for (int t = 0; t < s.labels.count(); ++t) {
      ApGroundTruth gt;
      gt.sample = static_cast<int>(i);
      for (std::int64_t p = 0; p < s.labels.masks[t].size(); ++p)
        if (s.labels.masks[t][p] > T(0.5)) gt.pixels.push_back(static_cast<int>(p));
      ap_gts.push_back(std::move(gt));
    }
  }
  return aggregate_metrics(std::move(rows), ap_r(ap_preds, ap_gts));
}

}  // namespace ris
