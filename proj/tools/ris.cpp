// Operator entry point: dataset generation, training, evaluation, inference,
// and the two self-verification commands (gradcheck, matchcheck).
//
// Exit codes: 0 success, 1 verification failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ris/dataset.hpp"
#include "ris/match_loss.hpp"
#include "ris/metrics.hpp"
#include "ris/model.hpp"
#include "ris/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string dataset_dir;
  std::string checkpoint;
  std::string precision = "f32";
  std::int64_t seed = -1;  // -1: keep the config file / default seed
  bool verbose = false;
};

nlohmann::json load_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

template <typename Cfg>
Cfg section(const nlohmann::json& j, const char* key) {
  Cfg cfg;
  if (j.contains(key)) cfg = j.at(key).template get<Cfg>();
  return cfg;
}

// ---- generate ----

int cmd_generate(const CommonOpts& opts, int count) {
  auto j = load_config_file(opts.config_path);
  ris::SceneConfig scene = section<ris::SceneConfig>(j, "scene");
  if (opts.seed >= 0) scene.seed = static_cast<std::uint64_t>(opts.seed);
  scene.validate();
  auto samples = ris::generate<double>(scene, count);
  fs::create_directories(opts.out_dir);
  ris::save_dataset(samples, opts.out_dir);
  std::ofstream cfg_out(fs::path(opts.out_dir) / "scene.json");
  cfg_out << nlohmann::json(scene).dump(2) << "\n";
  std::cout << "wrote " << samples.size() << " samples to " << opts.out_dir << "\n";
  return 0;
}

// ---- train ----

template <typename T>
int run_train(const CommonOpts& opts) {
  auto j = load_config_file(opts.config_path);
  ris::ModelConfig mcfg = section<ris::ModelConfig>(j, "model");
  ris::TrainConfig tcfg = section<ris::TrainConfig>(j, "train");
  if (opts.seed >= 0) tcfg.seed = static_cast<std::uint64_t>(opts.seed);

  auto data = ris::load_dataset<T>(opts.dataset_dir);
  std::cout << "loaded " << data.size() << " training samples from "
            << opts.dataset_dir << "\n";
  fs::create_directories(opts.out_dir);
  std::ofstream csv(fs::path(opts.out_dir) / "loss_log.csv");
  auto result = ris::run_curriculum(data, mcfg, tcfg, opts.out_dir, &csv,
                                    opts.verbose ? &std::cout : nullptr);
  std::cout << "trained " << result.steps << " steps over " << result.stages.size()
            << " curriculum stages";
  if (result.hit_time_budget) std::cout << " (stopped by time budget)";
  std::cout << "\nfinal checkpoint: " << opts.out_dir << "/checkpoint_final.ckpt\n";
  return 0;
}

// ---- eval ----

template <typename T>
int run_eval(const CommonOpts& opts, int max_steps) {
  auto loaded = ris::load_model_checkpoint<T>(opts.checkpoint);
  auto data = ris::load_dataset<T>(opts.dataset_dir);
  const int steps = max_steps > 0 ? max_steps : loaded.train_config.eval_max_steps;
  auto report = ris::evaluate(loaded.params, loaded.model_config, data, steps);
  fs::create_directories(opts.out_dir);
  {
    std::ofstream out(fs::path(opts.out_dir) / "metrics.json");
    out << ris::metrics_to_json(report).dump(2) << "\n";
  }
  const std::string text = ris::metrics_to_text(report);
  {
    std::ofstream out(fs::path(opts.out_dir) / "metrics.txt");
    out << text;
  }
  std::cout << text;
  return 0;
}

// ---- infer ----

const int kPalette[8][3] = {{230, 25, 75},  {60, 180, 75},   {255, 225, 25},
                            {0, 130, 200},  {245, 130, 48},  {145, 30, 180},
                            {70, 240, 240}, {240, 50, 230}};

template <typename T>
int run_infer(const CommonOpts& opts, const std::string& image_path, int max_steps) {
  auto loaded = ris::load_model_checkpoint<T>(opts.checkpoint);
  auto image = ris::read_image<T>(image_path);
  if (image.shape[0] != loaded.model_config.in_channels)
    throw std::runtime_error("image has " + std::to_string(image.shape[0]) +
                             " channels, model expects " +
                             std::to_string(loaded.model_config.in_channels));
  const int steps = max_steps > 0 ? max_steps : loaded.train_config.eval_max_steps;
  auto pred = ris::predict(loaded.params, image, loaded.model_config, steps);
  auto dec = ris::decode(pred);
  fs::create_directories(opts.out_dir);

  // soft masks for the accepted steps only; scores for everything emitted
  int accepted = 0;
  for (int t = 0; t < pred.count(); ++t) {
    if (static_cast<double>(pred.scores[t]) < 0.5) break;
    ++accepted;
  }
  for (int t = 0; t < accepted; ++t) {
    ris::Tensor<T> flat(ris::Shape{image.shape[1], image.shape[2]});
    for (std::int64_t p = 0; p < flat.size(); ++p)
      flat[p] = pred.masks[t][p];
    ris::Tensor<T> as_img(ris::Shape{1, image.shape[1], image.shape[2]},
                          std::vector<T>(flat.data));
    ris::write_image((fs::path(opts.out_dir) / ("mask_" + std::to_string(t + 1) + ".pgm"))
                         .string(),
                     as_img);
  }
  {
    std::ofstream scores(fs::path(opts.out_dir) / "scores.txt");
    for (T s : pred.scores) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f\n", static_cast<double>(s));
      scores << buf;
    }
  }

  // composite: grayscale input with instances tinted by emission order
  const int h = image.shape[1], w = image.shape[2];
  ris::Tensor<T> composite(ris::Shape{3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double g = static_cast<double>(image.at3(0, y, x));
      const int id = dec.labeling.at(y, x);
      for (int c = 0; c < 3; ++c) {
        const double tint = id > 0 ? kPalette[(id - 1) % 8][c] / 255.0 : g;
        composite.at3(c, y, x) = static_cast<T>(id > 0 ? 0.4 * g + 0.6 * tint : g);
      }
    }
  ris::write_image((fs::path(opts.out_dir) / "composite.ppm").string(), composite);

  std::cout << "decoded " << dec.labeling.count << " instances over "
            << pred.count() << " emitted steps; wrote " << accepted
            << " mask files to " << opts.out_dir << "\n";
  return 0;
}

// ---- matchcheck ----

int cmd_matchcheck(int trials, int max_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> dim(1, max_size);
  int exact = 0;
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    ris::ScoreMatrix m(dim(rng), dim(rng));
    for (auto& v : m.v) v = unif(rng);
    const double a = ris::hungarian(m).matched_sum;
    const double b = ris::brute_force_match(m).matched_sum;
    const double diff = std::abs(a - b);
    worst = std::max(worst, diff);
    if (diff <= 1e-12) ++exact;
  }
  std::printf("matchcheck: %d/%d exact (worst |difference| = %.3e)\n", exact,
              trials, worst);
  return exact == trials ? 0 : 1;
}

// ---- gradcheck ----

// Self-contained central-difference harness over tape graphs.
template <typename BuildFn>
double fd_worst(BuildFn build, std::vector<ris::Tensor<double>> inputs,
                double h = 1e-6) {
  auto eval = [&](const std::vector<ris::Tensor<double>>& xs) {
    ris::Tape<double> tape;
    std::vector<ris::Var> vars;
    for (const auto& x : xs) vars.push_back(tape.leaf(x));
    return tape.val(build(tape, vars))[0];
  };
  ris::Tape<double> tape;
  std::vector<ris::Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.leaf(x));
  ris::Var loss = build(tape, vars);
  tape.backward(loss);
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const ris::Tensor<double> analytic = tape.grad(vars[k]);
    for (std::int64_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double fp = eval(inputs);
      inputs[k][i] = saved - h;
      const double fm = eval(inputs);
      inputs[k][i] = saved;
      const double numeric = (fp - fm) / (2 * h);
      const double denom = std::max({1e-3, std::abs(analytic[i]), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

int cmd_gradcheck(bool verbose) {
  // verification runs in double precision regardless of --precision
  struct Entry {
    const char* name;
    double worst;
  };
  std::vector<Entry> results;

  results.push_back({"conv2d",
                     fd_worst(
                         [](ris::Tape<double>& t, const std::vector<ris::Var>& v) {
                           auto y = ris::conv2d(t, v[0], v[1], v[2],
                                                ris::Padding::Same, 2);
                           return ris::sum(t, ris::mul(t, y, y));
                         },
                         {ris::uniform<double>({2, 6, 6}, -1, 1, 1),
                          ris::uniform<double>({3, 2, 3, 3}, -1, 1, 2),
                          ris::uniform<double>({3}, -1, 1, 3)})});

  results.push_back({"activations",
                     fd_worst(
                         [](ris::Tape<double>& t, const std::vector<ris::Var>& v) {
                           auto a = ris::sigmoid(t, v[0]);
                           auto b = ris::tanh_op(t, v[0]);
                           auto c = ris::relu(t, v[1]);
                           return ris::sum(t, ris::mul(t, ris::mul(t, a, b), c));
                         },
                         {ris::uniform<double>({8}, -1.5, 1.5, 4),
                          ris::uniform<double>({8}, 0.2, 1.5, 5)})});

  results.push_back({"maxpool",
                     fd_worst(
                         [](ris::Tape<double>& t, const std::vector<ris::Var>& v) {
                           auto y = ris::maxpool2d(t, v[0], 2, 2, 2, 2);
                           return ris::sum(t, ris::mul(t, y, y));
                         },
                         {ris::uniform<double>({1, 4, 4}, -1, 1, 6)})});

  results.push_back(
      {"log_softmax",
       fd_worst(
           [](ris::Tape<double>& t, const std::vector<ris::Var>& v) {
             auto y = ris::log_softmax_spatial(t, v[0]);
             return ris::sum(t, ris::mul(t, y, v[1]));
           },
           {ris::uniform<double>({1, 3, 4}, -2, 2, 7),
            ris::uniform<double>({1, 3, 4}, -1, 1, 8)})});

  results.push_back({"upsample",
                     fd_worst(
                         [](ris::Tape<double>& t, const std::vector<ris::Var>& v) {
                           auto y = ris::upsample_bilinear(t, v[0], 5, 6);
                           return ris::sum(t, ris::mul(t, y, y));
                         },
                         {ris::uniform<double>({2, 3, 3}, -1, 1, 9)})});

  results.push_back({"linear",
                     fd_worst(
                         [](ris::Tape<double>& t, const std::vector<ris::Var>& v) {
                           auto y = ris::linear(t, v[0], v[1], v[2]);
                           return ris::sum(t, ris::mul(t, y, y));
                         },
                         {ris::uniform<double>({4}, -1, 1, 10),
                          ris::uniform<double>({2, 4}, -1, 1, 11),
                          ris::uniform<double>({2}, -1, 1, 12)})});

  {
    auto layer = ris::make_conv_lstm_layer<double>(2, 3);
    std::vector<ris::Tensor<double>> inputs;
    std::uint64_t s = 13;
    for (auto* g : {&layer.in_gate, &layer.forget_gate, &layer.out_gate,
                    &layer.cell_gate}) {
      inputs.push_back(ris::uniform<double>(g->w_x.shape, -0.4, 0.4, s++));
      inputs.push_back(ris::uniform<double>(g->w_h.shape, -0.4, 0.4, s++));
      inputs.push_back(ris::uniform<double>(g->b.shape, -0.2, 0.2, s++));
    }
    inputs.push_back(ris::uniform<double>({2, 3, 3}, -1, 1, s++));
    results.push_back(
        {"conv_lstm_unroll",
         fd_worst(
             [](ris::Tape<double>& t, const std::vector<ris::Var>& v) {
               ris::ConvLstmLayerVars vars{{v[0], v[1], v[2]},
                                           {v[3], v[4], v[5]},
                                           {v[6], v[7], v[8]},
                                           {v[9], v[10], v[11]}};
               auto states = ris::conv_lstm_unroll(t, v[12], {vars}, 2);
               return ris::sum(t, states[1].h);
             },
             inputs)});
  }

  // end-to-end: tiny pipeline against the loss with the matching held fixed
  {
    ris::ModelConfig mcfg;
    mcfg.in_channels = 1;
    mcfg.channels = 3;
    mcfg.fcn_layers = 2;
    mcfg.fcn_first_kernel = 5;
    mcfg.fcn_kernel = 3;
    mcfg.fcn_stride = 1;
    mcfg.lstm_layers = 2;
    mcfg.gate_kernel = 3;
    auto params = ris::init_params<double>(mcfg, 99);
    auto image = ris::uniform<double>({1, 9, 9}, 0, 1, 100);
    ris::InstanceLabelSet<double> truth;
    {
      std::mt19937_64 rng(101);
      for (int i = 0; i < 2; ++i) {
        ris::Tensor<double> m({9, 9});
        std::uniform_real_distribution<double> unif(0, 1);
        bool any = false;
        for (auto& v : m.data) {
          v = unif(rng) < 0.25 ? 1.0 : 0.0;
          any |= v > 0;
        }
        if (!any) m[i] = 1.0;
        truth.masks.push_back(m);
      }
    }
    const ris::LossConfig lcfg;
    const int steps = 2;

    std::vector<ris::Tensor<double>> inputs;
    ris::visit_params(params, [&](const std::string&, ris::Tensor<double>& t) {
      inputs.push_back(t);
    });

    auto assemble = [&](ris::Tape<double>& t, const std::vector<ris::Var>& v) {
      // mirror the parameter topology, filling slots in visit order
      ris::ModelVars vars;
      vars.fcn.stride = mcfg.fcn_stride;
      vars.fcn.layers.resize(static_cast<std::size_t>(mcfg.fcn_layers));
      vars.lstm.resize(static_cast<std::size_t>(mcfg.lstm_layers));
      std::size_t i = 0;
      ris::visit_params(vars, [&](const std::string&, ris::Var& slot) {
        slot = v[i++];
      });
      auto img = t.leaf(image);
      return ris::forward_sequence(t, vars, img, steps, mcfg);
    };

    // fixed matching from the unperturbed forward pass
    ris::MatchResult match0;
    {
      ris::Tape<double> t;
      std::vector<ris::Var> v;
      for (const auto& x : inputs) v.push_back(t.leaf(x));
      auto seq = assemble(t, v);
      ris::PredictedSequence<double> pred;
      for (const auto& s : seq) {
        pred.masks.push_back(t.val(s.mask));
        pred.scores.push_back(t.val(s.score)[0]);
      }
      match0 = ris::loss_forward(pred, truth, lcfg).match;
    }

    results.push_back(
        {"end_to_end",
         fd_worst(
             [&](ris::Tape<double>& t, const std::vector<ris::Var>& v) {
               auto seq = assemble(t, v);
               std::vector<ris::Var> masks, scores;
               for (const auto& s : seq) {
                 masks.push_back(s.mask);
                 scores.push_back(s.score);
               }
               return ris::match_loss_op(t, masks, scores, truth, lcfg);
             },
             inputs, 1e-5)});
  }

  double worst = 0;
  for (const auto& r : results) {
    worst = std::max(worst, r.worst);
    if (verbose) std::printf("  %-18s %.3e\n", r.name, r.worst);
  }
  std::printf("gradcheck: worst relative error %.3e (%s)\n", worst,
              worst < 1e-4 ? "pass" : "FAIL");
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recurrent instance segmentation engine"};
  app.require_subcommand(1);

  CommonOpts opts;
  app.add_flag("-v,--verbose", opts.verbose, "verbose progress output");

  int count = 100;
  int trials = 1000;
  int max_size = 7;
  int max_steps = 0;
  std::string image_path;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->fallthrough();
    sub->add_option("--config", opts.config_path, "JSON config file");
    sub->add_option("--seed", opts.seed, "seed override");
    sub->add_option("--precision", opts.precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    if (needs_out) sub->add_option("--out", opts.out_dir, "output directory")->required();
  };

  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  add_common(gen, true);
  gen->add_option("--count", count, "number of samples");

  auto* train = app.add_subcommand("train", "train with the curriculum schedule");
  add_common(train, true);
  train->add_option("--dataset", opts.dataset_dir, "dataset directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval, true);
  eval->add_option("--dataset", opts.dataset_dir, "dataset directory")->required();
  eval->add_option("--checkpoint", opts.checkpoint, "checkpoint file")->required();
  eval->add_option("--max-steps", max_steps, "inference step cap");

  auto* infer = app.add_subcommand("infer", "segment one image");
  add_common(infer, true);
  infer->add_option("--checkpoint", opts.checkpoint, "checkpoint file")->required();
  infer->add_option("--image", image_path, "input image (pgm/ppm)")->required();
  infer->add_option("--max-steps", max_steps, "inference step cap");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference self check");
  add_common(grad, false);

  auto* match = app.add_subcommand("matchcheck",
                                   "assignment solver vs exhaustive oracle");
  match->fallthrough();
  match->add_option("--trials", trials, "number of random matrices");
  match->add_option("--max-size", max_size, "largest matrix dimension");
  match->add_option("--seed", opts.seed, "seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const bool f64 = opts.precision == "f64";
  try {
    if (gen->parsed()) return cmd_generate(opts, count);
    if (train->parsed())
      return f64 ? run_train<double>(opts) : run_train<float>(opts);
    if (eval->parsed())
      return f64 ? run_eval<double>(opts, max_steps) : run_eval<float>(opts, max_steps);
    if (infer->parsed())
      return f64 ? run_infer<double>(opts, image_path, max_steps)
                 : run_infer<float>(opts, image_path, max_steps);
    if (grad->parsed()) return cmd_gradcheck(opts.verbose);
    if (match->parsed())
      return cmd_matchcheck(trials, max_size,
                            opts.seed >= 0 ? static_cast<std::uint64_t>(opts.seed)
                                           : 12345);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
