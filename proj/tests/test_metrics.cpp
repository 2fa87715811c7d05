#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ris/metrics.hpp"

using ris::DiscreteLabeling;
using ris::PredictedSequence;
using ris::Shape;
using ris::Tensor;

namespace {

Tensor<double> mask_from(const std::vector<double>& v, int h, int w) {
  return Tensor<double>(Shape{h, w}, std::vector<double>(v));
}

DiscreteLabeling random_labeling(int h, int w, int k, std::mt19937_64& rng) {
  DiscreteLabeling lab;
  lab.height = h;
  lab.width = w;
  lab.count = k;
  lab.ids.resize(static_cast<std::size_t>(h) * w);
  std::uniform_int_distribution<int> pick(0, k);
  for (auto& id : lab.ids) id = pick(rng);
  // ensure every instance owns at least one pixel
  for (int i = 1; i <= k; ++i) lab.ids[static_cast<std::size_t>(i)] = i;
  return lab;
}

}  // namespace

TEST_CASE("decode stops at the first low confidence", "[metrics][decode]") {
  PredictedSequence<double> pred;
  pred.masks.push_back(mask_from({0.9, 0.1, 0.1, 0.1}, 2, 2));
  pred.masks.push_back(mask_from({0.1, 0.9, 0.1, 0.1}, 2, 2));
  pred.masks.push_back(mask_from({0.1, 0.1, 0.9, 0.1}, 2, 2));
  pred.scores = {0.9, 0.4, 0.9};
  auto dec = ris::decode(pred);
  REQUIRE(dec.labeling.count == 1);  // only the first mask is considered
  REQUIRE(dec.labeling.ids == std::vector<int>{1, 0, 0, 0});
  REQUIRE(dec.scores == std::vector<double>{0.9});
}

TEST_CASE("decode assigns contested pixels to the earlier iteration",
          "[metrics][decode]") {
  PredictedSequence<double> pred;
  pred.masks.push_back(mask_from({0.9, 0.9, 0.1, 0.1}, 2, 2));
  pred.masks.push_back(mask_from({0.9, 0.1, 0.9, 0.1}, 2, 2));
  pred.scores = {0.8, 0.8};
  auto dec = ris::decode(pred);
  REQUIRE(dec.labeling.count == 2);
  REQUIRE(dec.labeling.ids == std::vector<int>{1, 1, 2, 0});
}

TEST_CASE("decode threshold is strictly above one half", "[metrics][decode]") {
  PredictedSequence<double> pred;
  pred.masks.push_back(mask_from({0.5, 0.5, 0.5, 0.5}, 2, 2));
  pred.scores = {0.9};
  auto dec = ris::decode(pred);
  REQUIRE(dec.labeling.count == 0);
  for (int id : dec.labeling.ids) REQUIRE(id == 0);
}

TEST_CASE("decode compacts ids of emptied instances", "[metrics][decode]") {
  PredictedSequence<double> pred;
  pred.masks.push_back(mask_from({0.9, 0.9, 0.1, 0.1}, 2, 2));
  pred.masks.push_back(mask_from({0.9, 0.9, 0.1, 0.1}, 2, 2));  // fully shadowed
  pred.masks.push_back(mask_from({0.1, 0.1, 0.9, 0.1}, 2, 2));
  pred.scores = {0.8, 0.8, 0.8};
  auto dec = ris::decode(pred);
  REQUIRE(dec.labeling.count == 2);
  REQUIRE(dec.labeling.ids == std::vector<int>{1, 1, 2, 0});
  REQUIRE(dec.scores.size() == 2);
}

TEST_CASE("decode is idempotent on its own output", "[metrics][decode]") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0, 1);
  PredictedSequence<double> pred;
  for (int t = 0; t < 4; ++t) {
    Tensor<double> m({6, 6});
    for (auto& v : m.data) v = unif(rng);
    pred.masks.push_back(std::move(m));
    pred.scores.push_back(0.6 + 0.1 * t / 4.0);
  }
  auto first = ris::decode(pred);

  PredictedSequence<double> rebinarized;
  for (int k = 0; k < first.labeling.count; ++k) {
    Tensor<double> m({6, 6});
    for (std::size_t p = 0; p < first.labeling.ids.size(); ++p)
      m[static_cast<std::int64_t>(p)] = first.labeling.ids[p] == k + 1 ? 1.0 : 0.0;
    rebinarized.masks.push_back(std::move(m));
    rebinarized.scores.push_back(first.scores[k]);
  }
  auto second = ris::decode(rebinarized);
  REQUIRE(second.labeling.ids == first.labeling.ids);
  REQUIRE(second.labeling.count == first.labeling.count);
}

TEST_CASE("difference in count", "[metrics][dic]") {
  REQUIRE(ris::dic(5, 5) == 0);
  REQUIRE(ris::dic(4, 5) == -1);
  auto stats = ris::count_stats({0, 1});  // dataset {(3,3),(5,4)}
  REQUIRE(stats.dic_mean == Catch::Approx(0.5));
  REQUIRE(stats.abs_dic_mean == Catch::Approx(0.5));
}

TEST_CASE("SBD of identical labelings is one", "[metrics][sbd]") {
  std::mt19937_64 rng(5);
  auto lab = random_labeling(8, 8, 3, rng);
  REQUIRE(ris::sbd(lab, lab) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("SBD of disjoint single instances is zero", "[metrics][sbd]") {
  DiscreteLabeling a, b;
  a.height = b.height = 2;
  a.width = b.width = 2;
  a.count = b.count = 1;
  a.ids = {1, 0, 0, 0};
  b.ids = {0, 0, 0, 1};
  REQUIRE(ris::sbd(a, b) == 0.0);
}

TEST_CASE("SBD is symmetric and bounded", "[metrics][sbd]") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_labeling(6, 6, 1 + int(rng() % 4), rng);
    auto b = random_labeling(6, 6, 1 + int(rng() % 4), rng);
    const double ab = ris::sbd(a, b);
    REQUIRE(ab == ris::sbd(b, a));
    REQUIRE(ab >= 0.0);
    REQUIRE(ab <= 1.0);
  }
}

TEST_CASE("SBD with an empty labeling is zero", "[metrics][sbd]") {
  std::mt19937_64 rng(9);
  auto a = random_labeling(4, 4, 2, rng);
  DiscreteLabeling empty;
  empty.height = empty.width = 4;
  empty.ids.assign(16, 0);
  REQUIRE(ris::sbd(a, empty) == 0.0);
  REQUIRE(ris::sbd(empty, a) == 0.0);
}

namespace {

std::vector<int> pixels_of(std::initializer_list<int> px) { return {px}; }

}  // namespace

TEST_CASE("AP is one for perfect predictions and zero for none", "[metrics][ap]") {
  std::vector<ris::ApGroundTruth> gts;
  std::vector<ris::ApInstance> preds;
  for (int i = 0; i < 3; ++i) {
    ris::ApGroundTruth gt;
    gt.sample = i;
    gt.pixels = pixels_of({1, 2, 3});
    gts.push_back(gt);
    ris::ApInstance p;
    p.sample = i;
    p.emission = 0;
    p.score = 1.0;
    p.pixels = pixels_of({1, 2, 3});
    preds.push_back(p);
  }
  auto rep = ris::ap_r(preds, gts);
  REQUIRE(rep.ap_050 == Catch::Approx(1.0));
  REQUIRE(rep.ap_ave == Catch::Approx(1.0));

  auto rep_empty = ris::ap_r({}, gts);
  REQUIRE(rep_empty.ap_050 == 0.0);
  REQUIRE(rep_empty.ap_ave == 0.0);
}

TEST_CASE("AP hand-computed curve: duplicate hit on one ground truth",
          "[metrics][ap]") {
  // 1 gt; two predictions on it with IoU 0.8 (score 0.9) and 0.6 (score 0.8).
  // The second cannot match a consumed gt, so the curve is (1/1, r=1), (1/2, r=1)
  // and the all-point area is 1.0.
  ris::ApGroundTruth gt;
  gt.sample = 0;
  gt.pixels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

  ris::ApInstance a;
  a.sample = 0;
  a.emission = 0;
  a.score = 0.9;
  a.pixels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 10};  // IoU 9/11 ~ 0.818

  ris::ApInstance b;
  b.sample = 0;
  b.emission = 1;
  b.score = 0.8;
  b.pixels = {0, 1, 2, 3, 4, 5, 6, 10};  // IoU 7/11 ~ 0.636

  const double ap = ris::ap_at_threshold({a, b}, {gt}, 0.5);
  REQUIRE(ap == Catch::Approx(1.0));
}

TEST_CASE("AP is invariant under monotone score rescaling", "[metrics][ap]") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0, 1);
  std::vector<ris::ApGroundTruth> gts;
  std::vector<ris::ApInstance> preds;
  for (int i = 0; i < 6; ++i) {
    ris::ApGroundTruth gt;
    gt.sample = i;
    for (int p = 0; p < 12; ++p)
      if (unif(rng) < 0.6) gt.pixels.push_back(p);
    if (gt.pixels.empty()) gt.pixels.push_back(0);
    gts.push_back(gt);
    for (int k = 0; k < 2; ++k) {
      ris::ApInstance inst;
      inst.sample = i;
      inst.emission = k;
      inst.score = 0.1 + 0.8 * unif(rng);
      for (int p = 0; p < 12; ++p)
        if (unif(rng) < 0.5) inst.pixels.push_back(p);
      if (inst.pixels.empty()) inst.pixels.push_back(1);
      preds.push_back(inst);
    }
  }
  auto base = ris::ap_r(preds, gts);
  auto rescaled = preds;
  for (auto& p : rescaled) p.score = 0.2 + 0.5 * std::tanh(3.0 * p.score);
  auto again = ris::ap_r(rescaled, gts);
  REQUIRE(again.ap_050 == Catch::Approx(base.ap_050).margin(1e-12));
  REQUIRE(again.ap_ave == Catch::Approx(base.ap_ave).margin(1e-12));
}

TEST_CASE("metric report serializes cleanly", "[metrics][report]") {
  std::vector<ris::ImageMetrics> rows;
  for (int i = 0; i < 3; ++i) {
    ris::ImageMetrics r;
    r.id = "s" + std::to_string(i);
    r.n_true = 3;
    r.n_pred = 3 + (i == 2 ? 1 : 0);
    r.dic = r.n_pred - r.n_true;
    r.sbd = 0.8;
    rows.push_back(r);
  }
  auto rep = ris::aggregate_metrics(rows, ris::ApReport{0.9, 0.7});
  auto j = ris::metrics_to_json(rep);
  REQUIRE(j.contains("per_image"));
  REQUIRE(j.contains("aggregate"));
  REQUIRE(j["per_image"].size() == 3);
  REQUIRE(j["aggregate"]["images"] == 3);
  REQUIRE(j["aggregate"]["sbd_mean"] == Catch::Approx(0.8));
  const std::string text = ris::metrics_to_text(rep);
  REQUIRE(text.find("DiC") != std::string::npos);
  REQUIRE(text.find("|DiC|") != std::string::npos);
  REQUIRE(text.find("SBD") != std::string::npos);
}
