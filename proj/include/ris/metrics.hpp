#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ris/instances.hpp"

namespace ris {

// Per-pixel instance ids: 0 is background, instances are 1..K in emission
// order with no gaps.
struct DiscreteLabeling {
  int height = 0, width = 0;
  int count = 0;
  std::vector<int> ids;

  int at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }
};

template <typename T>
struct Decoded {
  DiscreteLabeling labeling;
  std::vector<double> scores;  // confidence of instance id i+1
};

// Decoding rules: the sequence is cut at the first score below 0.5; a pixel
// is claimed where the mask value is strictly above 0.5; when several steps
// claim the same pixel the earliest iteration keeps it; instances that end up
// with no pixels are removed and the ids are compacted.
template <typename T>
Decoded<T> decode(const PredictedSequence<T>& pred) {
  Decoded<T> out;
  if (pred.count() == 0) return out;
  const int h = pred.masks[0].shape[pred.masks[0].shape.size() - 2];
  const int w = pred.masks[0].shape[pred.masks[0].shape.size() - 1];
  out.labeling.height = h;
  out.labeling.width = w;
  out.labeling.ids.assign(static_cast<std::size_t>(h) * w, 0);

  int stop = pred.count();
  for (int t = 0; t < pred.count(); ++t) {
    if (static_cast<double>(pred.scores[t]) < 0.5) {
      stop = t;
      break;
    }
  }

  std::vector<int> area(stop, 0);
  for (std::size_t p = 0; p < out.labeling.ids.size(); ++p) {
    for (int t = 0; t < stop; ++t) {
      if (static_cast<double>(pred.masks[t][static_cast<std::int64_t>(p)]) > 0.5) {
        out.labeling.ids[p] = t + 1;  // earliest claimer wins
        ++area[t];
        break;
      }
    }
  }

  std::vector<int> remap(stop + 1, 0);
  int next = 0;
  for (int t = 0; t < stop; ++t) {
    if (area[t] > 0) {
      remap[t + 1] = ++next;
      out.scores.push_back(static_cast<double>(pred.scores[t]));
    }
  }
  for (auto& id : out.labeling.ids) id = remap[id];
  out.labeling.count = next;
  return out;
}

template <typename T>
DiscreteLabeling labeling_from_truth(const InstanceLabelSet<T>& truth, int h, int w) {
  DiscreteLabeling lab;
  lab.height = h;
  lab.width = w;
  lab.ids.assign(static_cast<std::size_t>(h) * w, 0);
  lab.count = truth.count();
  for (int t = 0; t < truth.count(); ++t)
    for (std::size_t p = 0; p < lab.ids.size(); ++p)
      if (truth.masks[t][static_cast<std::int64_t>(p)] > T(0.5)) lab.ids[p] = t + 1;
  return lab;
}

// ---- counting ----

inline int dic(int predicted, int truth) { return predicted - truth; }

struct CountStats {
  double dic_mean = 0, dic_std = 0;
  double abs_dic_mean = 0, abs_dic_std = 0;
};

inline CountStats count_stats(const std::vector<int>& dics) {
  CountStats s;
  if (dics.empty()) return s;
  const double n = static_cast<double>(dics.size());
  double sum = 0, abs_sum = 0;
  for (int d : dics) {
    sum += d;
    abs_sum += std::abs(d);
  }
  s.dic_mean = sum / n;
  s.abs_dic_mean = abs_sum / n;
  double var = 0, abs_var = 0;
  for (int d : dics) {
    var += (d - s.dic_mean) * (d - s.dic_mean);
    abs_var += (std::abs(d) - s.abs_dic_mean) * (std::abs(d) - s.abs_dic_mean);
  }
  s.dic_std = std::sqrt(var / n);
  s.abs_dic_std = std::sqrt(abs_var / n);
  return s;
}

// ---- symmetric best dice ----

namespace detail {

inline std::vector<std::vector<int>> instance_pixels(const DiscreteLabeling& lab) {
  std::vector<std::vector<int>> px(lab.count);
  for (std::size_t p = 0; p < lab.ids.size(); ++p)
    if (lab.ids[p] > 0) px[lab.ids[p] - 1].push_back(static_cast<int>(p));
  return px;
}

inline int intersection_size(const std::vector<int>& a, const std::vector<int>& b) {
  // pixel lists are sorted by construction
  int count = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j])
      ++i;
    else if (a[i] > b[j])
      ++j;
    else {
      ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

// mean over instances of A of the best Dice overlap against any instance of B
inline double best_dice(const std::vector<std::vector<int>>& a,
                        const std::vector<std::vector<int>>& b) {
  if (a.empty()) return 0.0;
  double total = 0;
  for (const auto& ia : a) {
    double best = 0;
    for (const auto& ib : b) {
      const int inter = intersection_size(ia, ib);
      const double dice = 2.0 * inter / (double(ia.size()) + double(ib.size()));
      best = std::max(best, dice);
    }
    total += best;
  }
  return total / static_cast<double>(a.size());
}

}  // namespace detail

// min(BD(A|B), BD(B|A)); zero when either labeling has no instances.
inline double sbd(const DiscreteLabeling& a, const DiscreteLabeling& b) {
  if (a.count == 0 || b.count == 0) return 0.0;
  const auto pa = detail::instance_pixels(a);
  const auto pb = detail::instance_pixels(b);
  return std::min(detail::best_dice(pa, pb), detail::best_dice(pb, pa));
}

// ---- region average precision ----

struct ApInstance {
  int sample = 0;       // image index within the dataset
  int emission = 0;     // decode order within its image
  double score = 0;
  std::vector<int> pixels;  // sorted flat pixel list
};

struct ApGroundTruth {
  int sample = 0;
  std::vector<int> pixels;
};

namespace detail {

inline double iou_pixels(const std::vector<int>& a, const std::vector<int>& b) {
  const int inter = intersection_size(a, b);
  const double uni = double(a.size()) + double(b.size()) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace detail

// Dataset-wide region AP at one IoU threshold: rank predictions by score
// (ties broken by sample id then emission index), greedily consume the
// best-IoU unmatched ground truth when it exceeds the threshold, and take the
// area under the precision/recall curve with all-point interpolation.
inline double ap_at_threshold(std::vector<ApInstance> preds,
                              const std::vector<ApGroundTruth>& gts,
                              double threshold) {
  if (gts.empty()) return 0.0;
  if (preds.empty()) return 0.0;
  std::sort(preds.begin(), preds.end(), [](const ApInstance& a, const ApInstance& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.sample != b.sample) return a.sample < b.sample;
    return a.emission < b.emission;
  });
  std::vector<char> consumed(gts.size(), 0);
  std::vector<char> is_tp(preds.size(), 0);
  for (std::size_t k = 0; k < preds.size(); ++k) {
    double best_iou = 0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (consumed[g] || gts[g].sample != preds[k].sample) continue;
      const double iou = detail::iou_pixels(preds[k].pixels, gts[g].pixels);
      if (iou > best_iou) {
        best_iou = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best_iou > threshold) {
      consumed[best_gt] = 1;
      is_tp[k] = 1;
    }
  }
  // precision/recall after each prediction, then all-point interpolated area
  const double total_gt = static_cast<double>(gts.size());
  std::vector<double> precision(preds.size()), recall(preds.size());
  int tp = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    tp += is_tp[k];
    precision[k] = double(tp) / double(k + 1);
    recall[k] = double(tp) / total_gt;
  }
  for (std::size_t k = preds.size() - 1; k-- > 0;)
    precision[k] = std::max(precision[k], precision[k + 1]);
  double ap = 0;
  double prev_recall = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

struct ApReport {
  double ap_050 = 0;
  double ap_ave = 0;  // mean over thresholds 0.1, 0.2, ..., 0.9
};

inline ApReport ap_r(const std::vector<ApInstance>& preds,
                     const std::vector<ApGroundTruth>& gts) {
  ApReport r;
  r.ap_050 = ap_at_threshold(preds, gts, 0.5);
  double acc = 0;
  for (int i = 1; i <= 9; ++i) acc += ap_at_threshold(preds, gts, i / 10.0);
  r.ap_ave = acc / 9.0;
  return r;
}

// ---- evaluation report ----

struct ImageMetrics {
  std::string id;
  int n_true = 0;
  int n_pred = 0;
  int dic = 0;
  double sbd = 0;
};

struct MetricsReport {
  std::vector<ImageMetrics> per_image;
  CountStats counts;
  double sbd_mean = 0, sbd_std = 0;
  ApReport ap;
};

inline MetricsReport aggregate_metrics(std::vector<ImageMetrics> rows,
                                       const ApReport& ap) {
  MetricsReport rep;
  rep.ap = ap;
  std::vector<int> dics;
  double sbd_sum = 0;
  for (const auto& r : rows) {
    dics.push_back(r.dic);
    sbd_sum += r.sbd;
  }
  rep.counts = count_stats(dics);
  if (!rows.empty()) {
    rep.sbd_mean = sbd_sum / double(rows.size());
    double var = 0;
    for (const auto& r : rows) var += (r.sbd - rep.sbd_mean) * (r.sbd - rep.sbd_mean);
    rep.sbd_std = std::sqrt(var / double(rows.size()));
  }
  rep.per_image = std::move(rows);
  return rep;
}

inline nlohmann::json metrics_to_json(const MetricsReport& rep) {
  nlohmann::json per_image = nlohmann::json::array();
  for (const auto& r : rep.per_image) {
    per_image.push_back({{"id", r.id},
                         {"n_true", r.n_true},
                         {"n_pred", r.n_pred},
                         {"dic", r.dic},
                         {"abs_dic", std::abs(r.dic)},
                         {"sbd", r.sbd}});
  }
  nlohmann::json aggregate{{"images", rep.per_image.size()},
                           {"dic_mean", rep.counts.dic_mean},
                           {"dic_std", rep.counts.dic_std},
                           {"abs_dic_mean", rep.counts.abs_dic_mean},
                           {"abs_dic_std", rep.counts.abs_dic_std},
                           {"sbd_mean", rep.sbd_mean},
                           {"sbd_std", rep.sbd_std},
                           {"ap_r_050", rep.ap.ap_050},
                           {"ap_r_ave", rep.ap.ap_ave}};
  return nlohmann::json{{"per_image", per_image}, {"aggregate", aggregate}};
}

// Plain-text summary, one metric per row: mean first, standard deviation in
// parentheses.
inline std::string metrics_to_text(const MetricsReport& rep) {
  std::ostringstream os;
  char buf[128];
  os << "metric      mean (std)\n";
  std::snprintf(buf, sizeof buf, "DiC         %.2f (%.2f)\n", rep.counts.dic_mean,
                rep.counts.dic_std);
  os << buf;
  std::snprintf(buf, sizeof buf, "|DiC|       %.2f (%.2f)\n",
                rep.counts.abs_dic_mean, rep.counts.abs_dic_std);
  os << buf;
  std::snprintf(buf, sizeof buf, "SBD(%%)      %.1f (%.1f)\n", 100 * rep.sbd_mean,
                100 * rep.sbd_std);
  os << buf;
  std::snprintf(buf, sizeof buf, "AP^r(0.5)   %.3f\n", rep.ap.ap_050);
  os << buf;
  std::snprintf(buf, sizeof buf, "AP^r Ave    %.3f\n", rep.ap.ap_ave);
  os << buf;
  return os.str();
}

}  // namespace ris
