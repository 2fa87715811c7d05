#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ris/image_io.hpp"
#include "ris/instances.hpp"

namespace ris {

template <typename T>
struct SceneSample {
  std::string id;
  Tensor<T> image;  // [c,h,w] in [0,1]
  InstanceLabelSet<T> labels;
};

enum class ShapeFamily { Disc, Ellipse, Blob };

inline std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::Disc: return "disc";
    case ShapeFamily::Ellipse: return "ellipse";
    case ShapeFamily::Blob: return "blob";
  }
  return "disc";
}

inline ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "disc") return ShapeFamily::Disc;
  if (s == "ellipse") return ShapeFamily::Ellipse;
  if (s == "blob") return ShapeFamily::Blob;
  throw std::invalid_argument("unknown shape family '" + s + "'");
}

struct SceneConfig {
  int height = 64, width = 64, channels = 1;
  int min_instances = 1, max_instances = 4;
  ShapeFamily family = ShapeFamily::Disc;
  double radius_min = 6.0, radius_max = 13.0;
  double overlap_allowance = 0.25;  // max hidden fraction of an earlier instance
  double bg_min = 0.0, bg_max = 0.15;
  double fg_min = 0.5, fg_max = 1.0;
  double noise_sigma = 0.05;
  double empty_fraction = 0.0;  // probability of an n = 0 scene
  std::uint64_t seed = 0;

  void validate() const {
    if (height < 8 || width < 8) throw std::invalid_argument("scene: image too small");
    if (channels != 1 && channels != 3)
      throw std::invalid_argument("scene: channels must be 1 or 3");
    if (min_instances < 0 || max_instances < min_instances)
      throw std::invalid_argument("scene: bad instance count range");
    if (min_instances < 1 && empty_fraction <= 0.0)
      throw std::invalid_argument(
          "scene: min_instances must be >= 1 unless empty_fraction > 0");
    if (radius_min < 2.0 || radius_max < radius_min)
      throw std::invalid_argument("scene: bad radius range");
    if (radius_max > std::min(height, width) / 2.0 - 2.0)
      throw std::invalid_argument("scene: radius_max too large for the image");
    if (overlap_allowance < 0.0 || overlap_allowance >= 1.0)
      throw std::invalid_argument("scene: overlap_allowance must be in [0,1)");
  }
};

inline void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"channels", c.channels},
                     {"min_instances", c.min_instances},
                     {"max_instances", c.max_instances},
                     {"family", to_string(c.family)},
                     {"radius_min", c.radius_min},
                     {"radius_max", c.radius_max},
                     {"overlap_allowance", c.overlap_allowance},
                     {"bg_min", c.bg_min},
                     {"bg_max", c.bg_max},
                     {"fg_min", c.fg_min},
                     {"fg_max", c.fg_max},
                     {"noise_sigma", c.noise_sigma},
                     {"empty_fraction", c.empty_fraction},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SceneConfig& c) {
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.channels = j.value("channels", c.channels);
  c.min_instances = j.value("min_instances", c.min_instances);
  c.max_instances = j.value("max_instances", c.max_instances);
  if (j.contains("family")) c.family = shape_family_from_string(j.at("family"));
  c.radius_min = j.value("radius_min", c.radius_min);
  c.radius_max = j.value("radius_max", c.radius_max);
  c.overlap_allowance = j.value("overlap_allowance", c.overlap_allowance);
  c.bg_min = j.value("bg_min", c.bg_min);
  c.bg_max = j.value("bg_max", c.bg_max);
  c.fg_min = j.value("fg_min", c.fg_min);
  c.fg_max = j.value("fg_max", c.fg_max);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.empty_fraction = j.value("empty_fraction", c.empty_fraction);
  c.seed = j.value("seed", c.seed);
}

namespace detail {

constexpr int kMinVisiblePixels = 16;
constexpr int kPlacementRetries = 100;
constexpr double kPi = 3.14159265358979323846;

struct ShapeSpec {
  double cy = 0, cx = 0;
  double r0 = 0, r1 = 0;  // radii (disc uses r0 only)
  double angle = 0;       // ellipse orientation
  double wobble[3] = {0, 0, 0};
  double phase[3] = {0, 0, 0};
};

inline bool inside_shape(ShapeFamily family, const ShapeSpec& s, double y, double x) {
  const double dy = y - s.cy, dx = x - s.cx;
  switch (family) {
    case ShapeFamily::Disc:
      return dy * dy + dx * dx <= s.r0 * s.r0;
    case ShapeFamily::Ellipse: {
      const double u = (dx * std::cos(s.angle) + dy * std::sin(s.angle)) / s.r0;
      const double v = (-dx * std::sin(s.angle) + dy * std::cos(s.angle)) / s.r1;
      return u * u + v * v <= 1.0;
    }
    case ShapeFamily::Blob: {
      const double dist = std::sqrt(dy * dy + dx * dx);
      const double theta = std::atan2(dy, dx);
      const double r = s.r0 * (1.0 + s.wobble[0] * std::cos(theta + s.phase[0]) +
                               s.wobble[1] * std::cos(2 * theta + s.phase[1]) +
                               s.wobble[2] * std::cos(3 * theta + s.phase[2]));
      return dist <= std::max(r, 1.5);
    }
  }
  return false;
}

}  // namespace detail

// Draws one scene. Shapes are placed in order and each later shape occludes
// the earlier ones; a placement is retried whenever it would hide more of an
// earlier instance than the overlap allowance permits or shrink any visible
// area below the minimum. Each retained mask keeps only its visible pixels,
// so the masks are pairwise disjoint by construction.
template <typename T>
SceneSample<T> generate_sample(const SceneConfig& cfg, std::uint64_t sample_seed,
                               const std::string& id) {
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  int n = 0;
  if (cfg.empty_fraction > 0.0 && unif(rng) < cfg.empty_fraction) {
    n = 0;
  } else {
    std::uniform_int_distribution<int> count(std::max(cfg.min_instances, 1),
                                             cfg.max_instances);
    n = count(rng);
  }

  const int h = cfg.height, w = cfg.width;
  std::vector<std::vector<char>> visible;  // one h*w occupancy grid per instance
  std::vector<int> original_area;
  std::vector<double> intensity;

  for (int inst = 0; inst < n; ++inst) {
    bool placed = false;
    for (int attempt = 0; attempt < detail::kPlacementRetries && !placed; ++attempt) {
      detail::ShapeSpec spec;
      std::uniform_real_distribution<double> radius(cfg.radius_min, cfg.radius_max);
      spec.r0 = radius(rng);
      spec.r1 = radius(rng);
      spec.angle = unif(rng) * detail::kPi;
      for (int k = 0; k < 3; ++k) {
        spec.wobble[k] = (unif(rng) - 0.5) * 0.5 / (k + 1);
        spec.phase[k] = unif(rng) * 2 * detail::kPi;
      }
      const double reach = std::max(spec.r0, spec.r1) *
                           (cfg.family == ShapeFamily::Blob ? 1.4 : 1.0);
      const double margin =
          std::min(reach + 1.0, std::min(h, w) / 2.0 - 1.0);
      spec.cy = margin + unif(rng) * (h - 2 * margin);
      spec.cx = margin + unif(rng) * (w - 2 * margin);

      std::vector<char> cand(static_cast<std::size_t>(h) * w, 0);
      int cand_area = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (detail::inside_shape(cfg.family, spec, y, x)) {
            cand[static_cast<std::size_t>(y) * w + x] = 1;
            ++cand_area;
          }
      if (cand_area < detail::kMinVisiblePixels) continue;

      bool ok = true;
      for (std::size_t i = 0; i < visible.size() && ok; ++i) {
        int remain = 0;
        for (std::size_t p = 0; p < cand.size(); ++p)
          remain += (visible[i][p] && !cand[p]);
        const double hidden = 1.0 - double(remain) / double(original_area[i]);
        if (remain < detail::kMinVisiblePixels || hidden > cfg.overlap_allowance)
          ok = false;
      }
      if (!ok) continue;

      for (std::size_t i = 0; i < visible.size(); ++i)
        for (std::size_t p = 0; p < cand.size(); ++p)
          if (cand[p]) visible[i][p] = 0;
      visible.push_back(std::move(cand));
      original_area.push_back(cand_area);
      std::uniform_real_distribution<double> fg(cfg.fg_min, cfg.fg_max);
      intensity.push_back(fg(rng));
      placed = true;
    }
    if (!placed) {
      throw std::runtime_error("generate_sample: could not place instance " +
                               std::to_string(inst + 1) + " of " + std::to_string(n) +
                               " after " + std::to_string(detail::kPlacementRetries) +
                               " attempts (sample " + id + ")");
    }
  }

  SceneSample<T> sample;
  sample.id = id;
  std::uniform_real_distribution<double> bg_dist(cfg.bg_min, cfg.bg_max);
  const double bg = bg_dist(rng);
  sample.image = full<T>({cfg.channels, h, w}, static_cast<T>(bg));

  for (std::size_t i = 0; i < visible.size(); ++i) {
    Tensor<T> mask(Shape{h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!visible[i][static_cast<std::size_t>(y) * w + x]) continue;
        mask[static_cast<std::int64_t>(y) * w + x] = T(1);
        for (int c = 0; c < cfg.channels; ++c)
          sample.image.at3(c, y, x) = static_cast<T>(intensity[i]);
      }
    sample.labels.masks.push_back(std::move(mask));
  }

  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (auto& v : sample.image.data)
      v = static_cast<T>(std::clamp(static_cast<double>(v) + noise(rng), 0.0, 1.0));
  }
  return sample;
}

// Deterministic per config seed; every sample draws from its own derived
// stream, so generation could be parallelized across samples without
// changing the result.
template <typename T>
std::vector<SceneSample<T>> generate(const SceneConfig& cfg, int count) {
  cfg.validate();
  if (count < 0) throw std::invalid_argument("generate: negative count");
  std::vector<SceneSample<T>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%06d", i);
    out.push_back(generate_sample<T>(cfg, mix_seed(cfg.seed, i), id));
  }
  return out;
}

// ---- augmentation ----

// Rotation about the image center followed by an optional horizontal flip.
// The image is resampled bilinearly (zero fill outside); masks go through
// nearest-neighbor sampling and a 0.5 threshold so they stay strictly binary.
// Instances left without any pixel are dropped and n shrinks accordingly.
template <typename T>
SceneSample<T> apply_transform(const SceneSample<T>& sample, double angle,
                               bool flip) {
  const int c = sample.image.shape[0];
  const int h = sample.image.shape[1], w = sample.image.shape[2];
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double cos_a = std::cos(angle), sin_a = std::sin(angle);

  // output pixel -> source coordinates (undo flip, then rotate backwards)
  auto source_of = [&](int oy, int ox) {
    double py = oy, px = flip ? (w - 1 - ox) : ox;
    const double dy = py - cy, dx = px - cx;
    return std::pair<double, double>{cy + cos_a * dy - sin_a * dx,
                                     cx + sin_a * dy + cos_a * dx};
  };

  SceneSample<T> out;
  out.id = sample.id;
  out.image = Tensor<T>(sample.image.shape);
  for (int oy = 0; oy < h; ++oy)
    for (int ox = 0; ox < w; ++ox) {
      const auto [sy, sx] = source_of(oy, ox);
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        auto at = [&](int y, int x) -> double {
          if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
          return static_cast<double>(sample.image.at3(ch, y, x));
        };
        const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        out.image.at3(ch, oy, ox) = static_cast<T>(v);
      }
    }

  for (const auto& mask : sample.labels.masks) {
    Tensor<T> m(mask.shape);
    std::int64_t area = 0;
    for (int oy = 0; oy < h; ++oy)
      for (int ox = 0; ox < w; ++ox) {
        const auto [sy, sx] = source_of(oy, ox);
        const int ny = static_cast<int>(std::lround(sy));
        const int nx = static_cast<int>(std::lround(sx));
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const double v = static_cast<double>(mask[static_cast<std::int64_t>(ny) * w + nx]);
        if (v > 0.5) {
          m[static_cast<std::int64_t>(oy) * w + ox] = T(1);
          ++area;
        }
      }
    if (area > 0) out.labels.masks.push_back(std::move(m));
  }
  return out;
}

template <typename T>
SceneSample<T> augment(const SceneSample<T>& sample, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double angle = unif(rng) * 2 * detail::kPi;
  const bool flip = unif(rng) < 0.5;
  return apply_transform(sample, angle, flip);
}

// ---- on-disk format ----
//
//   <dir>/manifest.jsonl   one line per sample: id, image path, mask paths, n
//   <dir>/images/<id>.pgm  (or .ppm for RGB scenes)
//   <dir>/masks/<id>/<t>.pgm  binary 0/255, t = 1..n

template <typename T>
void save_dataset(const std::vector<SceneSample<T>>& samples,
                  const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
  for (const auto& s : samples) {
    const bool rgb = s.image.shape[0] == 3;
    const std::string image_rel =
        "images/" + s.id + (rgb ? std::string(".ppm") : std::string(".pgm"));
    write_image((fs::path(dir) / image_rel).string(), s.image);
    fs::create_directories(fs::path(dir) / "masks" / s.id);
    nlohmann::json masks = nlohmann::json::array();
    for (int t = 0; t < s.labels.count(); ++t) {
      const std::string mask_rel =
          "masks/" + s.id + "/" + std::to_string(t + 1) + ".pgm";
      write_mask((fs::path(dir) / mask_rel).string(), s.labels.masks[t]);
      masks.push_back(mask_rel);
    }
    nlohmann::json line{{"id", s.id},
                        {"image", image_rel},
                        {"masks", masks},
                        {"n", s.labels.count()}};
    manifest << line.dump() << "\n";
  }
}

template <typename T>
std::vector<SceneSample<T>> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dir) / "manifest.jsonl";
  std::ifstream manifest(manifest_path);
  if (!manifest)
    throw std::runtime_error("load_dataset: missing manifest " +
                             manifest_path.string());
  std::vector<SceneSample<T>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_dataset: bad manifest line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    SceneSample<T> s;
    s.id = j.at("id").get<std::string>();
    const fs::path image_path = fs::path(dir) / j.at("image").get<std::string>();
    if (!fs::exists(image_path))
      throw std::runtime_error("load_dataset: sample " + s.id +
                               " missing image file " + image_path.string());
    s.image = read_image<T>(image_path.string());
    const auto masks = j.at("masks");
    if (static_cast<int>(masks.size()) != j.at("n").get<int>())
      throw std::runtime_error("load_dataset: sample " + s.id +
                               " mask count disagrees with n");
    for (const auto& rel : masks) {
      const fs::path mask_path = fs::path(dir) / rel.get<std::string>();
      if (!fs::exists(mask_path))
        throw std::runtime_error("load_dataset: sample " + s.id +
                                 " missing mask file " + mask_path.string());
      Tensor<T> mask = read_mask<T>(mask_path.string());
      if (mask.shape[0] != s.image.shape[1] || mask.shape[1] != s.image.shape[2])
        throw std::runtime_error("load_dataset: sample " + s.id + " mask " +
                                 mask_path.string() + " shape " +
                                 shape_str(mask.shape) +
                                 " disagrees with image " +
                                 shape_str(s.image.shape));
      bool any = false;
      for (T v : mask.data) any |= (v > T(0));
      if (!any)
        throw std::runtime_error("load_dataset: sample " + s.id +
                                 " has an empty mask " + mask_path.string());
      s.labels.masks.push_back(std::move(mask));
    }
    out.push_back(std::move(s));
  }
  if (out.empty())
    throw std::runtime_error("load_dataset: no samples found in " + dir);
  return out;
}

}  // namespace ris
