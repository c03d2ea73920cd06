#include "dspl/phantom.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "binary_io.hpp"
#include "dspl/csv.hpp"
#include "dspl/rng.hpp"

namespace dspl::phantom {

namespace {

constexpr int kPlacementTries = 100;
constexpr double kTinyDiameter = 5.0;
constexpr double kBodyLevel = 0.55;
constexpr double kLungLevel = 0.12;
constexpr double kVesselLevel = 0.42;
constexpr std::array<char, 5> kImageMagic{'P', 'H', 'N', 'T', '1'};

// Two passes of a 3x3 box filter with zero padding.
void smooth(std::vector<double>& f, std::size_t h, std::size_t w) {
  std::vector<double> tmp(f.size());
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
            s += f[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
          }
        }
        tmp[y * w + x] = s / 9.0;
      }
    }
    f.swap(tmp);
  }
}

struct Stroke {
  std::vector<Point> points;
  double width;
};

double nearest_vessel(const std::vector<Stroke>& strokes, double y, double x) {
  double best = 1e300;
  for (const auto& s : strokes) {
    for (const auto& p : s.points) best = std::min(best, std::hypot(p.y - y, p.x - x));
  }
  return best;
}

// Applies fn(index, y, x) to every pixel within `radius` of (cy, cx).
template <class Fn>
void for_disc(std::size_t h, std::size_t w, double cy, double cx, double radius, Fn&& fn) {
  const long y0 = std::max(0L, static_cast<long>(std::floor(cy - radius)));
  const long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(cy + radius)));
  const long x0 = std::max(0L, static_cast<long>(std::floor(cx - radius)));
  const long x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(cx + radius)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      if (dy * dy + dx * dx <= radius * radius) {
        fn(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x), dy, dx);
      }
    }
  }
}

}  // namespace

std::string difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::JuxtaVascular: return "juxta_vascular";
    case Difficulty::Spiculated: return "spiculated";
  }
  return "unknown";
}

void PhantomConfig::validate() const {
  if (height < 64 || width < 64) throw std::invalid_argument("phantom: H and W must be >= 64");
  if (nodules_min > nodules_max) throw std::invalid_argument("phantom: nodules_min > nodules_max");
  if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0) ||
      !(tiny_fraction >= 0.0 && tiny_fraction <= 1.0)) {
    throw std::invalid_argument("phantom: fractions must lie in [0,1]");
  }
  if (!(diameter_min > 0.0 && diameter_min <= diameter_max)) {
    throw std::invalid_argument("phantom: need 0 < diameter_min <= diameter_max");
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("phantom: noise must be >= 0");
}

bool LungField::contains(double y, double x, double margin) const {
  const double a = ry - margin, b = rx - margin;
  if (a <= 0.0 || b <= 0.0) return false;
  const double u = (y - cy) / a, v = (x - cx) / b;
  return u * u + v * v <= 1.0;
}

LungField lung_field(std::size_t height, std::size_t width) {
  const auto h = static_cast<double>(height), w = static_cast<double>(width);
  return {(h - 1.0) / 2.0, (w - 1.0) / 2.0, 0.42 * h, 0.40 * w};
}

PhantomScene generate_scene(std::uint64_t seed, const PhantomConfig& config, std::string scene_id) {
  config.validate();
  Rng rng(seed);
  const std::size_t H = config.height, W = config.width;
  const LungField lung = lung_field(H, W);

  std::vector<double> img(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double u = (static_cast<double>(y) - lung.cy) / lung.ry;
      const double v = (static_cast<double>(x) - lung.cx) / lung.rx;
      const double inside = 1.0 / (1.0 + std::exp((std::sqrt(u * u + v * v) - 1.0) * 20.0));
      img[y * W + x] = kBodyLevel - (kBodyLevel - kLungLevel) * inside;
    }
  }
  std::vector<double> noise(H * W);
  for (double& n : noise) n = rng.normal();
  smooth(noise, H, W);
  // two box passes shrink white-noise sigma by about 4.3x
  for (std::size_t i = 0; i < img.size(); ++i) img[i] += 4.3 * config.noise * noise[i];

  std::vector<Stroke> strokes;
  std::vector<double> vessel(H * W, 0.0);
  for (std::size_t v = 0; v < config.vessels; ++v) {
    Stroke s{{}, rng.uniform(2.0, 4.0)};
    double y = 0.0, x = 0.0;
    do {
      y = rng.uniform(lung.cy - lung.ry, lung.cy + lung.ry);
      x = rng.uniform(lung.cx - lung.rx, lung.cx + lung.rx);
    } while (!lung.contains(y, x, 6.0));
    double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const auto steps = rng.integer(25, 70);
    for (long k = 0; k < steps && lung.contains(y, x, 2.0); ++k) {
      s.points.push_back({y, x});
      theta += 0.25 * rng.normal();
      y += std::sin(theta);
      x += std::cos(theta);
    }
    for (const auto& p : s.points) {
      for_disc(H, W, p.y, p.x, s.width / 2.0 + 1.0, [&](std::size_t i, double dy, double dx) {
        const double edge = std::clamp(s.width / 2.0 + 0.5 - std::hypot(dy, dx), 0.0, 1.0);
        vessel[i] = std::max(vessel[i], kVesselLevel * edge);
      });
    }
    strokes.push_back(std::move(s));
  }

  PhantomScene scene;
  scene.scene_id = std::move(scene_id);
  scene.seed = seed;
  std::vector<double> blobs(H * W, 0.0);
  const auto count = rng.integer(static_cast<long>(config.nodules_min),
                                 static_cast<long>(config.nodules_max));
  for (long n = 0; n < count; ++n) {
    const bool tiny = config.diameter_min < kTinyDiameter && rng.uniform() < config.tiny_fraction;
    const double d = tiny ? rng.uniform(config.diameter_min, std::min(config.diameter_max, 4.999))
                          : rng.uniform(std::max(config.diameter_min,
                                                 std::min(kTinyDiameter, config.diameter_max)),
                                        config.diameter_max);
    const double r = d / 2.0;
    const double u = rng.uniform();
    Difficulty kind = Difficulty::Easy;
    if (u < config.hard_fraction / 2.0) kind = Difficulty::JuxtaVascular;
    else if (u < config.hard_fraction) kind = Difficulty::Spiculated;
    if (kind == Difficulty::JuxtaVascular && strokes.empty()) kind = Difficulty::Spiculated;

    bool placed = false;
    double cy = 0.0, cx = 0.0;
    for (int t = 0; t < kPlacementTries && !placed; ++t) {
      if (kind == Difficulty::JuxtaVascular) {
        const auto& s = strokes[static_cast<std::size_t>(
            rng.integer(0, static_cast<long>(strokes.size()) - 1))];
        if (s.points.empty()) continue;
        const auto& p = s.points[static_cast<std::size_t>(
            rng.integer(0, static_cast<long>(s.points.size()) - 1))];
        const double a = rng.uniform(0.0, 2.0 * std::numbers::pi), off = rng.uniform(0.0, 2.0);
        cy = p.y + off * std::sin(a);
        cx = p.x + off * std::cos(a);
      } else {
        cy = rng.uniform(lung.cy - lung.ry, lung.cy + lung.ry);
        cx = rng.uniform(lung.cx - lung.rx, lung.cx + lung.rx);
      }
      if (!lung.contains(cy, cx, r + 2.0)) continue;
      bool clear = true;
      for (const auto& a : scene.annotations) {
        if (std::hypot(a.y - cy, a.x - cx) <= a.diameter / 2.0 + r) clear = false;
      }
      if (kind != Difficulty::JuxtaVascular && nearest_vessel(strokes, cy, cx) < r + 4.0) {
        clear = false;
      }
      placed = clear;
    }
    if (!placed) {
      throw std::runtime_error("phantom: could not place nodule " + std::to_string(n) + " of " +
                               scene.scene_id + " after " + std::to_string(kPlacementTries) +
                               " tries");
    }
    const double amplitude = rng.uniform(0.45, 0.6);
    const int lobes = static_cast<int>(rng.integer(5, 9));
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double reach = kind == Difficulty::Spiculated ? 2.6 * r : 2.0 * r;
    for_disc(H, W, cy, cx, reach, [&](std::size_t i, double dy, double dx) {
      double rr = r;
      if (kind == Difficulty::Spiculated) {
        rr = r * (1.0 + 0.3 * std::sin(lobes * std::atan2(dy, dx) + phase));
      }
      const double sigma = rr / 1.2;
      const double val = amplitude * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      blobs[i] = std::max(blobs[i], val);
    });
    scene.annotations.push_back({scene.scene_id, cy, cx, d, tiny});
    scene.difficulty.push_back(kind);
  }

  scene.image = Tensor(Shape{1, H, W});
  for (std::size_t i = 0; i < img.size(); ++i) {
    scene.image[i] = std::clamp(img[i] + vessel[i] + blobs[i], 0.0, 1.0);
  }
  return scene;
}

Tensor nodule_mask(const PhantomScene& scene) {
  const std::size_t H = scene.image.dim(1), W = scene.image.dim(2);
  Tensor m(Shape{1, H, W});
  for (const auto& a : scene.annotations) {
    for_disc(H, W, a.y, a.x, a.diameter / 2.0, [&](std::size_t i, double, double) { m[i] = 1.0; });
  }
  return m;
}

PatchSet extract_patches(const PhantomScene& scene, std::span<const Point> centers,
                         std::size_t size) {
  if (size == 0 || size % 2) throw std::invalid_argument("extract_patches: size must be even");
  const std::size_t H = scene.image.dim(1), W = scene.image.dim(2);
  PatchSet out{Tensor(Shape{centers.size(), 1, size, size}), {}};
  const long half = static_cast<long>(size / 2);
  for (std::size_t n = 0; n < centers.size(); ++n) {
    const auto& c = centers[n];
    if (!std::isfinite(c.y) || !std::isfinite(c.x)) {
      throw std::invalid_argument("extract_patches: non-finite center");
    }
    const long top = std::lround(c.y) - half, left = std::lround(c.x) - half;
    double* dst = out.patches.data().data() + n * size * size;
    for (std::size_t py = 0; py < size; ++py) {
      const long iy = top + static_cast<long>(py);
      if (iy < 0 || iy >= static_cast<long>(H)) continue;
      for (std::size_t px = 0; px < size; ++px) {
        const long ix = left + static_cast<long>(px);
        if (ix < 0 || ix >= static_cast<long>(W)) continue;
        dst[py * size + px] = scene.image[static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)];
      }
    }
    const froc::DetectionCandidate probe{scene.scene_id, c.y, c.x, 0.0};
    const bool positive = std::any_of(scene.annotations.begin(), scene.annotations.end(),
                                      [&](const auto& a) { return !a.ignore && froc::hits(probe, a); });
    out.labels.push_back(positive ? 1 : 0);
  }
  return out;
}

std::vector<std::string> FoldSplit::fold(std::size_t f) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < scene_ids.size(); ++i) {
    if (assignment[i] == f) out.push_back(scene_ids[i]);
  }
  return out;
}

std::vector<std::string> FoldSplit::complement(std::size_t f) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < scene_ids.size(); ++i) {
    if (assignment[i] != f) out.push_back(scene_ids[i]);
  }
  return out;
}

FoldSplit split_folds(std::span<const std::string> scene_ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("split_folds: k must be >= 2");
  if (k > scene_ids.size()) {
    throw std::invalid_argument("split_folds: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(scene_ids.size()) + " scenes");
  }
  FoldSplit s{k, {scene_ids.begin(), scene_ids.end()}, std::vector<std::size_t>(scene_ids.size())};
  std::vector<std::size_t> order(scene_ids.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  for (std::size_t i = 0; i < order.size(); ++i) s.assignment[order[i]] = i % k;
  return s;
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("write_image: expected [1,H,W]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_image: cannot open " + path.string());
  os.write(kImageMagic.data(), kImageMagic.size());
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(image.dim(1)));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(image.dim(2)));
  for (double v : image.data()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("write_image: write failed for " + path.string());
}

Tensor read_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_image: cannot open " + path.string());
  std::array<char, 5> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kImageMagic) throw std::runtime_error("read_image: missing PHNT1 magic");
  const auto h = detail::get_le<std::uint32_t>(is, "image");
  const auto w = detail::get_le<std::uint32_t>(is, "image");
  Tensor t(Shape{1, h, w});
  for (double& v : t.data()) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is, "image"));
  return t;
}

void write_corpus(const std::filesystem::path& dir, std::span<const PhantomScene> scenes) {
  std::filesystem::create_directories(dir / "images");
  std::vector<froc::NoduleAnnotation> annos;
  csv::Writer manifest(dir / "manifest.csv",
                       {"scene_id", "seed", "easy", "juxta_vascular", "spiculated"});
  for (const auto& s : scenes) {
    write_image(dir / "images" / (s.scene_id + ".phnt"), s.image);
    annos.insert(annos.end(), s.annotations.begin(), s.annotations.end());
    std::array<std::size_t, 3> counts{};
    for (Difficulty d : s.difficulty) ++counts[static_cast<std::size_t>(d)];
    manifest.row({s.scene_id, std::to_string(s.seed), std::to_string(counts[0]),
                  std::to_string(counts[1]), std::to_string(counts[2])});
  }
  froc::write_annotations(dir / "annotations.csv", annos);
}

std::vector<PhantomScene> read_corpus(const std::filesystem::path& dir) {
  const auto manifest =
      csv::read(dir / "manifest.csv", {"scene_id", "seed", "easy", "juxta_vascular", "spiculated"});
  std::map<std::string, std::vector<froc::NoduleAnnotation>> by_scene;
  for (auto& a : froc::read_annotations(dir / "annotations.csv")) by_scene[a.scan_id].push_back(a);
  std::vector<PhantomScene> out;
  for (const auto& row : manifest.rows) {
    PhantomScene s;
    s.scene_id = row[0];
    s.seed = std::stoull(row[1]);
    s.image = read_image(dir / "images" / (s.scene_id + ".phnt"));
    s.annotations = by_scene[s.scene_id];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PhantomScene> generate_scenes(std::uint64_t seed, std::size_t first_index,
                                          std::size_t count, const PhantomConfig& config) {
  std::vector<PhantomScene> out;
  out.reserve(count);
  for (std::size_t i = first_index; i < first_index + count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%04zu", i);
    out.push_back(generate_scene(seed ^ static_cast<std::uint64_t>(i), config, id));
  }
  return out;
}

}  // namespace dspl::phantom
