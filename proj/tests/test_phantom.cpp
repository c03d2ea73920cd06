#include <gtest/gtest.h>

#include <cmath>

#include "dspl/phantom.hpp"
#include "dspl/rng.hpp"

using namespace dspl;
using namespace dspl::phantom;

namespace {

double disc_mean(const Tensor& img, double cy, double cx, double r) {
  const std::size_t H = img.dim(1), W = img.dim(2);
  double s = 0.0;
  int n = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if (std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx) <= r) {
        s += img[y * W + x];
        ++n;
      }
  return n ? s / n : 0.0;
}

}  // namespace

TEST(Phantom, RegenerationIsBitIdentical) {
  PhantomConfig c;
  const auto a = generate_scene(99, c, "s");
  const auto b = generate_scene(99, c, "s");
  EXPECT_TRUE(a.image.bit_equal(b.image));
  ASSERT_EQ(a.annotations.size(), b.annotations.size());
  for (std::size_t i = 0; i < a.annotations.size(); ++i) {
    EXPECT_EQ(a.annotations[i].y, b.annotations[i].y);
    EXPECT_EQ(a.annotations[i].diameter, b.annotations[i].diameter);
  }
  EXPECT_FALSE(a.image.bit_equal(generate_scene(100, c, "s").image));
}

TEST(Phantom, ZeroNodulesGivesNoAnnotations) {
  PhantomConfig c;
  c.nodules_min = c.nodules_max = 0;
  EXPECT_TRUE(generate_scene(1, c).annotations.empty());
}

TEST(Phantom, SceneInvariants) {
  PhantomConfig c;
  std::size_t hard = 0, total = 0, ignored = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto s = generate_scene(seed, c, "s");
    ASSERT_EQ(s.image.shape(), (Shape{1, 128, 128}));
    for (double v : s.image.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    const LungField lung = lung_field(128, 128);
    ASSERT_EQ(s.difficulty.size(), s.annotations.size());
    for (std::size_t i = 0; i < s.annotations.size(); ++i) {
      const auto& a = s.annotations[i];
      EXPECT_TRUE(lung.contains(a.y, a.x));
      EXPECT_GE(a.diameter, c.diameter_min);
      EXPECT_LE(a.diameter, c.diameter_max);
      EXPECT_EQ(a.ignore, a.diameter < 5.0);
      for (std::size_t j = 0; j < i; ++j) {
        const auto& b = s.annotations[j];
        EXPECT_GT(std::hypot(a.y - b.y, a.x - b.x), (a.diameter + b.diameter) / 2.0);
      }
      hard += s.difficulty[i] != Difficulty::Easy;
      ignored += a.ignore;
      ++total;
    }
  }
  EXPECT_GT(ignored, 0u);
  EXPECT_NEAR(static_cast<double>(hard) / static_cast<double>(total), c.hard_fraction, 0.12);
}

TEST(Phantom, NodulesBrighterThanNoduleFreeDiscs) {
  PhantomConfig c;
  Rng rng(5);
  std::size_t brighter = 0, total = 0;
  const LungField lung = lung_field(c.height, c.width);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = generate_scene(seed, c, "s");
    for (const auto& a : s.annotations) {
      const double r = a.diameter / 2.0;
      double y = 0, x = 0;
      for (;;) {
        y = rng.uniform(0, 128);
        x = rng.uniform(0, 128);
        if (!lung.contains(y, x, r + 1.0)) continue;
        bool clear = true;
        for (const auto& b : s.annotations) {
          if (std::hypot(b.y - y, b.x - x) <= r + b.diameter / 2.0) clear = false;
        }
        if (clear) break;
      }
      brighter += disc_mean(s.image, a.y, a.x, r) > disc_mean(s.image, y, x, r);
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(brighter), 0.95 * static_cast<double>(total));
}

TEST(Phantom, PlacementFailureIsReported) {
  PhantomConfig c;
  c.nodules_min = c.nodules_max = 60;
  c.diameter_min = c.diameter_max = 16;
  EXPECT_THROW(generate_scene(1, c), std::runtime_error);
  PhantomConfig small;
  small.height = 32;
  EXPECT_THROW(generate_scene(1, small), std::invalid_argument);
}

TEST(Patches, LabelsFollowHitRule) {
  PhantomConfig c;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = generate_scene(seed, c, "s");
    std::vector<Point> centers;
    for (const auto& a : s.annotations) centers.push_back({a.y, a.x});
    centers.push_back({2.0, 2.0});
    const auto p = extract_patches(s, centers, 32);
    ASSERT_EQ(p.patches.shape(), (Shape{centers.size(), 1, 32, 32}));
    for (std::size_t i = 0; i < s.annotations.size(); ++i) {
      EXPECT_EQ(p.labels[i], s.annotations[i].ignore ? 0 : 1);
    }
    EXPECT_EQ(p.labels.back(), 0);
  }
}

TEST(Patches, CornerCropIsZeroPaddedExactly) {
  PhantomConfig c;
  const auto s = generate_scene(3, c, "s");
  const std::vector<Point> centers{{1.0, 126.0}};
  const auto p = extract_patches(s, centers, 16);
  // rows -7..8 and columns 118..133 of the image
  for (long py = 0; py < 16; ++py)
    for (long px = 0; px < 16; ++px) {
      const long iy = py - 7, ix = px + 118;
      const double v = p.patches[static_cast<std::size_t>(py * 16 + px)];
      if (iy < 0 || ix >= 128) {
        EXPECT_EQ(v, 0.0);
      } else {
        EXPECT_EQ(v, s.image[static_cast<std::size_t>(iy * 128 + ix)]);
      }
    }
  EXPECT_THROW(extract_patches(s, centers, 15), std::invalid_argument);
}

TEST(Folds, RoundRobinSizes) {
  std::vector<std::string> ids;
  for (int i = 0; i < 103; ++i) ids.push_back("s" + std::to_string(i));
  const auto split = split_folds(ids, 10, 4);
  std::vector<std::size_t> sizes;
  std::size_t covered = 0;
  for (std::size_t f = 0; f < 10; ++f) {
    sizes.push_back(split.fold(f).size());
    covered += sizes.back();
    EXPECT_EQ(split.fold(f).size() + split.complement(f).size(), 103u);
  }
  EXPECT_EQ(covered, 103u);
  EXPECT_EQ(std::count(sizes.begin(), sizes.end(), 11u), 3);
  EXPECT_EQ(std::count(sizes.begin(), sizes.end(), 10u), 7);
  EXPECT_EQ(split.assignment, split_folds(ids, 10, 4).assignment);

  const std::vector<std::string> ten(ids.begin(), ids.begin() + 10);
  const auto one_each = split_folds(ten, 10, 1);
  for (std::size_t f = 0; f < 10; ++f) EXPECT_EQ(one_each.fold(f).size(), 1u);
  EXPECT_THROW(split_folds(ten, 11, 1), std::invalid_argument);
  EXPECT_THROW(split_folds(ten, 1, 1), std::invalid_argument);
}

TEST(Corpus, RoundTrip) {
  PhantomConfig c;
  const auto scenes = generate_scenes(11, 5, 4, c);
  EXPECT_EQ(scenes[0].scene_id, "scene_0005");
  EXPECT_EQ(scenes[0].seed, 11u ^ 5u);
  const auto dir = std::filesystem::temp_directory_path() / "dspl_corpus_test";
  std::filesystem::remove_all(dir);
  write_corpus(dir, scenes);
  const auto back = read_corpus(dir);
  ASSERT_EQ(back.size(), scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    EXPECT_EQ(back[i].scene_id, scenes[i].scene_id);
    EXPECT_EQ(back[i].seed, scenes[i].seed);
    EXPECT_TRUE(back[i].image.bit_equal(scenes[i].image));
    ASSERT_EQ(back[i].annotations.size(), scenes[i].annotations.size());
    for (std::size_t j = 0; j < back[i].annotations.size(); ++j) {
      EXPECT_EQ(back[i].annotations[j].x, scenes[i].annotations[j].x);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Mask, CoversAnnotatedDiscs) {
  PhantomConfig c;
  const auto s = generate_scene(8, c, "s");
  const Tensor m = nodule_mask(s);
  for (const auto& a : s.annotations) {
    EXPECT_EQ(m[static_cast<std::size_t>(std::lround(a.y)) * 128 + static_cast<std::size_t>(std::lround(a.x))], 1.0);
  }
  EXPECT_EQ(m[0], 0.0);
}
