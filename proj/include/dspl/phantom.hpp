#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dspl/froc.hpp"
#include "dspl/tensor.hpp"

namespace dspl::phantom {

enum class Difficulty { Easy, JuxtaVascular, Spiculated };

std::string difficulty_name(Difficulty d);

struct PhantomConfig {
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t nodules_min = 1;
  std::size_t nodules_max = 3;
  /// Share of nodules drawn as juxta-vascular or spiculated (split evenly).
  double hard_fraction = 0.5;
  double diameter_min = 4.0;
  double diameter_max = 16.0;
  /// Share of nodules drawn below 5 px and annotated ignore=1.
  double tiny_fraction = 0.1;
  std::size_t vessels = 5;
  double noise = 0.03;

  void validate() const;
};

struct Point {
  double y = 0.0;
  double x = 0.0;
};

struct PhantomScene {
  std::string scene_id;
  std::uint64_t seed = 0;
  Tensor image;  // [1,H,W], values in [0,1]
  std::vector<froc::NoduleAnnotation> annotations;
  /// One tag per annotation; empty for scenes read back from disk.
  std::vector<Difficulty> difficulty;
};

/// Lung-field ellipse used by every scene of the given extent.
struct LungField {
  double cy, cx, ry, rx;
  bool contains(double y, double x, double margin = 0.0) const;
};
LungField lung_field(std::size_t height, std::size_t width);

/// Throws std::runtime_error when a nodule cannot be placed in 100 tries.
PhantomScene generate_scene(std::uint64_t seed, const PhantomConfig& config,
                            std::string scene_id = "scene");

/// Per-pixel target: 1 inside every annotated disc (ignored ones too).
Tensor nodule_mask(const PhantomScene& scene);

struct PatchSet {
  Tensor patches;           // [N,1,size,size]
  std::vector<int> labels;  // 1 iff the center hits a non-ignored annotation
};

/// Crops centered at the rounded centers, zero-padded past the borders.
PatchSet extract_patches(const PhantomScene& scene, std::span<const Point> centers,
                         std::size_t size);

struct FoldSplit {
  std::size_t k = 0;
  std::vector<std::string> scene_ids;
  std::vector<std::size_t> assignment;  // fold index per scene id

  std::vector<std::string> fold(std::size_t f) const;
  std::vector<std::string> complement(std::size_t f) const;
};

/// Seeded shuffle, then round-robin over k folds.
FoldSplit split_folds(std::span<const std::string> scene_ids, std::size_t k, std::uint64_t seed);

// Raw image format: "PHNT1", u32 H, u32 W, f64 pixels row-major, little-endian.
void write_image(const std::filesystem::path& path, const Tensor& image);
Tensor read_image(const std::filesystem::path& path);

/// Corpus directory layout:
///   images/<scene_id>.phnt
///   annotations.csv  scan_id,center_y,center_x,diameter,ignore
///   manifest.csv     scene_id,seed,easy,juxta_vascular,spiculated
void write_corpus(const std::filesystem::path& dir, std::span<const PhantomScene> scenes);
std::vector<PhantomScene> read_corpus(const std::filesystem::path& dir);

/// Scenes first_index .. first_index+count-1 with seed (seed xor index) and
/// ids "scene_NNNN".
std::vector<PhantomScene> generate_scenes(std::uint64_t seed, std::size_t first_index,
                                          std::size_t count, const PhantomConfig& config);

}  // namespace dspl::phantom
