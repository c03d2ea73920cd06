#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dspl/blocks.hpp"
#include "dspl/phantom.hpp"
#include "dspl/spl.hpp"

namespace dspl {

/// Everything a run depends on. Serializes to flat `key = value` text with
/// `#` comments; parsing rejects unknown or repeated keys.
struct RunConfig {
  std::string experiment = "desk";
  std::uint64_t seed = 1;
  std::string corpus_dir = "corpus";
  std::string out_dir = "runs/desk";

  // data
  phantom::PhantomConfig phantom = desk_phantom();
  std::size_t train_scenes = 200;
  std::size_t test_scenes = 100;
  std::size_t folds = 5;

  // stage 1 (detector)
  nn::BlockConfig unet = default_unet();
  std::size_t s1_max_epochs = 15;
  std::size_t s1_patience = 5;
  std::size_t s1_batch = 16;
  std::size_t s1_crop = 64;
  std::size_t s1_crops_per_scene = 1;
  double s1_lr = 1e-3;
  double prob_threshold = 0.1;

  // hard mining
  std::size_t top_n = 300;

  // stage 2 (false-positive reduction)
  nn::FprConfig fpr;
  std::size_t s2_epochs = 20;
  std::size_t s2_batch = 16;
  double s2_lr = 1e-3;
  double s2_lr_decay = 0.9;
  double s2_momentum = 0.9;
  std::size_t positive_jitter = 2;
  std::size_t random_negatives = 3;
  spl::Weighting weighting = spl::Weighting::SelfPaced;
  spl::SplSchedule spl;
  double label_noise = 0.0;

  // ablation
  std::size_t repeats = 3;
  std::vector<std::set<int>> ablation_ddb = {{}, {1}, {1, 2}, {1, 2, 3}};

  static nn::BlockConfig default_unet();
  /// Noisier, more vascular scenes with nodules up to 10 px, so the
  /// detector does not saturate.
  static phantom::PhantomConfig desk_phantom();

  void validate() const;
  std::string to_text() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

}  // namespace dspl
