#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dspl/blocks.hpp"
#include "dspl/config.hpp"
#include "dspl/froc.hpp"
#include "dspl/model.hpp"
#include "dspl/phantom.hpp"
#include "dspl/spl.hpp"

namespace dspl::pipeline {

using Log = std::function<void(const std::string&)>;
using froc::DetectionCandidate;
using phantom::PhantomScene;

/// Stops `patience` epochs after the best one, or at `max_epochs`.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, std::size_t max_epochs);
  /// Records the validation score of the epoch just finished (higher is
  /// better). Returns false once training should stop.
  bool update(double score);
  std::size_t epochs() const { return epochs_; }
  /// 1-based; 0 before the first update.
  std::size_t best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }
  /// Whether the last update set a new best.
  bool improved() const { return improved_; }

 private:
  std::size_t patience_, max_epochs_;
  std::size_t epochs_ = 0, best_epoch_ = 0;
  double best_ = 0.0;
  bool improved_ = false;
};

/// Pooled hard Dice of (prob >= threshold) against a {0,1} mask; 1 when
/// both are empty.
double dice_score(const Tensor& prob, const Tensor& mask, double threshold = 0.5);

struct Stage1Epoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_dice = 0.0;
  bool best = false;
};

struct Stage1Result {
  nn::Model model;  // weights of the best validation epoch
  std::vector<Stage1Epoch> log;
  std::size_t best_epoch = 0;
};

struct TrainValSplit {
  std::vector<PhantomScene> train;
  std::vector<PhantomScene> val;
};
/// Fold 0 of a seeded k-fold split is held out for validation.
TrainValSplit split_train_val(std::span<const PhantomScene> scenes, std::size_t folds,
                              std::uint64_t seed);

/// BCE + soft Dice with Adam on random crops (half of them centered near a
/// nodule, random flips), early-stopped on validation Dice. Throws
/// std::runtime_error on a non-finite loss.
Stage1Result train_stage1(const RunConfig& config, std::span<const PhantomScene> train,
                          std::span<const PhantomScene> val, std::uint64_t seed,
                          const Log& log = {});

/// 4-connected components of (prob >= threshold) over the last two
/// extents of `prob`. Each component yields its probability-weighted
/// centroid and its peak probability, in raster order of first pixel.
std::vector<DetectionCandidate> candidates_from_map(const Tensor& prob, const std::string& scan_id,
                                                    double threshold);

std::vector<DetectionCandidate> detect_candidates(const nn::Model& unet,
                                                  std::span<const PhantomScene> scenes,
                                                  double threshold);

struct HardNegatives {
  std::vector<DetectionCandidate> negatives;
  std::size_t available = 0;  // false positives before truncation
};

/// The top_n false positives (scoring order) among the candidates.
HardNegatives mine_hard_negatives(std::span<const DetectionCandidate> cands,
                                  std::span<const froc::NoduleAnnotation> annos, std::size_t top_n);

std::vector<froc::NoduleAnnotation> all_annotations(std::span<const PhantomScene> scenes);

struct SampleInfo {
  std::string scan_id;
  double y = 0.0;
  double x = 0.0;
  std::string source;  // positive | random | hard
  int true_label = 0;
  bool noisy = false;  // label flipped
};

struct Stage2Set {
  spl::LabeledSet data;
  std::vector<SampleInfo> info;
};

/// Patches around every non-ignored nodule (plus jittered copies), random
/// lung background and the mined hard negatives; then `label_noise` of the
/// labels are flipped. Throws when only one class is present.
Stage2Set build_stage2_set(const RunConfig& config, std::span<const PhantomScene> scenes,
                           std::span<const DetectionCandidate> hard_negatives, std::uint64_t seed);

struct Stage2Result {
  nn::Model model;
  std::vector<spl::EpochStats> log;
  std::vector<double> final_v;     // weights of the last epoch
  std::vector<double> final_loss;  // per-sample loss after training
};

/// SGD with momentum and per-epoch learning-rate decay, self-paced or
/// equally weighted.
Stage2Result train_stage2(const RunConfig& config, const Stage2Set& set, std::uint64_t seed,
                          const Log& log = {});

/// Mean final weight over the flipped and the intact samples.
struct WeightSplit {
  double noisy = 0.0;
  double clean = 0.0;
};
WeightSplit mean_weights(const Stage2Set& set, std::span<const double> v);

/// Replaces each probability with the stage-2 nodule probability of the
/// patch at the candidate center.
std::vector<DetectionCandidate> rescore(const nn::Model& fpr, std::size_t patch,
                                        std::span<const PhantomScene> scenes,
                                        std::span<const DetectionCandidate> cands);

struct Evaluation {
  std::vector<DetectionCandidate> detector_candidates;
  std::vector<DetectionCandidate> scored;
  froc::CpmReport detector;  // stage-1 probabilities only
  froc::CpmReport final;
};
Evaluation evaluate_candidates(const nn::Model& fpr, const RunConfig& config,
                               std::span<const PhantomScene> test,
                               std::vector<DetectionCandidate> detector_candidates);

/// Checkpoint plus a text sidecar (<path>.arch.txt) describing the layers.
void save_model(const nn::Model& m, const std::filesystem::path& path);
nn::Model load_unet(const RunConfig& config, const std::filesystem::path& path);
nn::Model load_fpr(const RunConfig& config, const std::filesystem::path& path);

void write_stage1_log(const std::filesystem::path& path, std::span<const Stage1Epoch> log);
/// index,scan_id,center_y,center_x,source,label,true_label,noisy,v,loss
void write_sample_weights(const std::filesystem::path& path, const Stage2Set& set,
                          const Stage2Result& result);
void write_hard_negatives(const std::filesystem::path& path,
                          std::span<const DetectionCandidate> negatives);
std::vector<DetectionCandidate> read_hard_negatives(const std::filesystem::path& path);

struct AblationRun {
  std::string ddb;
  spl::Weighting weighting = spl::Weighting::SelfPaced;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  double detector_cpm = 0.0;
  double cpm = 0.0;
  WeightSplit mean_v;
  double seconds = 0.0;  // stage 1 shared between weightings counts for both
};

struct AblationRow {
  std::string ddb;
  spl::Weighting weighting = spl::Weighting::SelfPaced;
  std::size_t detector_params = 0;
  std::size_t fpr_params = 0;
  std::vector<double> cpm;           // per repeat
  std::vector<double> detector_cpm;  // per repeat
  double median_cpm = 0.0;
  double median_detector_cpm = 0.0;
  double median_seconds = 0.0;
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::vector<AblationRow> rows;
};

double median(std::vector<double> values);

/// Every DDB setting in config.ablation_ddb crossed with both weightings,
/// repeated with seeds config.seed + r. Stage 1 is trained once per
/// (setting, repeat) and shared by both weightings. Per-cell artifacts go
/// under out/cells/.
AblationResult run_ablation(const RunConfig& config, std::span<const PhantomScene> train,
                            std::span<const PhantomScene> test, const std::filesystem::path& out,
                            const Log& log = {});

/// ddb_positions,weighting,detector_params,fpr_params,repeats,median_detector_cpm,median_cpm,cpm_runs
/// with positions written "none", "1", "1+2", ... and cpm_runs ';'-separated.
void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result);
/// ddb_positions,weighting,repeat,seed,detector_cpm,cpm,noisy_mean_v,clean_mean_v
void write_ablation_runs(const std::filesystem::path& path, const AblationResult& result);
/// Table with runtimes, for the console and ablation.md.
std::string ablation_markdown(const AblationResult& result);

}  // namespace dspl::pipeline
