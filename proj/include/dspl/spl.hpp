#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dspl/model.hpp"
#include "dspl/optim.hpp"
#include "dspl/tensor.hpp"

namespace dspl::spl {

/// Losses at or below this fraction of lambda count as zero loss (v = 1).
/// Without it a huge pace still leaves v = 1 - O(loss/lambda), and the
/// large-lambda run never reduces bit-for-bit to unweighted training.
inline constexpr double kNegligibleLossRatio = 1e-8;

/// Closed-form minimizer over v in [0,1] of
///   v * loss + lambda * (v^q / q - v),
/// i.e. 1 at zero loss, 0 once loss >= lambda, (1 - loss/lambda)^(1/(q-1))
/// in between.
double spl_weight(double loss, double lambda, double q);

/// The objective is separable in v, so the v-block minimizer is elementwise.
std::vector<double> v_step(std::span<const double> losses, double lambda, double q);

/// sum_i v_i L_i + lambda * sum_i (v_i^q / q - v_i).
double spl_objective(std::span<const double> losses, std::span<const double> v, double lambda,
                     double q);

struct SplSchedule {
  /// Fixed starting pace; when absent, lambda starts at the given
  /// percentile of the first epoch's losses.
  std::optional<double> lambda0;
  double lambda0_percentile = 60.0;
  /// With a percentile start, give each class its own threshold
  /// lambda * (class percentile / overall percentile), recomputed from the
  /// current losses every epoch, so a class whose losses drift up as a
  /// whole is not shut out of the curriculum.
  bool balance_classes = true;
  double gamma = 1.15;
  double q0 = 2.0;
  double mu = 0.9;
  double q_min = 1.05;

  void validate() const;
  /// Accepts "percentile:P" or a positive number.
  void set_lambda0(const std::string& text);
  std::string lambda0_text() const;
};

struct SplState {
  std::vector<double> v;
  double lambda = 0.0;
  double q = 2.0;
  int t = 0;
  /// Per-label multipliers of lambda; empty means one shared threshold.
  std::vector<double> class_scale;
  SplSchedule schedule;
  bool initialized = false;

  static SplState start(const SplSchedule& schedule);
};

/// Per-label ratio of the p-th loss percentile within the label to the p-th
/// percentile over all samples; 1 where either is zero or the label is absent.
std::vector<double> class_scales(std::span<const double> losses, std::span<const int> labels,
                                 double p);

/// Weights under per-label thresholds lambda * class_scale[label].
std::vector<double> v_step_by_class(std::span<const double> losses, std::span<const int> labels,
                                    double lambda, std::span<const double> class_scale, double q);

/// Linear-interpolated percentile (p in [0,100]).
double percentile(std::span<const double> values, double p);

/// lambda <- lambda * gamma; q <- max(q_min, 1 + (q0 - 1) mu^(t+1)); t <- t + 1.
SplState pace_update(SplState state);

class EmptyCurriculum : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Weighting { SelfPaced, EqualWeight };

std::string weighting_name(Weighting w);
Weighting parse_weighting(const std::string& text);

struct EpochStats {
  int epoch = 0;
  double lambda = 0.0;
  double q = 0.0;
  double mean_loss = 0.0;
  double active_fraction = 0.0;
};

/// Classification samples: inputs [N, ...] with one integer label per row.
struct LabeledSet {
  Tensor inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  Tensor gather(std::span<const std::size_t> rows) const;
};

struct EpochOptions {
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  Weighting weighting = Weighting::SelfPaced;
};

/// Eval-mode cross entropy per sample.
std::vector<double> per_sample_losses(const nn::Model& model, const LabeledSet& data,
                                      std::size_t batch_size);

/// One alternating-minimization epoch:
///   1. losses under the frozen model (eval mode);
///   2. v-step (all ones for equal weighting);
///   3. one shuffled mini-batch pass on sum_i v_i L_i / batch_size over the
///      samples with v_i > 0, v frozen;
///   4. pace update.
/// Throws EmptyCurriculum when no sample is admitted.
EpochStats spl_train_epoch(nn::Model& model, const LabeledSet& data, SplState& state,
                           Optimizer& optimizer, const EpochOptions& options);

/// CSV header: epoch,lambda,q,mean_loss,active_fraction
void write_epoch_stats(const std::filesystem::path& path, std::span<const EpochStats> stats);
std::vector<EpochStats> read_epoch_stats(const std::filesystem::path& path);

}  // namespace dspl::spl
