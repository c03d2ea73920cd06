#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dspl::froc {

struct NoduleAnnotation {
  std::string scan_id;
  double y = 0.0;
  double x = 0.0;
  double diameter = 1.0;  // pixels
  bool ignore = false;
};

struct DetectionCandidate {
  std::string scan_id;
  double y = 0.0;
  double x = 0.0;
  double probability = 0.0;
};

enum class Label { TruePositive, FalsePositive, Ignored };

struct MatchResult {
  std::vector<Label> labels;          // per candidate
  std::vector<long> matched;          // annotation index credited to a TP, else -1
  std::vector<bool> annotation_hit;   // per annotation
  std::size_t duplicate_rows = 0;     // repeated (scan, center, probability) rows
};

/// Fixed false-positive rates (per scan) averaged by the CPM.
inline constexpr std::array<double, 7> kCpmRates{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

/// True when the candidate lies in the same scan within diameter/2 of the
/// annotation center.
bool hits(const DetectionCandidate& c, const NoduleAnnotation& a);

/// Scoring order: probability descending, then scan_id, y, x ascending.
std::vector<std::size_t> scoring_order(std::span<const DetectionCandidate> cands);

/// Labels candidates in scoring order. The first candidate to reach a
/// non-ignored nodule is the TP for it (the nearest still-unclaimed one
/// when several are in reach); later hits on claimed nodules and hits on
/// ignored nodules only are IGNORED; the rest are FP.
MatchResult match_candidates(std::span<const DetectionCandidate> cands,
                             std::span<const NoduleAnnotation> annos);

struct OperatingPoint {
  double fp_per_scan = 0.0;
  double sensitivity = 0.0;
  bool operator==(const OperatingPoint&) const = default;
};

/// One point per distinct probability threshold t (candidates with p >= t
/// kept), in decreasing t: (FP / n_scans, distinct TP nodules / n_nodules).
std::vector<OperatingPoint> froc_curve(std::span<const DetectionCandidate> cands,
                                       const MatchResult& match, std::size_t n_scans,
                                       std::size_t n_nodules);

/// Sensitivity of the last operating point with fp_per_scan <= fp_rate;
/// 0 when there is none.
double sensitivity_at(std::span<const OperatingPoint> curve, double fp_rate);

struct CpmReport {
  std::vector<OperatingPoint> operating_points;
  std::array<double, 7> sensitivities_at_c{};
  double cpm = 0.0;
};

CpmReport cpm(std::span<const OperatingPoint> curve);
/// Mean of seven sensitivities listed against kCpmRates.
double cpm_from_sensitivities(std::span<const double, 7> sensitivities);

/// Match, build the curve and score. n_nodules counts non-ignored
/// annotations; scans without annotations still count in n_scans.
CpmReport evaluate(std::span<const DetectionCandidate> cands,
                   std::span<const NoduleAnnotation> annos, std::size_t n_scans,
                   std::size_t* duplicate_rows = nullptr);

// CSV schemas:
//   annotations: scan_id,center_y,center_x,diameter,ignore
//   candidates:  scan_id,center_y,center_x,probability
//   report:      kind,fp_per_scan,sensitivity rows of kind "point" (every
//                operating point) and "target" (the seven CPM rates),
//                followed by a final "CPM,<value>" line.
std::vector<NoduleAnnotation> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, std::span<const NoduleAnnotation> annos);
std::vector<DetectionCandidate> read_candidates(const std::filesystem::path& path);
void write_candidates(const std::filesystem::path& path,
                      std::span<const DetectionCandidate> cands);
void write_report(const std::filesystem::path& path, const CpmReport& report);
CpmReport read_report(const std::filesystem::path& path);

}  // namespace dspl::froc
