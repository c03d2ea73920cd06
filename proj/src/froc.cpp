#include "dspl/froc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <tuple>

#include "dspl/csv.hpp"

namespace dspl::froc {

namespace {

double distance(const DetectionCandidate& c, const NoduleAnnotation& a) {
  return std::hypot(c.y - a.y, c.x - a.x);
}

}  // namespace

bool hits(const DetectionCandidate& c, const NoduleAnnotation& a) {
  return c.scan_id == a.scan_id && distance(c, a) <= a.diameter / 2.0;
}

std::vector<std::size_t> scoring_order(std::span<const DetectionCandidate> cands) {
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const auto& a = cands[i];
    const auto& b = cands[j];
    if (a.probability != b.probability) return a.probability > b.probability;
    return std::tie(a.scan_id, a.y, a.x) < std::tie(b.scan_id, b.y, b.x);
  });
  return order;
}

MatchResult match_candidates(std::span<const DetectionCandidate> cands,
                             std::span<const NoduleAnnotation> annos) {
  for (const auto& a : annos) {
    if (!(a.diameter > 0.0)) throw std::invalid_argument("annotation diameter must be > 0");
  }
  for (const auto& c : cands) {
    if (!(c.probability >= 0.0 && c.probability <= 1.0)) {
      throw std::invalid_argument("candidate probability outside [0,1]");
    }
  }
  MatchResult r;
  r.labels.assign(cands.size(), Label::FalsePositive);
  r.matched.assign(cands.size(), -1);
  r.annotation_hit.assign(annos.size(), false);

  std::set<std::tuple<std::string, double, double, double>> seen;
  for (const auto& c : cands) {
    if (!seen.emplace(c.scan_id, c.y, c.x, c.probability).second) ++r.duplicate_rows;
  }

  for (std::size_t ci : scoring_order(cands)) {
    const auto& c = cands[ci];
    long best = -1;
    double best_d = 0.0;
    bool any_hit = false;
    for (std::size_t ai = 0; ai < annos.size(); ++ai) {
      if (!hits(c, annos[ai])) continue;
      any_hit = true;
      if (annos[ai].ignore || r.annotation_hit[ai]) continue;
      const double d = distance(c, annos[ai]);
      if (best < 0 || d < best_d) {
        best = static_cast<long>(ai);
        best_d = d;
      }
    }
    if (best >= 0) {
      r.labels[ci] = Label::TruePositive;
      r.matched[ci] = best;
      r.annotation_hit[static_cast<std::size_t>(best)] = true;
    } else if (any_hit) {
      r.labels[ci] = Label::Ignored;
    }
  }
  return r;
}

std::vector<OperatingPoint> froc_curve(std::span<const DetectionCandidate> cands,
                                       const MatchResult& match, std::size_t n_scans,
                                       std::size_t n_nodules) {
  if (n_scans == 0 || n_nodules == 0) {
    throw std::invalid_argument("froc_curve: need at least one scan and one nodule");
  }
  if (match.labels.size() != cands.size()) {
    throw std::invalid_argument("froc_curve: match result does not belong to these candidates");
  }
  const auto order = scoring_order(cands);
  std::vector<OperatingPoint> curve;
  std::size_t fp = 0, tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t ci = order[k];
    if (match.labels[ci] == Label::FalsePositive) ++fp;
    if (match.labels[ci] == Label::TruePositive) ++tp;
    const bool group_end = k + 1 == order.size() ||
                           cands[order[k + 1]].probability != cands[ci].probability;
    if (group_end) {
      curve.push_back({static_cast<double>(fp) / static_cast<double>(n_scans),
                       static_cast<double>(tp) / static_cast<double>(n_nodules)});
    }
  }
  return curve;
}

double sensitivity_at(std::span<const OperatingPoint> curve, double fp_rate) {
  double s = 0.0;
  for (const auto& p : curve) {
    if (p.fp_per_scan <= fp_rate) s = p.sensitivity;
    else break;
  }
  return s;
}

double cpm_from_sensitivities(std::span<const double, 7> sensitivities) {
  double s = 0.0;
  for (double v : sensitivities) s += v;
  return s / static_cast<double>(sensitivities.size());
}

CpmReport cpm(std::span<const OperatingPoint> curve) {
  CpmReport r;
  r.operating_points.assign(curve.begin(), curve.end());
  for (std::size_t i = 0; i < kCpmRates.size(); ++i) {
    r.sensitivities_at_c[i] = sensitivity_at(curve, kCpmRates[i]);
  }
  r.cpm = cpm_from_sensitivities(r.sensitivities_at_c);
  return r;
}

CpmReport evaluate(std::span<const DetectionCandidate> cands,
                   std::span<const NoduleAnnotation> annos, std::size_t n_scans,
                   std::size_t* duplicate_rows) {
  const MatchResult m = match_candidates(cands, annos);
  if (duplicate_rows) *duplicate_rows = m.duplicate_rows;
  const auto n_nodules = static_cast<std::size_t>(
      std::count_if(annos.begin(), annos.end(), [](const auto& a) { return !a.ignore; }));
  return cpm(froc_curve(cands, m, n_scans, n_nodules));
}

std::vector<NoduleAnnotation> read_annotations(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"scan_id", "center_y", "center_x", "diameter", "ignore"});
  std::vector<NoduleAnnotation> out;
  for (const auto& r : t.rows) {
    if (r[4] != "0" && r[4] != "1") throw std::runtime_error("annotations: ignore must be 0 or 1");
    out.push_back({r[0], csv::parse_double(r[1]), csv::parse_double(r[2]),
                   csv::parse_double(r[3]), r[4] == "1"});
  }
  return out;
}

void write_annotations(const std::filesystem::path& path, std::span<const NoduleAnnotation> annos) {
  csv::Writer w(path, {"scan_id", "center_y", "center_x", "diameter", "ignore"});
  for (const auto& a : annos) {
    w.row({a.scan_id, csv::format_double(a.y), csv::format_double(a.x),
           csv::format_double(a.diameter), a.ignore ? "1" : "0"});
  }
}

std::vector<DetectionCandidate> read_candidates(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"scan_id", "center_y", "center_x", "probability"});
  std::vector<DetectionCandidate> out;
  for (const auto& r : t.rows) {
    out.push_back({r[0], csv::parse_double(r[1]), csv::parse_double(r[2]),
                   csv::parse_double(r[3])});
  }
  return out;
}

void write_candidates(const std::filesystem::path& path,
                      std::span<const DetectionCandidate> cands) {
  csv::Writer w(path, {"scan_id", "center_y", "center_x", "probability"});
  for (const auto& c : cands) {
    w.row({c.scan_id, csv::format_double(c.y), csv::format_double(c.x),
           csv::format_double(c.probability)});
  }
}

void write_report(const std::filesystem::path& path, const CpmReport& report) {
  csv::Writer w(path, {"kind", "fp_per_scan", "sensitivity"});
  for (const auto& p : report.operating_points) {
    w.row({"point", csv::format_double(p.fp_per_scan), csv::format_double(p.sensitivity)});
  }
  for (std::size_t i = 0; i < kCpmRates.size(); ++i) {
    w.row({"target", csv::format_double(kCpmRates[i]),
           csv::format_double(report.sensitivities_at_c[i])});
  }
  w.line("CPM," + csv::format_double(report.cpm));
}

CpmReport read_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("report: cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "kind,fp_per_scan,sensitivity") throw std::runtime_error("report: bad header");
  CpmReport r;
  std::size_t targets = 0;
  bool have_cpm = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const std::string kind = line.substr(0, c1);
    if (kind == "CPM") {
      r.cpm = csv::parse_double(line.substr(c1 + 1));
      have_cpm = true;
      continue;
    }
    const auto c2 = line.find(',', c1 + 1);
    const double a = csv::parse_double(line.substr(c1 + 1, c2 - c1 - 1));
    const double b = csv::parse_double(line.substr(c2 + 1));
    if (kind == "point") {
      r.operating_points.push_back({a, b});
    } else if (kind == "target" && targets < 7) {
      r.sensitivities_at_c[targets++] = b;
    } else {
      throw std::runtime_error("report: unexpected row '" + line + "'");
    }
  }
  if (targets != 7 || !have_cpm) throw std::runtime_error("report: incomplete file");
  return r;
}

}  // namespace dspl::froc
