#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "dspl/froc.hpp"
#include "dspl/rng.hpp"

namespace dspl::testing {

using froc::DetectionCandidate;
using froc::NoduleAnnotation;
using froc::OperatingPoint;


// Threshold enumeration: for every distinct probability t keep p >= t and
// count FPs (hit nothing) and nodules touched by any kept candidate.
inline std::vector<OperatingPoint> oracle_curve(const std::vector<DetectionCandidate>& cands,
                                         const std::vector<NoduleAnnotation>& annos,
                                         std::size_t n_scans) {
  std::set<double, std::greater<>> thresholds;
  for (const auto& c : cands) thresholds.insert(c.probability);
  std::size_t n_nodules = 0;
  for (const auto& a : annos) n_nodules += a.ignore ? 0 : 1;
  std::vector<OperatingPoint> out;
  for (double t : thresholds) {
    std::size_t fp = 0;
    std::set<std::size_t> found;
    for (const auto& c : cands) {
      if (c.probability < t) continue;
      bool any = false;
      for (std::size_t a = 0; a < annos.size(); ++a) {
        if (c.scan_id != annos[a].scan_id) continue;
        const double d = std::hypot(c.y - annos[a].y, c.x - annos[a].x);
        if (d > annos[a].diameter / 2) continue;
        any = true;
        if (!annos[a].ignore) found.insert(a);
      }
      fp += any ? 0 : 1;
    }
    out.push_back({static_cast<double>(fp) / static_cast<double>(n_scans),
                   static_cast<double>(found.size()) / static_cast<double>(n_nodules)});
  }
  return out;
}

struct Case {
  std::vector<NoduleAnnotation> annos;
  std::vector<DetectionCandidate> cands;
  std::size_t n_scans;
};

// Non-overlapping nodules in a few scans plus candidates near and away
// from them; probabilities are drawn from a small set to force ties.
inline Case random_case(Rng& rng, std::size_t max_cands) {
  Case c;
  c.n_scans = static_cast<std::size_t>(rng.integer(1, 3));
  for (std::size_t s = 0; s < c.n_scans; ++s) {
    const auto n = rng.integer(0, 2);
    for (long i = 0; i < n; ++i) {
      c.annos.push_back({"s" + std::to_string(s), 20.0 + 40.0 * static_cast<double>(i), 30.0,
                         rng.uniform(4, 12), rng.uniform() < 0.2});
    }
  }
  if (std::none_of(c.annos.begin(), c.annos.end(), [](auto& a) { return !a.ignore; })) {
    c.annos.push_back({"s0", 100.0, 100.0, 8.0, false});
  }
  const auto n = static_cast<std::size_t>(rng.integer(1, static_cast<long>(max_cands)));
  for (std::size_t i = 0; i < n; ++i) {
    DetectionCandidate d;
    d.probability = static_cast<double>(rng.integer(0, 5)) / 5.0;
    if (rng.uniform() < 0.5) {
      const auto& a = c.annos[static_cast<std::size_t>(rng.integer(0, static_cast<long>(c.annos.size()) - 1))];
      const double r = rng.uniform(0, 0.7 * a.diameter), th = rng.uniform(0, 6.283);
      d.scan_id = a.scan_id;
      d.y = a.y + r * std::sin(th);
      d.x = a.x + r * std::cos(th);
    } else {
      d.scan_id = "s" + std::to_string(rng.integer(0, static_cast<long>(c.n_scans) - 1));
      d.y = rng.uniform(0, 128);
      d.x = rng.uniform(0, 128);
    }
    c.cands.push_back(d);
  }
  return c;
}

}  // namespace dspl::testing
