#include "dspl/spl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dspl/csv.hpp"
#include "dspl/rng.hpp"

namespace dspl::spl {

namespace {

void check_pace(double lambda, double q) {
  if (!std::isfinite(lambda) || !(lambda > 0.0)) {
    throw std::invalid_argument("spl: lambda must be finite and > 0");
  }
  if (!std::isfinite(q) || !(q > 1.0)) throw std::invalid_argument("spl: q must be finite and > 1");
}

}  // namespace

double spl_weight(double loss, double lambda, double q) {
  check_pace(lambda, q);
  if (!std::isfinite(loss) || loss < 0.0) {
    throw std::invalid_argument("spl: loss must be finite and >= 0");
  }
  if (loss <= kNegligibleLossRatio * lambda) return 1.0;
  if (loss >= lambda) return 0.0;
  return std::pow(1.0 - loss / lambda, 1.0 / (q - 1.0));
}

std::vector<double> v_step(std::span<const double> losses, double lambda, double q) {
  std::vector<double> v(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) v[i] = spl_weight(losses[i], lambda, q);
  return v;
}

std::vector<double> class_scales(std::span<const double> losses, std::span<const int> labels,
                                 double p) {
  if (losses.size() != labels.size() || losses.empty()) {
    throw std::invalid_argument("class_scales: need one label per loss");
  }
  const int top = *std::max_element(labels.begin(), labels.end());
  if (*std::min_element(labels.begin(), labels.end()) < 0) {
    throw std::invalid_argument("class_scales: negative label");
  }
  const double all = percentile(losses, p);
  std::vector<double> scale(static_cast<std::size_t>(top) + 1, 1.0);
  if (!(all > 0.0)) return scale;
  for (int c = 0; c <= top; ++c) {
    std::vector<double> lc;
    for (std::size_t i = 0; i < losses.size(); ++i) {
      if (labels[i] == c) lc.push_back(losses[i]);
    }
    if (lc.empty()) continue;
    const double pc = percentile(lc, p);
    if (pc > 0.0) scale[static_cast<std::size_t>(c)] = pc / all;
  }
  return scale;
}

std::vector<double> v_step_by_class(std::span<const double> losses, std::span<const int> labels,
                                    double lambda, std::span<const double> class_scale, double q) {
  if (labels.size() != losses.size()) {
    throw std::invalid_argument("v_step_by_class: losses and labels differ in length");
  }
  std::vector<double> v(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || c >= class_scale.size()) {
      throw std::invalid_argument("v_step_by_class: label without a class scale");
    }
    v[i] = spl_weight(losses[i], lambda * class_scale[c], q);
  }
  return v;
}

double spl_objective(std::span<const double> losses, std::span<const double> v, double lambda,
                     double q) {
  if (losses.size() != v.size()) {
    throw std::invalid_argument("spl_objective: " + std::to_string(losses.size()) +
                                " losses vs " + std::to_string(v.size()) + " weights");
  }
  double e = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    e += v[i] * losses[i] + lambda * (std::pow(v[i], q) / q - v[i]);
  }
  return e;
}

void SplSchedule::validate() const {
  if (lambda0 && !(*lambda0 > 0.0)) throw std::invalid_argument("spl schedule: lambda0 must be > 0");
  if (!(lambda0_percentile >= 0.0 && lambda0_percentile <= 100.0)) {
    throw std::invalid_argument("spl schedule: percentile must lie in [0,100]");
  }
  if (!(gamma > 1.0)) throw std::invalid_argument("spl schedule: gamma must be > 1");
  if (!(q_min > 1.0 && q_min <= q0)) {
    throw std::invalid_argument("spl schedule: need 1 < q_min <= q0");
  }
  if (!(mu > 0.0 && mu < 1.0)) throw std::invalid_argument("spl schedule: mu must lie in (0,1)");
}

void SplSchedule::set_lambda0(const std::string& text) {
  const std::string prefix = "percentile:";
  if (text.rfind(prefix, 0) == 0) {
    lambda0.reset();
    lambda0_percentile = std::stod(text.substr(prefix.size()));
  } else {
    lambda0 = std::stod(text);
  }
  validate();
}

std::string SplSchedule::lambda0_text() const {
  std::ostringstream os;
  os.precision(17);
  if (lambda0) {
    os << *lambda0;
  } else {
    os << "percentile:" << lambda0_percentile;
  }
  return os.str();
}

SplState SplState::start(const SplSchedule& schedule) {
  schedule.validate();
  SplState s;
  s.schedule = schedule;
  s.q = schedule.q0;
  return s;
}

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

SplState pace_update(SplState state) {
  const SplSchedule& sc = state.schedule;
  state.lambda *= sc.gamma;
  state.q = std::max(sc.q_min, 1.0 + (sc.q0 - 1.0) * std::pow(sc.mu, state.t + 1));
  state.t += 1;
  return state;
}

std::string weighting_name(Weighting w) {
  return w == Weighting::SelfPaced ? "spl" : "equal-weight";
}

Weighting parse_weighting(const std::string& text) {
  if (text == "spl") return Weighting::SelfPaced;
  if (text == "equal-weight" || text == "equal") return Weighting::EqualWeight;
  throw std::invalid_argument("unknown weighting '" + text + "' (expected spl|equal-weight)");
}

Tensor LabeledSet::gather(std::span<const std::size_t> rows) const {
  Shape s = inputs.shape();
  const std::size_t row = inputs.numel() / s[0];
  s[0] = rows.size();
  Tensor out(s);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(inputs.data().data() + rows[i] * row, row, out.data().data() + i * row);
  }
  return out;
}

std::vector<double> per_sample_losses(const nn::Model& model, const LabeledSet& data,
                                      std::size_t batch_size) {
  std::vector<double> losses;
  losses.reserve(data.size());
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, data.size());
    std::vector<std::size_t> rows(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const Tensor logits = model.predict(data.gather(rows));
    const auto l = cross_entropy_per_sample(
        logits, std::span<const int>(data.labels).subspan(start, end - start));
    losses.insert(losses.end(), l.begin(), l.end());
  }
  return losses;
}

EpochStats spl_train_epoch(nn::Model& model, const LabeledSet& data, SplState& state,
                           Optimizer& optimizer, const EpochOptions& options) {
  if (data.size() == 0) throw std::invalid_argument("spl_train_epoch: empty dataset");
  if (options.batch_size == 0) throw std::invalid_argument("spl_train_epoch: batch size is 0");

  const std::vector<double> losses = per_sample_losses(model, data, options.batch_size);
  EpochStats stats;
  stats.epoch = state.t;
  stats.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) /
                    static_cast<double>(losses.size());

  if (options.weighting == Weighting::EqualWeight) {
    state.v.assign(data.size(), 1.0);
    stats.lambda = std::numeric_limits<double>::infinity();
    stats.q = state.q;
  } else {
    if (!state.initialized) {
      state.lambda = state.schedule.lambda0
                         ? *state.schedule.lambda0
                         : percentile(losses, state.schedule.lambda0_percentile);
      state.q = state.schedule.q0;
      state.initialized = true;
      if (!(state.lambda > 0.0)) {
        throw EmptyCurriculum("spl: initial pace is zero; increase lambda0");
      }
    }
    if (!state.schedule.lambda0 && state.schedule.balance_classes) {
      state.class_scale = class_scales(losses, data.labels, state.schedule.lambda0_percentile);
    }
    state.v = state.class_scale.empty()
                  ? v_step(losses, state.lambda, state.q)
                  : v_step_by_class(losses, data.labels, state.lambda, state.class_scale, state.q);
    stats.lambda = state.lambda;
    stats.q = state.q;
  }

  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < state.v.size(); ++i) {
    if (state.v[i] > 0.0) active.push_back(i);
  }
  stats.active_fraction = static_cast<double>(active.size()) / static_cast<double>(data.size());
  if (active.empty()) {
    throw EmptyCurriculum("spl: every sample weight is zero (empty curriculum); use a larger "
                          "lambda0");
  }

  Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(state.t)));
  rng.shuffle(active);
  const auto params = model.parameters();
  for (std::size_t start = 0; start < active.size(); start += options.batch_size) {
    const std::size_t end = std::min(start + options.batch_size, active.size());
    const std::span<const std::size_t> rows(active.data() + start, end - start);
    std::vector<int> labels;
    std::vector<double> weights;
    for (std::size_t r : rows) {
      labels.push_back(data.labels[r]);
      weights.push_back(state.v[r]);
    }
    Graph g;
    const Var logits = model.forward(g, g.input(data.gather(rows)), Mode::Train);
    const Var loss = softmax_cross_entropy(logits, labels, weights,
                                           static_cast<double>(options.batch_size));
    model.zero_grad();
    g.backward(loss);
    optimizer.step(params);
  }

  if (options.weighting == Weighting::SelfPaced) {
    state = pace_update(std::move(state));
  } else {
    state.t += 1;
  }
  return stats;
}

void write_epoch_stats(const std::filesystem::path& path, std::span<const EpochStats> stats) {
  csv::Writer w(path, {"epoch", "lambda", "q", "mean_loss", "active_fraction"});
  for (const auto& s : stats) {
    w.row({std::to_string(s.epoch), csv::format_double(s.lambda), csv::format_double(s.q),
           csv::format_double(s.mean_loss), csv::format_double(s.active_fraction)});
  }
}

std::vector<EpochStats> read_epoch_stats(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path, {"epoch", "lambda", "q", "mean_loss", "active_fraction"});
  std::vector<EpochStats> out;
  for (const auto& r : t.rows) {
    out.push_back({std::stoi(r[0]), csv::parse_double(r[1]), csv::parse_double(r[2]),
                   csv::parse_double(r[3]), csv::parse_double(r[4])});
  }
  return out;
}

}  // namespace dspl::spl
