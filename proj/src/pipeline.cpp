#include "dspl/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dspl/csv.hpp"
#include "dspl/ops.hpp"
#include "dspl/optim.hpp"
#include "dspl/rng.hpp"

namespace dspl::pipeline {

namespace {

// Seed streams of a single run.
enum Stream : std::uint64_t {
  kUnetInit = 1,
  kStage1Data = 2,
  kFolds = 3,
  kStage2Set = 4,
  kFprInit = 5,
  kStage2Shuffle = 6,
};

void say(const Log& log, const std::string& line) {
  if (log) log(line);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

// Copies an extent x extent window of a [1,H,W] image into dst, optionally
// flipped.
void copy_crop(const Tensor& image, std::size_t top, std::size_t left, std::size_t extent,
               bool flip_y, bool flip_x, double* dst) {
  const std::size_t w = image.shape().back();
  const auto src = image.data();
  for (std::size_t y = 0; y < extent; ++y) {
    const std::size_t sy = top + (flip_y ? extent - 1 - y : y);
    for (std::size_t x = 0; x < extent; ++x) {
      const std::size_t sx = left + (flip_x ? extent - 1 - x : x);
      dst[y * extent + x] = src[sy * w + sx];
    }
  }
}

Tensor as_batch(const Tensor& image) {
  Tensor t = image;
  Shape s = image.shape();
  s.insert(s.begin(), 1);
  t.reshape(s);
  return t;
}

// "1,2-DDB" -> "1+2", "Non-DDB" -> "none": the CSV files have no quoting.
std::string csv_positions(std::string label) {
  if (label == "Non-DDB") return "none";
  label = label.substr(0, label.find("-DDB"));
  std::replace(label.begin(), label.end(), ',', '+');
  return label;
}

std::map<std::string, const PhantomScene*> index_scenes(std::span<const PhantomScene> scenes) {
  std::map<std::string, const PhantomScene*> m;
  for (const auto& s : scenes) m[s.scene_id] = &s;
  return m;
}

}  // namespace

EarlyStopper::EarlyStopper(std::size_t patience, std::size_t max_epochs)
    : patience_(patience), max_epochs_(max_epochs) {
  if (max_epochs == 0) throw std::invalid_argument("EarlyStopper: max_epochs must be >= 1");
}

bool EarlyStopper::update(double score) {
  ++epochs_;
  improved_ = best_epoch_ == 0 || score > best_;
  if (improved_) {
    best_ = score;
    best_epoch_ = epochs_;
  }
  return epochs_ < max_epochs_ && epochs_ - best_epoch_ < patience_;
}

double dice_score(const Tensor& prob, const Tensor& mask, double threshold) {
  if (prob.numel() != mask.numel()) throw std::invalid_argument("dice_score: size mismatch");
  double inter = 0.0, p = 0.0, t = 0.0;
  for (std::size_t i = 0; i < prob.numel(); ++i) {
    const double b = prob[i] >= threshold ? 1.0 : 0.0;
    inter += b * mask[i];
    p += b;
    t += mask[i];
  }
  return p + t == 0.0 ? 1.0 : 2.0 * inter / (p + t);
}

TrainValSplit split_train_val(std::span<const PhantomScene> scenes, std::size_t folds,
                              std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& s : scenes) ids.push_back(s.scene_id);
  const auto split = phantom::split_folds(ids, folds, derive_seed(seed, kFolds));
  TrainValSplit out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    (split.assignment[i] == 0 ? out.val : out.train).push_back(scenes[i]);
  }
  return out;
}

Stage1Result train_stage1(const RunConfig& config, std::span<const PhantomScene> train,
                          std::span<const PhantomScene> val, std::uint64_t seed, const Log& log) {
  if (train.empty() || val.empty()) {
    throw std::invalid_argument("train_stage1: need training and validation scenes");
  }
  Stage1Result r{nn::build_unet(config.unet, derive_seed(seed, kUnetInit)), {}, 0};
  nn::Model& m = r.model;
  Adam opt(config.s1_lr);
  EarlyStopper stopper(config.s1_patience, config.s1_max_epochs);
  const auto params = m.parameters();
  auto best_state = m.state();

  std::vector<Tensor> masks;
  for (const auto& s : train) masks.push_back(phantom::nodule_mask(s));
  std::vector<Tensor> val_masks;
  for (const auto& s : val) val_masks.push_back(phantom::nodule_mask(s));

  const std::size_t crop = config.s1_crop;
  const std::size_t h = train.front().image.shape()[1];
  const std::size_t w = train.front().image.shape()[2];
  const std::size_t plane = crop * crop;

  for (std::size_t epoch = 1;; ++epoch) {
    Rng rng(derive_seed(derive_seed(seed, kStage1Data), epoch));
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < train.size(); ++i) {
      for (std::size_t k = 0; k < config.s1_crops_per_scene; ++k) order.push_back(i);
    }
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.s1_batch) {
      const std::size_t n = std::min(config.s1_batch, order.size() - start);
      Tensor x({n, 1, crop, crop});
      Tensor t({n, 1, crop, crop});
      for (std::size_t b = 0; b < n; ++b) {
        const PhantomScene& s = train[order[start + b]];
        double cy = rng.uniform(0.0, static_cast<double>(h));
        double cx = rng.uniform(0.0, static_cast<double>(w));
        if (!s.annotations.empty() && rng.uniform() < 0.5) {
          const auto& a = s.annotations[static_cast<std::size_t>(
              rng.integer(0, static_cast<std::int64_t>(s.annotations.size()) - 1))];
          const double j = static_cast<double>(crop) / 4.0;
          cy = a.y + rng.uniform(-j, j);
          cx = a.x + rng.uniform(-j, j);
        }
        const auto place = [crop](double c, std::size_t extent) {
          const double top = std::round(c - static_cast<double>(crop) / 2.0);
          return static_cast<std::size_t>(
              std::clamp(top, 0.0, static_cast<double>(extent - crop)));
        };
        const std::size_t top = place(cy, h), left = place(cx, w);
        const bool fy = rng.uniform() < 0.5, fx = rng.uniform() < 0.5;
        copy_crop(s.image, top, left, crop, fy, fx, x.data().data() + b * plane);
        copy_crop(masks[order[start + b]], top, left, crop, fy, fx, t.data().data() + b * plane);
      }
      Graph g;
      const Var p = m.forward(g, g.input(std::move(x)), Mode::Train);
      const Var loss = add(binary_cross_entropy(p, t), soft_dice_loss(p, t));
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw std::runtime_error("stage 1: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches + 1) +
                                 "; lower s1_lr");
      }
      m.zero_grad();
      g.backward(loss);
      opt.step(params);
      loss_sum += lv;
      ++batches;
    }

    Tensor all_p({val.size(), h * w}), all_t({val.size(), h * w});
    for (std::size_t i = 0; i < val.size(); ++i) {
      const Tensor p = m.predict(as_batch(val[i].image));
      std::copy_n(p.data().data(), h * w, all_p.data().data() + i * h * w);
      std::copy_n(val_masks[i].data().data(), h * w, all_t.data().data() + i * h * w);
    }
    const double dice = dice_score(all_p, all_t);
    const bool keep_going = stopper.update(dice);
    if (stopper.improved()) best_state = m.state();
    r.log.push_back({epoch, loss_sum / static_cast<double>(batches), dice, stopper.improved()});
    say(log, "stage1 epoch " + std::to_string(epoch) + " loss " +
                 fixed(r.log.back().train_loss, 4) + " val_dice " + fixed(dice, 4) +
                 (stopper.improved() ? " *" : ""));
    if (!keep_going) break;
  }
  m.load_state(best_state);
  r.best_epoch = stopper.best_epoch();
  return r;
}

std::vector<DetectionCandidate> candidates_from_map(const Tensor& prob, const std::string& scan_id,
                                                    double threshold) {
  if (prob.rank() < 2) throw std::invalid_argument("candidates_from_map: need a 2-D map");
  const std::size_t h = prob.shape()[prob.rank() - 2], w = prob.shape().back();
  if (prob.numel() != h * w) throw std::invalid_argument("candidates_from_map: expected one map");
  const auto p = prob.data();
  std::vector<char> seen(h * w, 0);
  std::vector<std::size_t> stack;
  std::vector<DetectionCandidate> out;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (seen[start] || p[start] < threshold) continue;
    double mass = 0.0, sy = 0.0, sx = 0.0, peak = 0.0;
    seen[start] = 1;
    stack.assign(1, start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t y = i / w, x = i % w;
      mass += p[i];
      sy += p[i] * static_cast<double>(y);
      sx += p[i] * static_cast<double>(x);
      peak = std::max(peak, p[i]);
      const auto visit = [&](std::size_t j) {
        if (!seen[j] && p[j] >= threshold) {
          seen[j] = 1;
          stack.push_back(j);
        }
      };
      if (y > 0) visit(i - w);
      if (y + 1 < h) visit(i + w);
      if (x > 0) visit(i - 1);
      if (x + 1 < w) visit(i + 1);
    }
    out.push_back({scan_id, sy / mass, sx / mass, peak});
  }
  return out;
}

std::vector<DetectionCandidate> detect_candidates(const nn::Model& unet,
                                                  std::span<const PhantomScene> scenes,
                                                  double threshold) {
  std::vector<DetectionCandidate> out;
  for (const auto& s : scenes) {
    const auto c = candidates_from_map(unet.predict(as_batch(s.image)), s.scene_id, threshold);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

HardNegatives mine_hard_negatives(std::span<const DetectionCandidate> cands,
                                  std::span<const froc::NoduleAnnotation> annos,
                                  std::size_t top_n) {
  const auto match = froc::match_candidates(cands, annos);
  HardNegatives h;
  for (std::size_t i : froc::scoring_order(cands)) {
    if (match.labels[i] != froc::Label::FalsePositive) continue;
    ++h.available;
    if (h.negatives.size() < top_n) h.negatives.push_back(cands[i]);
  }
  return h;
}

std::vector<froc::NoduleAnnotation> all_annotations(std::span<const PhantomScene> scenes) {
  std::vector<froc::NoduleAnnotation> out;
  for (const auto& s : scenes) out.insert(out.end(), s.annotations.begin(), s.annotations.end());
  return out;
}

Stage2Set build_stage2_set(const RunConfig& config, std::span<const PhantomScene> scenes,
                           std::span<const DetectionCandidate> hard_negatives, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kStage2Set));
  const std::size_t patch = config.fpr.patch;
  const auto by_id = index_scenes(scenes);
  std::map<std::string, std::vector<const DetectionCandidate*>> hard_by_scene;
  for (const auto& c : hard_negatives) {
    if (!by_id.count(c.scan_id)) {
      throw std::invalid_argument("build_stage2_set: hard negative in unknown scan " + c.scan_id);
    }
    hard_by_scene[c.scan_id].push_back(&c);
  }

  std::vector<Tensor> chunks;
  Stage2Set set;
  for (const auto& s : scenes) {
    const auto lung = phantom::lung_field(s.image.shape()[1], s.image.shape()[2]);
    std::vector<phantom::Point> centers;
    std::vector<std::string> sources;
    for (const auto& a : s.annotations) {
      if (a.ignore) continue;
      centers.push_back({a.y, a.x});
      sources.push_back("positive");
      const double reach = std::min(2.0, a.diameter / 4.0);
      for (std::size_t k = 0; k < config.positive_jitter; ++k) {
        const double r = reach * std::sqrt(rng.uniform()), th = rng.uniform(0.0, 2.0 * std::numbers::pi);
        centers.push_back({a.y + r * std::sin(th), a.x + r * std::cos(th)});
        sources.push_back("positive");
      }
    }
    for (std::size_t k = 0; k < config.random_negatives; ++k) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        const double y = rng.uniform(lung.cy - lung.ry, lung.cy + lung.ry);
        const double x = rng.uniform(lung.cx - lung.rx, lung.cx + lung.rx);
        if (!lung.contains(y, x, 2.0)) continue;
        const bool near = std::any_of(s.annotations.begin(), s.annotations.end(), [&](const auto& a) {
          return std::hypot(y - a.y, x - a.x) <= a.diameter / 2.0 + 3.0;
        });
        if (near) continue;
        centers.push_back({y, x});
        sources.push_back("random");
        break;
      }
    }
    if (const auto it = hard_by_scene.find(s.scene_id); it != hard_by_scene.end()) {
      for (const auto* c : it->second) {
        centers.push_back({c->y, c->x});
        sources.push_back("hard");
      }
    }
    if (centers.empty()) continue;
    auto ps = phantom::extract_patches(s, centers, patch);
    for (std::size_t i = 0; i < centers.size(); ++i) {
      set.info.push_back({s.scene_id, centers[i].y, centers[i].x, sources[i], ps.labels[i], false});
      set.data.labels.push_back(ps.labels[i]);
    }
    chunks.push_back(std::move(ps.patches));
  }

  const std::size_t n = set.data.labels.size();
  set.data.inputs = Tensor({n, 1, patch, patch});
  std::size_t offset = 0;
  for (const auto& c : chunks) {
    std::copy(c.data().begin(), c.data().end(), set.data.inputs.data().begin() + offset);
    offset += c.numel();
  }

  const auto flips = static_cast<std::size_t>(std::llround(config.label_noise * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  for (std::size_t k = 0; k < flips; ++k) {
    set.data.labels[idx[k]] = 1 - set.data.labels[idx[k]];
    set.info[idx[k]].noisy = true;
  }

  const auto positives = std::count(set.data.labels.begin(), set.data.labels.end(), 1);
  if (positives == 0 || static_cast<std::size_t>(positives) == n) {
    throw std::runtime_error("stage 2: training set has a single class (" + std::to_string(n) +
                             " samples, " + std::to_string(positives) + " positive)");
  }
  return set;
}

Stage2Result train_stage2(const RunConfig& config, const Stage2Set& set, std::uint64_t seed,
                          const Log& log) {
  Stage2Result r{nn::build_fpr_cnn(config.fpr, derive_seed(seed, kFprInit)), {}, {}, {}};
  Sgd opt(config.s2_lr, config.s2_momentum);
  auto state = spl::SplState::start(config.spl);
  spl::EpochOptions opts;
  opts.batch_size = config.s2_batch;
  opts.seed = derive_seed(seed, kStage2Shuffle);
  opts.weighting = config.weighting;
  for (std::size_t e = 0; e < config.s2_epochs; ++e) {
    opt.set_learning_rate(config.s2_lr * std::pow(config.s2_lr_decay, static_cast<double>(e)));
    r.log.push_back(spl::spl_train_epoch(r.model, set.data, state, opt, opts));
    const auto& st = r.log.back();
    say(log, "stage2 epoch " + std::to_string(st.epoch + 1) + " loss " + fixed(st.mean_loss, 4) +
                 " active " + fixed(st.active_fraction, 3) + " lambda " +
                 (std::isfinite(st.lambda) ? fixed(st.lambda, 4) : std::string("inf")));
  }
  r.final_v = state.v;
  r.final_loss = spl::per_sample_losses(r.model, set.data, config.s2_batch);
  return r;
}

WeightSplit mean_weights(const Stage2Set& set, std::span<const double> v) {
  if (v.size() != set.info.size()) throw std::invalid_argument("mean_weights: size mismatch");
  double sn = 0.0, sc = 0.0;
  std::size_t nn = 0, nc = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (set.info[i].noisy) {
      sn += v[i];
      ++nn;
    } else {
      sc += v[i];
      ++nc;
    }
  }
  return {nn ? sn / static_cast<double>(nn) : 0.0, nc ? sc / static_cast<double>(nc) : 0.0};
}

std::vector<DetectionCandidate> rescore(const nn::Model& fpr, std::size_t patch,
                                        std::span<const PhantomScene> scenes,
                                        std::span<const DetectionCandidate> cands) {
  const auto by_id = index_scenes(scenes);
  std::vector<DetectionCandidate> out(cands.begin(), cands.end());
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (!by_id.count(cands[i].scan_id)) {
      throw std::invalid_argument("rescore: candidate in unknown scan " + cands[i].scan_id);
    }
    groups[cands[i].scan_id].push_back(i);
  }
  for (const auto& [id, rows] : groups) {
    std::vector<phantom::Point> centers;
    for (std::size_t i : rows) centers.push_back({cands[i].y, cands[i].x});
    const auto ps = phantom::extract_patches(*by_id.at(id), centers, patch);
    const Tensor prob = softmax(fpr.predict(ps.patches));
    for (std::size_t k = 0; k < rows.size(); ++k) out[rows[k]].probability = prob[k * 2 + 1];
  }
  return out;
}

Evaluation evaluate_candidates(const nn::Model& fpr, const RunConfig& config,
                               std::span<const PhantomScene> test,
                               std::vector<DetectionCandidate> detector_candidates) {
  Evaluation e;
  const auto annos = all_annotations(test);
  e.detector_candidates = std::move(detector_candidates);
  e.scored = rescore(fpr, config.fpr.patch, test, e.detector_candidates);
  e.detector = froc::evaluate(e.detector_candidates, annos, test.size());
  e.final = froc::evaluate(e.scored, annos, test.size());
  return e;
}

void save_model(const nn::Model& m, const std::filesystem::path& path) {
  m.save(path);
  std::ofstream os(path.string() + ".arch.txt");
  os << m.architecture();
}

nn::Model load_unet(const RunConfig& config, const std::filesystem::path& path) {
  nn::Model m = nn::build_unet(config.unet, 0);
  m.load(path);
  return m;
}

nn::Model load_fpr(const RunConfig& config, const std::filesystem::path& path) {
  nn::Model m = nn::build_fpr_cnn(config.fpr, 0);
  m.load(path);
  return m;
}

void write_stage1_log(const std::filesystem::path& path, std::span<const Stage1Epoch> log) {
  csv::Writer w(path, {"epoch", "train_loss", "val_dice", "best"});
  for (const auto& e : log) {
    w.row({std::to_string(e.epoch), csv::format_double(e.train_loss),
           csv::format_double(e.val_dice), e.best ? "1" : "0"});
  }
}

void write_sample_weights(const std::filesystem::path& path, const Stage2Set& set,
                          const Stage2Result& result) {
  csv::Writer w(path, {"index", "scan_id", "center_y", "center_x", "source", "label",
                       "true_label", "noisy", "v", "loss"});
  for (std::size_t i = 0; i < set.info.size(); ++i) {
    const auto& s = set.info[i];
    w.row({std::to_string(i), s.scan_id, csv::format_double(s.y), csv::format_double(s.x),
           s.source, std::to_string(set.data.labels[i]), std::to_string(s.true_label),
           s.noisy ? "1" : "0", csv::format_double(result.final_v.at(i)),
           csv::format_double(result.final_loss.at(i))});
  }
}

void write_hard_negatives(const std::filesystem::path& path,
                          std::span<const DetectionCandidate> negatives) {
  froc::write_candidates(path, negatives);
}

std::vector<DetectionCandidate> read_hard_negatives(const std::filesystem::path& path) {
  return froc::read_candidates(path);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblationResult run_ablation(const RunConfig& config, std::span<const PhantomScene> train,
                            std::span<const PhantomScene> test, const std::filesystem::path& out,
                            const Log& log) {
  using Clock = std::chrono::steady_clock;
  const auto seconds_since = [](Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };
  const spl::Weighting weightings[] = {spl::Weighting::EqualWeight, spl::Weighting::SelfPaced};
  const auto annos = all_annotations(train);

  AblationResult result;
  for (const auto& ddb : config.ablation_ddb) {
    RunConfig cell = config;
    cell.unet.ddb_positions = ddb;
    const std::string label = cell.unet.ddb_label();
    std::vector<AblationRow> rows(2);
    for (std::size_t w = 0; w < 2; ++w) {
      rows[w].ddb = label;
      rows[w].weighting = weightings[w];
      rows[w].detector_params = nn::build_unet(cell.unet, 0).parameter_count();
      rows[w].fpr_params = nn::build_fpr_cnn(cell.fpr, 0).parameter_count();
    }
    std::vector<std::vector<double>> secs(2);
    for (std::size_t rep = 0; rep < config.repeats; ++rep) {
      cell.seed = config.seed + rep;
      const auto dir = out / "cells" / label / ("r" + std::to_string(rep));
      std::filesystem::create_directories(dir);
      say(log, "ablation " + label + " repeat " + std::to_string(rep) + " seed " +
                   std::to_string(cell.seed));

      const auto t0 = Clock::now();
      const auto split = split_train_val(train, cell.folds, cell.seed);
      const auto s1 = train_stage1(cell, split.train, split.val, cell.seed, log);
      save_model(s1.model, dir / "detector.ckpt");
      write_stage1_log(dir / "stage1_log.csv", s1.log);
      const auto mined = mine_hard_negatives(
          detect_candidates(s1.model, train, cell.prob_threshold), annos, cell.top_n);
      const auto test_cands = detect_candidates(s1.model, test, cell.prob_threshold);
      const double shared = seconds_since(t0);

      for (std::size_t w = 0; w < 2; ++w) {
        const auto t1 = Clock::now();
        cell.weighting = weightings[w];
        const auto wdir = dir / spl::weighting_name(cell.weighting);
        std::filesystem::create_directories(wdir);
        const auto set = build_stage2_set(cell, train, mined.negatives, cell.seed);
        const auto s2 = train_stage2(cell, set, cell.seed, log);
        save_model(s2.model, wdir / "fpr.ckpt");
        spl::write_epoch_stats(wdir / "spl_log.csv", s2.log);
        write_sample_weights(wdir / "spl_samples.csv", set, s2);
        const auto ev = evaluate_candidates(s2.model, cell, test, test_cands);
        froc::write_report(wdir / "froc_report.csv", ev.final);
        froc::write_report(dir / "froc_detector.csv", ev.detector);

        AblationRun run;
        run.ddb = label;
        run.weighting = cell.weighting;
        run.repeat = rep;
        run.seed = cell.seed;
        run.detector_cpm = ev.detector.cpm;
        run.cpm = ev.final.cpm;
        run.mean_v = mean_weights(set, s2.final_v);
        run.seconds = shared + seconds_since(t1);
        result.runs.push_back(run);
        rows[w].cpm.push_back(run.cpm);
        rows[w].detector_cpm.push_back(run.detector_cpm);
        secs[w].push_back(run.seconds);
        say(log, "ablation " + label + " " + spl::weighting_name(cell.weighting) + " repeat " +
                     std::to_string(rep) + ": detector CPM " + fixed(run.detector_cpm, 4) +
                     ", CPM " + fixed(run.cpm, 4) + " (" + fixed(run.seconds, 1) + " s)");
      }
    }
    for (std::size_t w = 0; w < 2; ++w) {
      rows[w].median_cpm = median(rows[w].cpm);
      rows[w].median_detector_cpm = median(rows[w].detector_cpm);
      rows[w].median_seconds = median(secs[w]);
      result.rows.push_back(rows[w]);
    }
  }
  return result;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result) {
  csv::Writer w(path, {"ddb_positions", "weighting", "detector_params", "fpr_params", "repeats",
                       "median_detector_cpm", "median_cpm", "cpm_runs"});
  for (const auto& r : result.rows) {
    std::string runs;
    for (double c : r.cpm) runs += (runs.empty() ? "" : ";") + csv::format_double(c);
    w.row({csv_positions(r.ddb), spl::weighting_name(r.weighting), std::to_string(r.detector_params),
           std::to_string(r.fpr_params), std::to_string(r.cpm.size()),
           csv::format_double(r.median_detector_cpm), csv::format_double(r.median_cpm), runs});
  }
}

void write_ablation_runs(const std::filesystem::path& path, const AblationResult& result) {
  csv::Writer w(path, {"ddb_positions", "weighting", "repeat", "seed", "detector_cpm", "cpm",
                       "noisy_mean_v", "clean_mean_v"});
  for (const auto& r : result.runs) {
    w.row({csv_positions(r.ddb), spl::weighting_name(r.weighting), std::to_string(r.repeat),
           std::to_string(r.seed), csv::format_double(r.detector_cpm), csv::format_double(r.cpm),
           csv::format_double(r.mean_v.noisy), csv::format_double(r.mean_v.clean)});
  }
}

std::string ablation_markdown(const AblationResult& result) {
  std::ostringstream os;
  os << "| Blocks | Weighting | Params (detector + FPR) | Detector CPM | CPM | Runtime/run |\n"
     << "|---|---|---|---|---|---|\n";
  for (const auto& r : result.rows) {
    os << "| " << r.ddb << " | " << spl::weighting_name(r.weighting) << " | "
       << r.detector_params << " + " << r.fpr_params << " | " << fixed(r.median_detector_cpm, 3)
       << " | " << fixed(r.median_cpm, 3) << " | " << fixed(r.median_seconds, 0) << " s |\n";
  }
  return os.str();
}

}  // namespace dspl::pipeline
