// Command-line driver for the two-stage phantom pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "dspl/config.hpp"
#include "dspl/froc.hpp"
#include "dspl/phantom.hpp"
#include "dspl/pipeline.hpp"
#include "dspl/spl.hpp"

namespace fs = std::filesystem;
using namespace dspl;
using namespace dspl::pipeline;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string corpus;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool with_corpus) {
  app->add_option("--config", c.config, "run config file (key = value)");
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--out", c.out, "output directory");
  if (with_corpus) app->add_option("--corpus", c.corpus, "corpus directory");
  app->add_flag("-q,--quiet", c.quiet, "no per-epoch progress");
}

// An explicit --config wins; otherwise a run directory remembers the config
// it was started with.
RunConfig resolve(const Common& c, const fs::path& out) {
  RunConfig cfg;
  if (!c.config.empty()) {
    cfg = RunConfig::load(c.config);
  } else if (!out.empty() && fs::exists(out / "config.conf")) {
    cfg = RunConfig::load(out / "config.conf");
  }
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

Log progress(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& line) { std::cerr << line << "\n"; };
}

fs::path run_dir(const Common& c) {
  if (!c.out.empty()) return c.out;
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  return cfg.out_dir;
}

fs::path corpus_dir(const Common& c, const RunConfig& cfg) {
  return c.corpus.empty() ? fs::path(cfg.corpus_dir) : fs::path(c.corpus);
}

std::vector<phantom::PhantomScene> load_split(const fs::path& corpus, const std::string& split) {
  const fs::path dir = corpus / split;
  if (!fs::exists(dir / "manifest.csv")) {
    throw std::runtime_error("no corpus at " + dir.string() + " (run gen-corpus first)");
  }
  return phantom::read_corpus(dir);
}

void require(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw std::runtime_error("missing " + p.string() + " (" + hint + ")");
}

void gen_corpus(const Common& c) {
  RunConfig cfg = resolve(c, {});
  const fs::path dir = c.out.empty() ? fs::path(cfg.corpus_dir) : fs::path(c.out);
  fs::create_directories(dir);
  const auto train = phantom::generate_scenes(cfg.seed, 0, cfg.train_scenes, cfg.phantom);
  const auto test =
      phantom::generate_scenes(cfg.seed, cfg.train_scenes, cfg.test_scenes, cfg.phantom);
  phantom::write_corpus(dir / "train", train);
  phantom::write_corpus(dir / "test", test);
  cfg.save(dir / "config.conf");
  std::size_t n = 0, hard = 0;
  for (const auto* set : {&train, &test}) {
    for (const auto& s : *set) {
      n += s.difficulty.size();
      for (auto d : s.difficulty) hard += d != phantom::Difficulty::Easy;
    }
  }
  std::cout << "corpus " << dir.string() << ": " << train.size() << " train / " << test.size()
            << " test scenes, " << n << " nodules (" << hard << " hard)\n";
}

void train_detector(const Common& c) {
  const fs::path out = run_dir(c);
  RunConfig cfg = resolve(c, out);
  fs::create_directories(out);
  cfg.save(out / "config.conf");
  const auto scenes = load_split(corpus_dir(c, cfg), "train");
  const auto split = split_train_val(scenes, cfg.folds, cfg.seed);
  const auto r = train_stage1(cfg, split.train, split.val, cfg.seed, progress(c));
  save_model(r.model, out / "detector.ckpt");
  write_stage1_log(out / "stage1_log.csv", r.log);
  std::cout << "detector: " << r.log.size() << " epochs, best epoch " << r.best_epoch
            << " (val Dice " << r.log[r.best_epoch - 1].val_dice << "), "
            << r.model.parameter_count() << " parameters -> " << (out / "detector.ckpt").string()
            << "\n";
}

void detect(const Common& c, const std::string& split) {
  const fs::path out = run_dir(c);
  const RunConfig cfg = resolve(c, out);
  require(out / "detector.ckpt", "run train-detector first");
  const auto model = load_unet(cfg, out / "detector.ckpt");
  const auto scenes = load_split(corpus_dir(c, cfg), split);
  const auto cands = detect_candidates(model, scenes, cfg.prob_threshold);
  const fs::path path = out / ("candidates_" + split + ".csv");
  froc::write_candidates(path, cands);
  std::cout << cands.size() << " candidates in " << scenes.size() << " scenes -> "
            << path.string() << "\n";
}

void mine_hard(const Common& c) {
  const fs::path out = run_dir(c);
  const RunConfig cfg = resolve(c, out);
  require(out / "detector.ckpt", "run train-detector first");
  const auto model = load_unet(cfg, out / "detector.ckpt");
  const auto scenes = load_split(corpus_dir(c, cfg), "train");
  const auto cands = detect_candidates(model, scenes, cfg.prob_threshold);
  const auto mined = mine_hard_negatives(cands, all_annotations(scenes), cfg.top_n);
  if (mined.available < cfg.top_n) {
    std::cerr << "warning: only " << mined.available << " false positives available (top_n = "
              << cfg.top_n << ")\n";
  }
  write_hard_negatives(out / "hard_negatives.csv", mined.negatives);
  std::cout << mined.negatives.size() << " hard negatives -> "
            << (out / "hard_negatives.csv").string() << "\n";
}

void train_fpr(const Common& c) {
  const fs::path out = run_dir(c);
  const RunConfig cfg = resolve(c, out);
  fs::create_directories(out);
  const auto scenes = load_split(corpus_dir(c, cfg), "train");
  std::vector<DetectionCandidate> hard;
  if (fs::exists(out / "hard_negatives.csv")) {
    hard = read_hard_negatives(out / "hard_negatives.csv");
  } else {
    std::cerr << "warning: no hard_negatives.csv in " << out.string()
              << "; training without mined negatives\n";
  }
  const auto set = build_stage2_set(cfg, scenes, hard, cfg.seed);
  const auto r = train_stage2(cfg, set, cfg.seed, progress(c));
  save_model(r.model, out / "fpr.ckpt");
  spl::write_epoch_stats(out / "spl_log.csv", r.log);
  write_sample_weights(out / "spl_samples.csv", set, r);
  const auto mv = mean_weights(set, r.final_v);
  std::cout << "fpr: " << set.info.size() << " patches, " << spl::weighting_name(cfg.weighting)
            << ", final mean v " << mv.clean << " (clean) / " << mv.noisy << " (flipped) -> "
            << (out / "fpr.ckpt").string() << "\n";
}

void eval(const Common& c) {
  const fs::path out = run_dir(c);
  const RunConfig cfg = resolve(c, out);
  require(out / "detector.ckpt", "run train-detector first");
  require(out / "fpr.ckpt", "run train-fpr first");
  const auto unet = load_unet(cfg, out / "detector.ckpt");
  const auto fpr = load_fpr(cfg, out / "fpr.ckpt");
  const auto test = load_split(corpus_dir(c, cfg), "test");
  const auto ev = evaluate_candidates(fpr, cfg, test,
                                      detect_candidates(unet, test, cfg.prob_threshold));
  froc::write_candidates(out / "candidates_scored.csv", ev.scored);
  froc::write_annotations(out / "annotations_test.csv", all_annotations(test));
  froc::write_report(out / "froc_report.csv", ev.final);
  froc::write_report(out / "froc_detector.csv", ev.detector);
  std::cout << "sensitivity at";
  for (std::size_t i = 0; i < froc::kCpmRates.size(); ++i) {
    std::cout << " " << froc::kCpmRates[i] << ":" << ev.final.sensitivities_at_c[i];
  }
  std::cout << "\nCPM " << ev.final.cpm << " (detector alone " << ev.detector.cpm << ") -> "
            << (out / "froc_report.csv").string() << "\n";
}

void ablate(const Common& c) {
  const fs::path out = run_dir(c);
  const RunConfig cfg = resolve(c, out);
  fs::create_directories(out);
  cfg.save(out / "config.conf");
  const fs::path corpus = corpus_dir(c, cfg);
  const auto train = load_split(corpus, "train");
  const auto test = load_split(corpus, "test");
  const auto r = run_ablation(cfg, train, test, out, progress(c));
  write_ablation_csv(out / "ablation.csv", r);
  write_ablation_runs(out / "ablation_runs.csv", r);
  const std::string table = ablation_markdown(r);
  std::ofstream(out / "ablation.md") << table;
  std::cout << table;
}

void score(const std::string& candidates, const std::string& annotations, std::size_t scans,
           const std::string& report) {
  std::size_t dup = 0;
  const auto r = froc::evaluate(froc::read_candidates(candidates),
                                froc::read_annotations(annotations), scans, &dup);
  if (dup) std::cerr << "warning: " << dup << " duplicate candidate rows\n";
  if (!report.empty()) froc::write_report(report, r);
  std::cout << "CPM " << r.cpm << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable-block detector with self-paced false-positive reduction"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen-corpus", "generate the phantom train/test corpus");
  add_common(gen, c, false);
  auto* s1 = app.add_subcommand("train-detector", "train the stage-1 U-Net");
  add_common(s1, c, true);
  std::string split = "test";
  auto* det = app.add_subcommand("detect", "write detector candidates for a corpus split");
  add_common(det, c, true);
  det->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  auto* mine = app.add_subcommand("mine-hard", "collect the top false positives on train");
  add_common(mine, c, true);
  auto* s2 = app.add_subcommand("train-fpr", "train the stage-2 classifier");
  add_common(s2, c, true);
  auto* ev = app.add_subcommand("eval", "rescore test candidates and write the FROC report");
  add_common(ev, c, true);
  auto* ab = app.add_subcommand("ablate", "DDB count x weighting ablation table");
  add_common(ab, c, true);

  std::string cands, annos, report;
  std::size_t scans = 0;
  auto* sc = app.add_subcommand("froc", "score a candidates CSV against an annotations CSV");
  sc->add_option("--candidates", cands)->required();
  sc->add_option("--annotations", annos)->required();
  sc->add_option("--scans", scans, "number of scans, including ones without nodules")->required();
  sc->add_option("--report", report, "write the report CSV here");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) gen_corpus(c);
    if (*s1) train_detector(c);
    if (*det) detect(c, split);
    if (*mine) mine_hard(c);
    if (*s2) train_fpr(c);
    if (*ev) eval(c);
    if (*ab) ablate(c);
    if (*sc) score(cands, annos, scans, report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
