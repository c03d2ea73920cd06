#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dspl/config.hpp"
#include "dspl/csv.hpp"
#include "dspl/pipeline.hpp"
#include "dspl/rng.hpp"

using namespace dspl;
using namespace dspl::pipeline;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  return RunConfig::parse(R"(
    seed = 5
    image_size = 64
    vessels = 3
    train_scenes = 20
    test_scenes = 6
    folds = 4
    levels = 2
    s1_max_epochs = 2
    s1_batch = 4
    s1_crop = 32
    patch = 16
    s2_epochs = 3
    top_n = 10
    repeats = 1
  )");
}

std::vector<PhantomScene> scenes(const RunConfig& c, std::size_t first, std::size_t n) {
  return phantom::generate_scenes(c.seed, first, n, c.phantom);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dspl_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Epochs an early-stopped run lasts for a given score sequence.
std::size_t run_stopper(const std::vector<double>& scores, std::size_t patience,
                        std::size_t max_epochs, std::size_t* best = nullptr) {
  EarlyStopper s(patience, max_epochs);
  for (double v : scores) {
    if (!s.update(v)) break;
  }
  if (best) *best = s.best_epoch();
  return s.epochs();
}

}  // namespace

TEST(EarlyStopper, TrainsFiveEpochsPastTheBest) {
  // best at epoch 4, never improved afterwards
  std::vector<double> scores = {0.1, 0.2, 0.3, 0.9, 0.5, 0.4, 0.8, 0.85, 0.2, 0.1, 0.1, 0.1};
  std::size_t best = 0;
  EXPECT_EQ(run_stopper(scores, 5, 15, &best), 9u);
  EXPECT_EQ(best, 4u);
}

TEST(EarlyStopper, CapAtMaxEpochs) {
  std::vector<double> rising(30);
  std::iota(rising.begin(), rising.end(), 0.0);
  EXPECT_EQ(run_stopper(rising, 5, 15), 15u);
  EXPECT_THROW(EarlyStopper(5, 0), std::invalid_argument);
}

TEST(EarlyStopper, EqualScoreIsNotAnImprovement) {
  EXPECT_EQ(run_stopper(std::vector<double>(20, 0.5), 5, 15), 6u);
}

TEST(EarlyStopper, RandomSequencesStopAtBestPlusPatience) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> scores(40);
    for (auto& v : scores) v = rng.uniform();
    const std::size_t max_epochs = static_cast<std::size_t>(rng.integer(1, 40));
    std::size_t best = 0;
    const std::size_t n = run_stopper(scores, 5, max_epochs, &best);
    // Oracle: index of the first maximum within the epochs actually run.
    const auto top = std::max_element(scores.begin(), scores.begin() + static_cast<long>(n));
    EXPECT_EQ(best, static_cast<std::size_t>(top - scores.begin()) + 1);
    EXPECT_EQ(n, std::min(max_epochs, best + 5));
  }
}

TEST(DiceScore, HandValues) {
  Tensor p({4}, std::vector<double>{0.9, 0.6, 0.2, 0.7});
  Tensor t({4}, std::vector<double>{1, 0, 0, 1});
  // predicted {0,1,3}, truth {0,3}: 2*2 / (3+2)
  EXPECT_DOUBLE_EQ(dice_score(p, t), 0.8);
  EXPECT_DOUBLE_EQ(dice_score(Tensor({4}), Tensor({4})), 1.0);
}

TEST(Candidates, AllZeroMapGivesNone) {
  EXPECT_TRUE(candidates_from_map(Tensor({1, 1, 16, 16}), "s", 0.5).empty());
}

TEST(Candidates, BlobCentroidAndPeak) {
  Tensor m({1, 1, 10, 12});
  // cross-shaped blob: (3,4)=0.6, (4,3)=0.8, (4,4)=1.0, (4,5)=0.8, (5,4)=0.6
  m.at(0, 0, 3, 4) = 0.6;
  m.at(0, 0, 4, 3) = 0.8;
  m.at(0, 0, 4, 4) = 1.0;
  m.at(0, 0, 4, 5) = 0.8;
  m.at(0, 0, 5, 4) = 0.6;
  m.at(0, 0, 8, 10) = 0.4;  // below threshold
  const auto c = candidates_from_map(m, "scan", 0.5);
  ASSERT_EQ(c.size(), 1u);
  const double mass = 0.6 + 0.8 + 1.0 + 0.8 + 0.6;
  EXPECT_NEAR(c[0].y, (0.6 * 3 + (0.8 + 1.0 + 0.8) * 4 + 0.6 * 5) / mass, 1e-12);
  EXPECT_NEAR(c[0].x, (0.8 * 3 + (0.6 + 1.0 + 0.6) * 4 + 0.8 * 5) / mass, 1e-12);
  EXPECT_EQ(c[0].probability, 1.0);
  EXPECT_EQ(c[0].scan_id, "scan");
}

TEST(Candidates, ConnectivityIsFourWay) {
  Tensor m({8, 8});
  m[1 * 8 + 1] = 0.9;
  m[2 * 8 + 2] = 0.7;  // diagonal neighbour only: separate component
  m[5 * 8 + 1] = 0.8;
  m[5 * 8 + 2] = 0.8;
  m[5 * 8 + 4] = 0.8;  // zero gap at column 3
  const auto c = candidates_from_map(m, "s", 0.5);
  ASSERT_EQ(c.size(), 4u);
  EXPECT_DOUBLE_EQ(c[0].probability, 0.9);
  EXPECT_DOUBLE_EQ(c[1].probability, 0.7);
  EXPECT_DOUBLE_EQ(c[2].x, 1.5);
  EXPECT_DOUBLE_EQ(c[3].x, 4.0);
}

TEST(HardMining, TopFalsePositivesByProbability) {
  std::vector<froc::NoduleAnnotation> annos = {{"a", 10, 10, 6, false}};
  std::vector<DetectionCandidate> cands = {{"a", 10, 10, 0.99}};  // TP
  for (int i = 0; i < 12; ++i) cands.push_back({"a", 40.0 + i, 40, 0.05 * (i + 1)});
  const auto h = mine_hard_negatives(cands, annos, 5);
  EXPECT_EQ(h.available, 12u);
  ASSERT_EQ(h.negatives.size(), 5u);
  for (int k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(h.negatives[k].probability, 0.05 * (12 - k));
}

TEST(HardMining, PerfectDetectorYieldsNothing) {
  std::vector<froc::NoduleAnnotation> annos = {{"a", 10, 10, 6, false}};
  std::vector<DetectionCandidate> cands = {{"a", 10, 10, 0.9}, {"a", 11, 10, 0.8}};
  const auto h = mine_hard_negatives(cands, annos, 5);
  EXPECT_TRUE(h.negatives.empty());
  EXPECT_EQ(h.available, 0u);
}

TEST(Config, RoundTripsThroughText) {
  RunConfig c = tiny_config();
  c.weighting = spl::Weighting::EqualWeight;
  c.spl.lambda0 = 0.25;
  c.ablation_ddb = {{}, {2, 3}};
  c.s2_lr = 0.1 + 0.2;  // not exactly representable in short decimal
  const RunConfig back = RunConfig::parse(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.s2_lr, c.s2_lr);
  EXPECT_EQ(back.ablation_ddb, c.ablation_ddb);
  EXPECT_EQ(back.weighting, spl::Weighting::EqualWeight);
}

TEST(Config, CommentsBlankLinesAndSpacing) {
  const RunConfig c = RunConfig::parse("# header\n\n  seed=42   # trailing\nweighting = equal-weight\n");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.weighting, spl::Weighting::EqualWeight);
}

TEST(Config, RejectsTyposAndBadValues) {
  EXPECT_THROW(RunConfig::parse("sed = 3\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("seed = 3\nseed = 4\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("seed 3\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("seed = -3\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("s1_lr = fast\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("s1_crop = 60\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("ddb_positions = 7\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("label_noise = 0.5\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("weighting = sometimes\n"), std::invalid_argument);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"desk.conf", "tiny.conf", "acceptance.conf"}) {
    const fs::path p = fs::path(DSPL_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(RunConfig::load(p)) << p;
  }
  const RunConfig desk = RunConfig::load(fs::path(DSPL_SOURCE_DIR) / "configs" / "desk.conf");
  EXPECT_EQ(desk.train_scenes, 200u);
  EXPECT_EQ(desk.test_scenes, 100u);
  EXPECT_GE(desk.phantom.hard_fraction, 0.4);
}

TEST(Stage1, DeterministicAndImprovesTrainingDice) {
  RunConfig c = tiny_config();
  c.s1_max_epochs = 6;
  c.s1_patience = 6;
  const auto train = scenes(c, 0, 20);
  const auto split = split_train_val(train, c.folds, c.seed);
  EXPECT_EQ(split.val.size(), 5u);

  const auto soft_dice = [&](const nn::Model& m) {
    double inter = 0, sp = 0, st = 0;
    for (const auto& s : train) {
      Tensor x = s.image;
      x.reshape({1, 1, 64, 64});
      const Tensor p = m.predict(x);
      const Tensor t = phantom::nodule_mask(s);
      for (std::size_t i = 0; i < p.numel(); ++i) {
        inter += p[i] * t[i];
        sp += p[i];
        st += t[i];
      }
    }
    return 2 * inter / (sp + st);
  };
  const nn::Model initial = nn::build_unet(c.unet, derive_seed(c.seed, 1));

  const auto a = train_stage1(c, split.train, split.val, c.seed);
  const auto b = train_stage1(c, split.train, split.val, c.seed);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    EXPECT_EQ(a.log[i].val_dice, b.log[i].val_dice);
  }
  const auto sa = a.model.state(), sb = b.model.state();
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_TRUE(sa[i].tensor.bit_equal(sb[i].tensor));
  EXPECT_GT(soft_dice(a.model), soft_dice(initial));
  EXPECT_LE(a.log.size(), a.best_epoch + c.s1_patience);
}

TEST(Stage1, NonFiniteLossAborts) {
  RunConfig c = tiny_config();
  c.s1_lr = 1e300;
  c.s1_max_epochs = 3;
  const auto train = scenes(c, 0, 8);
  const auto split = split_train_val(train, c.folds, c.seed);
  try {
    train_stage1(c, split.train, split.val, c.seed);
    FAIL() << "expected divergence";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos) << e.what();
  }
}

TEST(Stage2Set, LabelsSourcesAndNoise) {
  RunConfig c = tiny_config();
  const auto train = scenes(c, 0, 10);
  std::vector<DetectionCandidate> hard = {{"scene_0001", 2, 2, 0.7}, {"scene_0004", 61, 61, 0.4}};
  const auto clean = build_stage2_set(c, train, hard, c.seed);
  std::size_t positives = 0, hard_seen = 0;
  for (std::size_t i = 0; i < clean.info.size(); ++i) {
    const auto& s = clean.info[i];
    EXPECT_FALSE(s.noisy);
    EXPECT_EQ(clean.data.labels[i], s.true_label);
    if (s.source == "positive") {
      EXPECT_EQ(s.true_label, 1);
      ++positives;
    } else {
      EXPECT_EQ(s.true_label, 0) << s.source;
    }
    hard_seen += s.source == "hard";
  }
  EXPECT_EQ(hard_seen, 2u);
  std::size_t annotated = 0;
  for (const auto& s : train) {
    for (const auto& a : s.annotations) annotated += !a.ignore;
  }
  EXPECT_EQ(positives, annotated * (1 + c.positive_jitter));

  c.label_noise = 0.1;
  const auto noisy = build_stage2_set(c, train, hard, c.seed);
  ASSERT_EQ(noisy.info.size(), clean.info.size());
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < noisy.info.size(); ++i) {
    const bool f = noisy.data.labels[i] != clean.data.labels[i];
    EXPECT_EQ(f, noisy.info[i].noisy);
    flipped += f;
  }
  EXPECT_EQ(flipped, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(noisy.info.size()))));
}

TEST(Stage2Set, SingleClassIsAnError) {
  RunConfig c = tiny_config();
  c.phantom.nodules_min = c.phantom.nodules_max = 0;
  EXPECT_THROW(build_stage2_set(c, scenes(c, 0, 4), {}, c.seed), std::runtime_error);
}

TEST(Stage2, EqualWeightMatchesHugePace) {
  RunConfig c = tiny_config();
  c.label_noise = 0.1;
  const auto train = scenes(c, 0, 8);
  const auto set = build_stage2_set(c, train, {}, c.seed);
  c.weighting = spl::Weighting::EqualWeight;
  const auto eq = train_stage2(c, set, c.seed);
  c.weighting = spl::Weighting::SelfPaced;
  c.spl.lambda0 = 1e9;
  const auto big = train_stage2(c, set, c.seed);
  const auto a = eq.model.state(), b = big.model.state();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].tensor.bit_equal(b[i].tensor)) << a[i].name;
  for (double v : big.final_v) EXPECT_EQ(v, 1.0);
}

TEST(Stage2, SelfPacedAdmitsEveryClassFromTheStart) {
  RunConfig c = tiny_config();
  const auto train = scenes(c, 0, 8);
  const auto set = build_stage2_set(c, train, {}, c.seed);
  c.s2_epochs = 1;
  const auto r = train_stage2(c, set, c.seed);
  std::size_t active[2] = {0, 0};
  for (std::size_t i = 0; i < set.info.size(); ++i) active[set.data.labels[i]] += r.final_v[i] > 0;
  EXPECT_GT(active[0], 0u);
  EXPECT_GT(active[1], 0u);
}

TEST(Evaluate, VerbatimAnnotationsScoreOne) {
  const RunConfig c = tiny_config();
  const auto test = scenes(c, 100, 6);
  std::vector<DetectionCandidate> cands;
  for (const auto& a : all_annotations(test)) cands.push_back({a.scan_id, a.y, a.x, 1.0});
  const auto r = froc::evaluate(cands, all_annotations(test), test.size());
  EXPECT_DOUBLE_EQ(r.cpm, 1.0);
}

TEST(Evaluate, RandomCandidatesScoreNearZero) {
  RunConfig c = tiny_config();
  c.phantom = RunConfig::desk_phantom();
  const auto test = scenes(c, 0, 100);
  Rng rng(17);
  std::vector<DetectionCandidate> cands;
  for (const auto& s : test) {
    for (int k = 0; k < 20; ++k) {
      cands.push_back({s.scene_id, rng.uniform(0, 128), rng.uniform(0, 128), rng.uniform()});
    }
  }
  const auto r = froc::evaluate(cands, all_annotations(test), test.size());
  EXPECT_LT(r.cpm, 0.1);
}

TEST(Evaluate, RescoreAndReport) {
  RunConfig c = tiny_config();
  const auto test = scenes(c, 50, 4);
  const nn::Model fpr = nn::build_fpr_cnn(c.fpr, 3);
  std::vector<DetectionCandidate> cands;
  for (const auto& a : all_annotations(test)) cands.push_back({a.scan_id, a.y, a.x, 0.5});
  cands.push_back({test[0].scene_id, 20, 20, 0.3});
  const auto ev = evaluate_candidates(fpr, c, test, cands);
  ASSERT_EQ(ev.scored.size(), cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    EXPECT_EQ(ev.scored[i].scan_id, cands[i].scan_id);
    EXPECT_EQ(ev.scored[i].y, cands[i].y);
    EXPECT_GE(ev.scored[i].probability, 0.0);
    EXPECT_LE(ev.scored[i].probability, 1.0);
  }
  // Rescoring a single patch directly gives the same probability.
  const auto ps = phantom::extract_patches(test[0], std::vector<phantom::Point>{{20, 20}}, c.fpr.patch);
  const Tensor p = softmax(fpr.predict(ps.patches));
  EXPECT_EQ(ev.scored.back().probability, p[1]);

  const fs::path dir = scratch("report");
  froc::write_report(dir / "r.csv", ev.final);
  const auto back = froc::read_report(dir / "r.csv");
  EXPECT_DOUBLE_EQ(back.cpm, froc::cpm_from_sensitivities(back.sensitivities_at_c));
  EXPECT_EQ(back.cpm, ev.final.cpm);
}

TEST(Ablation, TableShapeAndBaselineCell) {
  RunConfig c = tiny_config();
  c.train_scenes = 12;
  c.folds = 3;
  c.s1_max_epochs = 1;
  c.s2_epochs = 2;
  c.label_noise = 0.1;
  const auto train = scenes(c, 0, c.train_scenes);
  const auto test = scenes(c, c.train_scenes, c.test_scenes);
  const fs::path out = scratch("ablation");
  const auto r = run_ablation(c, train, test, out);

  ASSERT_EQ(r.rows.size(), 8u);
  ASSERT_EQ(r.runs.size(), 8u);
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_GE(r.rows[i].median_cpm, 0.0);
    EXPECT_LE(r.rows[i].median_cpm, 1.0);
    EXPECT_GT(r.rows[i].median_seconds, 0.0);
    if (i >= 2) {
      EXPECT_GT(r.rows[i].detector_params, r.rows[i - 2].detector_params);
    }
  }
  EXPECT_EQ(r.rows[0].ddb, "Non-DDB");
  EXPECT_EQ(r.rows[6].ddb, "1,2,3-DDB");

  write_ablation_csv(out / "ablation.csv", r);
  const auto table = csv::read(out / "ablation.csv");
  EXPECT_EQ(table.rows.size(), 8u);
  EXPECT_EQ(table.header.size(), 8u);
  EXPECT_EQ(table.rows[4][0], "1+2");
  const std::string md = ablation_markdown(r);
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 10);

  // The Non-DDB / equal-weight cell is an ordinary run with the same seed.
  RunConfig base = c;
  base.unet.ddb_positions = {};
  base.weighting = spl::Weighting::EqualWeight;
  const auto split = split_train_val(train, base.folds, base.seed);
  const auto s1 = train_stage1(base, split.train, split.val, base.seed);
  const auto mined = mine_hard_negatives(detect_candidates(s1.model, train, base.prob_threshold),
                                         all_annotations(train), base.top_n);
  const auto s2 = train_stage2(base, build_stage2_set(base, train, mined.negatives, base.seed),
                               base.seed);
  const fs::path plain = scratch("plain");
  save_model(s1.model, plain / "detector.ckpt");
  save_model(s2.model, plain / "fpr.ckpt");
  const fs::path cell = out / "cells" / "Non-DDB" / "r0";
  EXPECT_EQ(slurp(plain / "detector.ckpt"), slurp(cell / "detector.ckpt"));
  EXPECT_EQ(slurp(plain / "fpr.ckpt"), slurp(cell / "equal-weight" / "fpr.ckpt"));
}

// A classifier that only ever saw easy nodules should find the juxta-vascular
// and spiculated ones harder than unseen easy ones.
TEST(Phantom, HardNodulesAreHarderForAnEasyOnlyClassifier) {
  RunConfig c;
  c.seed = 17;
  c.weighting = spl::Weighting::EqualWeight;
  c.s2_epochs = 8;
  c.phantom.nodules_min = 2;
  c.phantom.nodules_max = 4;
  c.phantom.tiny_fraction = 0.0;

  RunConfig easy = c;
  easy.phantom.hard_fraction = 0.0;
  const auto train = phantom::generate_scenes(c.seed, 0, 40, easy.phantom);
  const auto model = train_stage2(c, build_stage2_set(c, train, {}, c.seed), c.seed).model;

  c.phantom.hard_fraction = 0.5;
  const auto test = phantom::generate_scenes(c.seed, 1000, 60, c.phantom);
  std::vector<DetectionCandidate> centers;
  std::vector<bool> hard;
  for (const auto& s : test) {
    for (std::size_t i = 0; i < s.annotations.size(); ++i) {
      const auto& a = s.annotations[i];
      centers.push_back({a.scan_id, a.y, a.x, 0.0});
      hard.push_back(s.difficulty[i] != phantom::Difficulty::Easy);
    }
  }
  const auto scored = rescore(model, c.fpr.patch, test, centers);
  double hit[2] = {0, 0}, n[2] = {0, 0};
  for (std::size_t i = 0; i < scored.size(); ++i) {
    hit[hard[i]] += scored[i].probability > 0.5;
    ++n[hard[i]];
  }
  ASSERT_GT(n[0], 20);
  ASSERT_GT(n[1], 20);
  EXPECT_LT(hit[1] / n[1], hit[0] / n[0]) << "easy " << hit[0] / n[0] << " hard " << hit[1] / n[1];
}
