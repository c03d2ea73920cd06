#include <gtest/gtest.h>

#include <cmath>

#include "dspl/blocks.hpp"
#include "test_util.hpp"

using namespace dspl;
using namespace dspl::nn;
using dspl::testing::random_tensor;

namespace {

struct Fixture {
  Model model;
  DenseBlock block;
};

Fixture make_block(std::size_t in, std::size_t growth, bool deformable, std::uint64_t seed) {
  Fixture f;
  Rng rng(seed);
  f.block = add_dense_block(f.model, "db", in, growth, deformable, rng);
  return f;
}

}  // namespace

TEST(BlockConfig, LabelsAndValidation) {
  BlockConfig c;
  EXPECT_EQ(c.ddb_label(), "Non-DDB");
  c.ddb_positions = parse_ddb_positions("1,2");
  EXPECT_EQ(c.ddb_label(), "1,2-DDB");
  c.ddb_positions = {7};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.ddb_positions = {};
  c.levels = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(parse_ddb_positions("1,x"), std::invalid_argument);
  EXPECT_TRUE(parse_ddb_positions("none").empty());
}

TEST(DenseBlock, ShapeAndConcatenation) {
  auto f = make_block(16, 16, false, 1);
  Rng rng(2);
  const Tensor x = random_tensor({1, 16, 32, 32}, rng);
  Graph g;
  const Tensor y = dense_block(g.input(x), f.block, Mode::Train).value();
  ASSERT_EQ(y.shape(), (Shape{1, 32, 32, 32}));
  for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(y[i], x[i]);
}

TEST(DenseBlock, RejectsWrongChannelCount) {
  auto f = make_block(4, 2, false, 1);
  Graph g;
  EXPECT_THROW(dense_block(g.input(Tensor({1, 3, 8, 8})), f.block, Mode::Train), ShapeError);
}

TEST(DeformableDenseBlock, ZeroOffsetsBitEqualPlainBlock) {
  auto plain = make_block(3, 4, false, 5);
  auto deform = make_block(3, 4, true, 5);
  Rng rng(6);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Graph g1, g2;
  const Tensor a = dense_block(g1.input(x), plain.block, Mode::Train).value();
  const Tensor b = deformable_dense_block(g2.input(x), deform.block, Mode::Train).value();
  EXPECT_EQ(b.dim(1), 7u);
  EXPECT_TRUE(a.bit_equal(b));
}

TEST(DeformableDenseBlock, OffsetWeightsReceiveGradient) {
  auto f = make_block(2, 3, true, 7);
  Rng rng(8);
  Graph g;
  const Var y = deformable_dense_block(g.input(random_tensor({1, 2, 6, 6}, rng)), f.block,
                                       Mode::Train);
  g.backward(sum(mul(y, g.input(random_tensor(y.shape(), rng)))));
  ASSERT_TRUE(f.block.offset_weight->has_grad());
  double norm = 0.0;
  for (double v : f.block.offset_weight->grad()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(DeformableRdb, ResidualShapeAndZeroOffsetEquivalence) {
  Model m0, m1;
  Rng r0(9), r1(9);
  const auto plain = add_deformable_rdb(m0, "rdb", 4, 2, {}, r0);
  const auto deform = add_deformable_rdb(m1, "rdb", 4, 2, {1, 2}, r1);
  EXPECT_GT(m1.parameter_count(), m0.parameter_count());
  Rng rng(10);
  const Tensor x = random_tensor({1, 4, 8, 8}, rng);
  Graph g0, g1;
  const Tensor a = deformable_rdb(g0.input(x), plain, Mode::Train).value();
  const Tensor b = deformable_rdb(g1.input(x), deform, Mode::Train).value();
  EXPECT_EQ(a.shape(), x.shape());
  EXPECT_LT(max_abs_diff(a, b), 1e-9);
}

TEST(DeformableRdb, ZeroParametersGiveIdentity) {
  Model m;
  Rng r(11);
  const auto rdb = add_deformable_rdb(m, "rdb", 3, 2, {1, 2}, r);
  for (Tensor* p : m.parameters()) p->zero_grad(), std::fill(p->data().begin(), p->data().end(), 0.0);
  Rng rng(12);
  const Tensor x = random_tensor({1, 3, 8, 8}, rng);
  Graph g;
  EXPECT_TRUE(deformable_rdb(g.input(x), rdb, Mode::Train).value().bit_equal(x));
}

TEST(DualPoolHead, ConstantMapAndCornerPixel) {
  Graph g;
  const Tensor y = dual_pool_head(g.input(Tensor({1, 3, 8, 8}, 0.7))).value();
  ASSERT_EQ(y.shape(), (Shape{1, 6}));
  for (double v : y.data()) EXPECT_EQ(v, 0.7);
  Tensor corner({1, 1, 8, 8});
  corner.at(0, 0, 0, 0) = 5.0;
  Graph g2;
  const Tensor z = dual_pool_head(g2.input(corner)).value();
  EXPECT_EQ(z[0], 5.0);
  EXPECT_EQ(z[1], 0.0);
  Graph g3;
  EXPECT_THROW(dual_pool_head(g3.input(Tensor({1, 1, 2, 2}))), ShapeError);
}

TEST(Unet, ShapeAndRange) {
  BlockConfig c;
  c.levels = 3;
  c.base_channels = 16;
  c.growth = 16;
  const Model m = build_unet(c, 1);
  Rng rng(2);
  const Tensor y = m.predict(random_tensor({1, 1, 128, 128}, rng, 0, 1));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 128, 128}));
  for (double v : y.data()) ASSERT_TRUE(v > 0.0 && v < 1.0);
}

TEST(Unet, RejectsIndivisibleInput) {
  BlockConfig c;
  c.levels = 2;
  c.base_channels = 2;
  c.growth = 2;
  const Model m = build_unet(c, 1);
  EXPECT_THROW(m.predict(Tensor({1, 1, 18, 16})), ShapeError);
}

TEST(Unet, ZeroWeightsGiveSigmoidOfHeadBias) {
  BlockConfig c;
  c.levels = 2;
  c.base_channels = 2;
  c.growth = 2;
  Model m = build_unet(c, 3);
  for (Tensor* p : m.parameters()) std::fill(p->data().begin(), p->data().end(), 0.0);
  m.parameter("head.bias")[0] = 0.3;
  Rng rng(4);
  Graph g;
  const Tensor y = m.forward(g, g.input(random_tensor({2, 1, 16, 16}, rng)), Mode::Train).value();
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0 / (1.0 + std::exp(-0.3)));
}

TEST(Unet, ParameterCountGrowsWithDdbCount) {
  std::size_t last = 0;
  for (const char* ddb : {"", "1", "1,2", "1,2,3"}) {
    BlockConfig c;
    c.levels = 2;
    c.base_channels = 4;
    c.growth = 4;
    c.ddb_positions = parse_ddb_positions(ddb);
    const std::size_t n = build_unet(c, 5).parameter_count();
    EXPECT_GT(n, last) << ddb;
    last = n;
  }
}

TEST(Unet, EndToEndGradientCheck) {
  BlockConfig c;
  c.levels = 2;
  c.base_channels = 2;
  c.growth = 2;
  c.ddb_positions = {1};
  Model m = build_unet(c, 6);
  Rng rng(7);
  // move offset predictors off zero so the deformable path is exercised
  for (const auto& name : m.parameter_names()) {
    if (name.find("offset") != std::string::npos) {
      for (double& v : m.parameter(name).data()) v = rng.uniform(-0.3, 0.3);
    }
  }
  const Tensor x = random_tensor({2, 1, 16, 16}, rng, 0, 1);
  Tensor target({2, 1, 16, 16});
  for (auto& v : target.data()) v = rng.uniform() < 0.2 ? 1.0 : 0.0;
  auto loss_value = [&] {
    Graph g;
    const Var p = m.forward(g, g.input(x), Mode::Train);
    return add(binary_cross_entropy(p, target), soft_dice_loss(p, target)).value()[0];
  };

  m.zero_grad();
  {
    Graph g;
    const Var p = m.forward(g, g.input(x), Mode::Train);
    g.backward(add(binary_cross_entropy(p, target), soft_dice_loss(p, target)));
  }
  auto params = m.parameters();
  const auto names = m.parameter_names();
  double worst = 0.0;
  int checked = 0;
  for (int s = 0; s < 60; ++s) {
    const auto pi = static_cast<std::size_t>(rng.integer(0, static_cast<long>(params.size()) - 1));
    Tensor& t = *params[pi];
    const auto ei = static_cast<std::size_t>(rng.integer(0, static_cast<long>(t.numel()) - 1));
    const double analytic = t.has_grad() ? t.grad()[ei] : 0.0;
    const double keep = t[ei], eps = 1e-6;
    t[ei] = keep + eps;
    const double up = loss_value();
    t[ei] = keep - eps;
    const double down = loss_value();
    t[ei] = keep;
    const double numeric = (up - down) / (2 * eps);
    const double err = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    if (std::abs(analytic) < 1e-9 && std::abs(numeric) < 1e-9) continue;
    ++checked;
    worst = std::max(worst, err);
    EXPECT_LT(err, 1e-3) << names[pi] << "[" << ei << "] analytic " << analytic << " numeric "
                         << numeric;
  }
  EXPECT_GT(checked, 30);
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(FprCnn, ShapeSoftmaxAndSeededInit) {
  FprConfig c;
  const Model a = build_fpr_cnn(c, 42);
  const Model b = build_fpr_cnn(c, 42);
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i]->bit_equal(*pb[i]));
  Rng rng(1);
  const Tensor logits = a.predict(random_tensor({8, 1, 32, 32}, rng, 0, 1));
  ASSERT_EQ(logits.shape(), (Shape{8, 2}));
  const Tensor p = softmax(logits);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(p[2 * i] + p[2 * i + 1], 1.0, 1e-12);
  EXPECT_THROW(a.predict(Tensor({1, 1, 24, 24})), ShapeError);
}

TEST(Model, CheckpointRoundTripAndMismatch) {
  FprConfig c;
  const Model a = build_fpr_cnn(c, 1);
  Model b = build_fpr_cnn(c, 2);
  const auto path = std::filesystem::temp_directory_path() / "dspl_blocks_ckpt.bin";
  a.save(path);
  b.load(path);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i]->bit_equal(*pb[i]));
  FprConfig other;
  other.channels = 4;
  Model d = build_fpr_cnn(other, 1);
  EXPECT_THROW(d.load(path), std::runtime_error);
  std::filesystem::remove(path);
}
