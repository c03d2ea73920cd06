#include "dspl/blocks.hpp"

#include <cmath>
#include <sstream>

#include "dspl/deform_conv.hpp"

namespace dspl::nn {

void BlockConfig::validate() const {
  if (growth < 1) throw std::invalid_argument("block config: growth must be >= 1");
  if (levels < 2) throw std::invalid_argument("block config: levels must be >= 2");
  if (base_channels < 1 || in_channels < 1) {
    throw std::invalid_argument("block config: channel counts must be >= 1");
  }
  for (int p : ddb_positions) {
    if (p < 1 || p > kRdbBlocks) {
      throw std::invalid_argument("block config: DDB position " + std::to_string(p) +
                                  " outside 1..6");
    }
  }
}

std::string BlockConfig::ddb_label() const {
  if (ddb_positions.empty()) return "Non-DDB";
  std::string s;
  for (int p : ddb_positions) {
    if (!s.empty()) s += ',';
    s += std::to_string(p);
  }
  return s + "-DDB";
}

std::set<int> parse_ddb_positions(const std::string& text) {
  std::set<int> out;
  if (text.empty() || text == "none" || text == "Non-DDB") return out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("bad DDB position '" + tok + "'");
    out.insert(v);
  }
  return out;
}

Var ConvLayer::operator()(Var x) const {
  Graph& g = *x.graph;
  return conv2d(x, g.parameter(*weight), g.parameter(*bias), stride, padding);
}

Var BatchNormLayer::operator()(Var x, Mode mode) const {
  Graph& g = *x.graph;
  return batch_norm(x, g.parameter(*gamma), g.parameter(*beta), *running_mean, *running_var, mode);
}

ConvLayer add_conv(Model& m, const std::string& name, std::size_t in, std::size_t out,
                   std::size_t kernel, int stride, int padding, Rng& rng) {
  Tensor w(Shape{out, in, kernel, kernel});
  const double sd = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  for (double& v : w.data()) v = sd * rng.normal();
  ConvLayer c;
  c.weight = &m.add_parameter(name + ".weight", std::move(w));
  c.bias = &m.add_parameter(name + ".bias", Tensor::zeros({out}));
  c.stride = stride;
  c.padding = padding;
  return c;
}

BatchNormLayer add_batch_norm(Model& m, const std::string& name, std::size_t channels) {
  BatchNormLayer b;
  b.gamma = &m.add_parameter(name + ".gamma", Tensor::ones({channels}));
  b.beta = &m.add_parameter(name + ".beta", Tensor::zeros({channels}));
  b.running_mean = &m.add_buffer(name + ".running_mean", Tensor::zeros({channels}));
  b.running_var = &m.add_buffer(name + ".running_var", Tensor::ones({channels}));
  return b;
}

DenseBlock add_dense_block(Model& m, const std::string& name, std::size_t in, std::size_t growth,
                           bool deformable, Rng& rng) {
  DenseBlock b;
  b.in_channels = in;
  b.growth = growth;
  b.conv1 = add_conv(m, name + ".conv1", in, growth, 3, 1, 1, rng);
  if (deformable) {
    b.offset_weight = &m.add_parameter(name + ".offset.weight", Tensor::zeros({18, in, 3, 3}));
    b.offset_bias = &m.add_parameter(name + ".offset.bias", Tensor::zeros({18}));
  }
  b.bn1 = add_batch_norm(m, name + ".bn1", growth);
  b.conv2 = add_conv(m, name + ".conv2", growth, growth, 3, 1, 1, rng);
  b.bn2 = add_batch_norm(m, name + ".bn2", growth);
  std::ostringstream os;
  os << name << ": " << (deformable ? "DDB" : "DB") << " in=" << in << " growth=" << growth
     << " out=" << in + growth;
  m.describe(os.str());
  return b;
}

ResidualDenseBlock add_deformable_rdb(Model& m, const std::string& name, std::size_t channels,
                                      std::size_t growth, const std::set<int>& ddb_positions,
                                      Rng& rng) {
  ResidualDenseBlock r;
  std::size_t c = channels;
  for (int i = 1; i <= kRdbBlocks; ++i) {
    r.blocks.push_back(add_dense_block(m, name + ".b" + std::to_string(i), c, growth,
                                       ddb_positions.count(i) > 0, rng));
    c += growth;
  }
  r.projection = add_conv(m, name + ".proj", c, channels, 1, 1, 0, rng);
  m.describe(name + ".proj: conv1x1 " + std::to_string(c) + "->" + std::to_string(channels) +
             " + residual");
  return r;
}

namespace {

void check_block_input(Var x, const DenseBlock& p) {
  if (x.shape().size() != 4 || x.shape()[1] != p.in_channels) {
    throw ShapeError("dense block: expected " + std::to_string(p.in_channels) +
                     " input channels, got " + shape_str(x.shape()));
  }
}

Var dense_tail(Var x, Var first, const DenseBlock& p, Mode mode) {
  Var h = relu(p.bn1(first, mode));
  h = relu(p.bn2(p.conv2(h), mode));
  const Var parts[] = {x, h};
  return concat(parts);
}

}  // namespace

Var dense_block(Var x, const DenseBlock& p, Mode mode) {
  check_block_input(x, p);
  if (p.deformable()) return deformable_dense_block(x, p, mode);
  return dense_tail(x, p.conv1(x), p, mode);
}

Var deformable_dense_block(Var x, const DenseBlock& p, Mode mode) {
  check_block_input(x, p);
  if (!p.deformable()) throw std::logic_error("deformable_dense_block: block has no offsets");
  Graph& g = *x.graph;
  const Var offsets = conv2d(x, g.parameter(*p.offset_weight), g.parameter(*p.offset_bias),
                             p.conv1.stride, p.conv1.padding);
  const Var first = deform_conv2d(x, g.parameter(*p.conv1.weight), g.parameter(*p.conv1.bias),
                                  offsets, p.conv1.stride, p.conv1.padding);
  return dense_tail(x, first, p, mode);
}

Var deformable_rdb(Var x, const ResidualDenseBlock& p, Mode mode) {
  Var h = x;
  for (const DenseBlock& b : p.blocks) h = dense_block(h, b, mode);
  return add(x, p.projection(h));
}

Var dual_pool_head(Var features) {
  const Shape s = features.shape();
  if (s.size() != 4 || s[2] < 4 || s[3] < 4 || s[2] % 2 || s[3] % 2) {
    throw ShapeError("dual_pool_head: needs [N,C,H,W] with even H,W >= 4, got " + shape_str(s));
  }
  const Var whole = flatten(adaptive_max_pool(features, 1));
  const Var centre = flatten(adaptive_max_pool(center_crop(features, s[2] / 2, s[3] / 2), 1));
  const Var parts[] = {whole, centre};
  return concat(parts);
}

namespace {

struct ConvBnRelu {
  ConvLayer conv;
  BatchNormLayer bn;
  Var operator()(Var x, Mode mode) const { return relu(bn(conv(x), mode)); }
};

ConvBnRelu add_conv_bn_relu(Model& m, const std::string& name, std::size_t in, std::size_t out,
                            Rng& rng) {
  ConvBnRelu c{add_conv(m, name + ".conv", in, out, 3, 1, 1, rng),
               add_batch_norm(m, name + ".bn", out)};
  m.describe(name + ": conv3x3 " + std::to_string(in) + "->" + std::to_string(out) +
             " + BN + ReLU");
  return c;
}

}  // namespace

Model build_unet(const BlockConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  Rng rng(seed);
  const std::size_t levels = config.levels;
  m.describe("U-Net levels=" + std::to_string(levels) + " base=" +
             std::to_string(config.base_channels) + " growth=" + std::to_string(config.growth) +
             " ddb=" + config.ddb_label());

  std::vector<std::size_t> width(levels + 1);
  for (std::size_t l = 0; l <= levels; ++l) width[l] = config.base_channels << l;

  const ConvBnRelu stem = add_conv_bn_relu(m, "stem", 1, width[0], rng);
  std::vector<ResidualDenseBlock> rdb;
  std::vector<ConvBnRelu> down;
  for (std::size_t l = 0; l < levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    rdb.push_back(add_deformable_rdb(m, p + ".rdb", width[l], config.growth,
                                     config.ddb_positions, rng));
    m.describe(p + ".pool: max 2x2");
    down.push_back(add_conv_bn_relu(m, p + ".down", width[l], width[l + 1], rng));
  }
  const ConvBnRelu bottleneck = add_conv_bn_relu(m, "bottleneck", width[levels],
                                                 width[levels], rng);
  std::vector<ConvBnRelu> up(levels), fuse(levels);
  for (std::size_t l = levels; l-- > 0;) {
    const std::string p = "dec" + std::to_string(l);
    m.describe(p + ".up: nearest 2x upsample");
    up[l] = add_conv_bn_relu(m, p + ".up", width[l + 1], width[l], rng);
    fuse[l] = add_conv_bn_relu(m, p + ".fuse", 2 * width[l], width[l], rng);
  }
  ConvLayer head = add_conv(m, "head", width[0], 1, 1, 1, 0, rng);
  // Start from a low nodule prior; positives are a small pixel fraction.
  (*head.bias)[0] = -2.0;
  m.describe("head: conv1x1 " + std::to_string(width[0]) + "->1 + sigmoid");

  const std::size_t factor = std::size_t{1} << levels;
  m.set_forward([=](Graph&, Var x, Mode mode) {
    const Shape s = x.shape();
    if (s.size() != 4 || s[1] != 1) {
      throw ShapeError("unet: expected [N,1,H,W], got " + shape_str(s));
    }
    if (s[2] % factor || s[3] % factor) {
      throw ShapeError("unet: spatial extents " + shape_str(s) + " not divisible by " +
                       std::to_string(factor));
    }
    Var h = stem(x, mode);
    std::vector<Var> skips;
    for (std::size_t l = 0; l < levels; ++l) {
      h = deformable_rdb(h, rdb[l], mode);
      skips.push_back(h);
      h = down[l](max_pool2d(h, 2), mode);
    }
    h = bottleneck(h, mode);
    for (std::size_t l = levels; l-- > 0;) {
      h = up[l](upsample_nearest2x(h), mode);
      const Var parts[] = {skips[l], h};
      h = fuse[l](concat(parts), mode);
    }
    return sigmoid(head(h));
  });
  return m;
}

Model build_fpr_cnn(const FprConfig& config, std::uint64_t seed) {
  if (config.patch < 8 || config.patch % 4 != 0) {
    throw std::invalid_argument("fpr cnn: patch size must be a multiple of 4 and >= 8");
  }
  Model m;
  Rng rng(seed);
  m.describe("FPR-CNN patch=" + std::to_string(config.patch));
  const ConvBnRelu stem = add_conv_bn_relu(m, "stem", 1, config.channels, rng);
  m.describe("pool: max 2x2");
  const DenseBlock db1 = add_dense_block(m, "db1", config.channels, config.growth, false, rng);
  const DenseBlock db2 =
      add_dense_block(m, "db2", db1.out_channels(), config.growth, false, rng);
  const std::size_t features = 2 * db2.out_channels();
  m.describe("dual_pool: global max + central-crop max -> " + std::to_string(features));
  Tensor fc_w(Shape{2, features});
  const double sd = std::sqrt(1.0 / static_cast<double>(features));
  for (double& v : fc_w.data()) v = sd * rng.normal();
  Tensor* w = &m.add_parameter("fc.weight", std::move(fc_w));
  Tensor* b = &m.add_parameter("fc.bias", Tensor::zeros({2}));
  m.describe("fc: linear " + std::to_string(features) + "->2");

  const std::size_t patch = config.patch;
  m.set_forward([=](Graph& g, Var x, Mode mode) {
    const Shape s = x.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != patch || s[3] != patch) {
      throw ShapeError("fpr cnn: expected [N,1," + std::to_string(patch) + "," +
                       std::to_string(patch) + "], got " + shape_str(s));
    }
    Var h = max_pool2d(stem(x, mode), 2);
    h = dense_block(h, db1, mode);
    h = dense_block(h, db2, mode);
    return linear(dual_pool_head(h), g.parameter(*w), g.parameter(*b));
  });
  return m;
}

}  // namespace dspl::nn
