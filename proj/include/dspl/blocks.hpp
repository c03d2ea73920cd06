#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "dspl/graph.hpp"
#include "dspl/model.hpp"
#include "dspl/ops.hpp"
#include "dspl/rng.hpp"

namespace dspl::nn {

inline constexpr int kRdbBlocks = 6;

/// Layout of the residual dense blocks and the detector U-Net.
struct BlockConfig {
  std::size_t in_channels = 16;
  std::size_t growth = 16;
  /// 1-based positions (within the six blocks of an RDB) that use a
  /// deformable first convolution.
  std::set<int> ddb_positions;
  std::size_t levels = 3;
  std::size_t base_channels = 16;

  void validate() const;
  /// "Non-DDB", "1-DDB", "1,2-DDB", ...
  std::string ddb_label() const;
};

/// Parses "", "none", "1,2" ... into a position set.
std::set<int> parse_ddb_positions(const std::string& text);

struct ConvLayer {
  Tensor* weight = nullptr;
  Tensor* bias = nullptr;
  int stride = 1;
  int padding = 0;
  Var operator()(Var x) const;
};

struct BatchNormLayer {
  Tensor* gamma = nullptr;
  Tensor* beta = nullptr;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  Var operator()(Var x, Mode mode) const;
};

/// conv3x3 -> BN -> ReLU -> conv3x3 -> BN -> ReLU, concatenated onto the
/// input. When `offset_weight` is set the first convolution is deformable.
struct DenseBlock {
  ConvLayer conv1;
  Tensor* offset_weight = nullptr;
  Tensor* offset_bias = nullptr;
  BatchNormLayer bn1;
  ConvLayer conv2;
  BatchNormLayer bn2;
  std::size_t in_channels = 0;
  std::size_t growth = 0;

  bool deformable() const { return offset_weight != nullptr; }
  std::size_t out_channels() const { return in_channels + growth; }
};

struct ResidualDenseBlock {
  std::vector<DenseBlock> blocks;
  ConvLayer projection;
};

/// He-normal weights, zero bias.
ConvLayer add_conv(Model& m, const std::string& name, std::size_t in, std::size_t out,
                   std::size_t kernel, int stride, int padding, Rng& rng);
BatchNormLayer add_batch_norm(Model& m, const std::string& name, std::size_t channels);
/// Offset predictors start at zero and draw nothing from `rng`, so a
/// deformable variant shares every main weight with its plain twin.
DenseBlock add_dense_block(Model& m, const std::string& name, std::size_t in, std::size_t growth,
                           bool deformable, Rng& rng);
ResidualDenseBlock add_deformable_rdb(Model& m, const std::string& name, std::size_t channels,
                                      std::size_t growth, const std::set<int>& ddb_positions,
                                      Rng& rng);

Var dense_block(Var x, const DenseBlock& p, Mode mode);
Var deformable_dense_block(Var x, const DenseBlock& p, Mode mode);
/// out = x + proj(block6(...block1(x))).
Var deformable_rdb(Var x, const ResidualDenseBlock& p, Mode mode);

/// [N,C,H,W] -> [N,2C]: global max pool, then max pool of the central
/// H/2 x W/2 crop.
Var dual_pool_head(Var features);

/// Stage-1 detector: per-pixel nodule probability map, same extent as the
/// input. Input extents must be divisible by 2^levels.
Model build_unet(const BlockConfig& config, std::uint64_t seed);

struct FprConfig {
  std::size_t patch = 32;
  std::size_t channels = 8;
  std::size_t growth = 8;
};

/// Stage-2 false-positive reducer: [N,1,patch,patch] -> [N,2] logits.
Model build_fpr_cnn(const FprConfig& config, std::uint64_t seed);

}  // namespace dspl::nn
