#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dspl/graph.hpp"
#include "dspl/tensor.hpp"

namespace dspl {

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
/// Weight kept on the old running statistic per update.
inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kProbClamp = 1e-7;

/// Output extent of a strided, zero-padded window sweep.
std::size_t conv_out_extent(std::size_t in, std::size_t k, int stride, int padding);

/// y(p0) = sum_{pn in R} w(pn) x(p0 + pn) + b over a zero-padded input.
/// input [N,Cin,H,W], weight [Cout,Cin,kh,kw] with odd kh/kw, bias [Cout].
Var conv2d(Var input, Var weight, std::optional<Var> bias, int stride, int padding);

Var relu(Var x);
Var sigmoid(Var x);

/// Non-overlapping k x k max pooling; floor on ragged edges.
Var max_pool2d(Var x, int k);

/// Max over adaptive bins [floor(i*H/out), ceil((i+1)*H/out)); out_size 1
/// is a global max.
Var adaptive_max_pool(Var x, int out_size);

/// Per-channel normalization over (N, H, W) for [N,C,H,W] or over N for
/// [N,C]. Train mode normalizes with batch statistics and folds them into
/// the running buffers; eval mode uses the running buffers.
Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
               Mode mode);

/// x [N,F], weight [O,F], bias [O] -> [N,O].
Var linear(Var x, Var weight, std::optional<Var> bias);

/// sum_i w_i * CE(logits_i, label_i) / normalizer.
/// Empty `weights` means all ones; normalizer <= 0 means N.
Var softmax_cross_entropy(Var logits, std::span<const int> labels,
                          std::span<const double> weights = {}, double normalizer = 0.0);

/// Per-row cross entropy without touching any graph.
std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const int> labels);
/// Row-wise softmax of a [N,K] tensor.
Tensor softmax(const Tensor& logits);

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var sum(Var x);
Var scale(Var x, double s);

/// Concatenation along dimension 1; all other extents must agree.
Var concat(std::span<const Var> parts);

Var upsample_nearest2x(Var x);
Var center_crop(Var x, std::size_t h, std::size_t w);
Var flatten(Var x);

/// Mean binary cross entropy of probabilities against a {0,1} target map.
Var binary_cross_entropy(Var prob, const Tensor& target);
/// 1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s), pooled over the batch.
Var soft_dice_loss(Var prob, const Tensor& target, double smooth = 1.0);

}  // namespace dspl
