#pragma once

#include <optional>
#include <vector>

#include "dspl/graph.hpp"
#include "dspl/rng.hpp"
#include "dspl/tensor.hpp"

namespace dspl {

/// One position p_n of the regular sampling grid R, relative to the window
/// center.
struct KernelTap {
  int dy;
  int dx;
  bool operator==(const KernelTap&) const = default;
};

/// Weights and geometry of a deformable convolution layer.
///
/// `offset_weight`/`offset_bias` parameterize the parallel convolution that
/// predicts one (dy, dx) displacement per kernel tap and output location.
/// Offset channel 2k holds dy and 2k+1 holds dx for tap k of `grid()`.
struct DeformableConvSpec {
  Tensor weight;         // [Cout, Cin, kh, kw]
  Tensor bias;           // [Cout]
  Tensor offset_weight;  // [2*kh*kw, Cin, kh, kw]
  Tensor offset_bias;    // [2*kh*kw]
  int stride = 1;
  int padding = 0;

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel_h() const { return weight.dim(2); }
  std::size_t kernel_w() const { return weight.dim(3); }
  std::size_t taps() const { return kernel_h() * kernel_w(); }

  /// Row-major (dy outer) enumeration of the kh x kw grid centered at 0.
  std::vector<KernelTap> grid() const;
  void validate() const;

  /// He-normal main weights, zero bias, zero offset predictor.
  static DeformableConvSpec create(std::size_t in_channels, std::size_t out_channels,
                                   std::size_t kernel, int stride, int padding, Rng& rng);
};

/// Bilinear read of a [C,H,W] map at fractional (y, x), with partials.
struct BilinearSample {
  std::vector<double> value;
  std::vector<double> d_dy;
  std::vector<double> d_dx;
  /// The (up to) four lattice neighbours and their kernel weights G(q, p);
  /// out-of-image neighbours are listed with weight 0, and points with no
  /// in-image neighbour list none.
  struct Tap {
    long y;
    long x;
    double weight;
  };
  std::vector<Tap> taps;
};

/// value_c = sum_q G(q, p) map(c, q), G(q, p) = max(0, 1-|p_y-q_y|) max(0, 1-|p_x-q_x|).
/// Points outside [0,H-1] x [0,W-1] read zeros. Partials are one-sided
/// (right-hand) on lattice lines.
BilinearSample bilinear_sample(const Tensor& map, double y, double x);

/// y(p0) = sum_{pn in R} w(pn) x(p0 + pn + dp_n) + b.
/// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], offsets [N,2*kh*kw,H',W'].
/// Differentiable in input, weight, bias and offsets.
Var deform_conv2d(Var input, Var weight, std::optional<Var> bias, Var offsets, int stride,
                  int padding);

/// Binds the spec tensors as parameters of the input's graph.
Var deform_conv2d(Var input, DeformableConvSpec& spec, Var offsets);

/// Standard convolution with 2*|R| output channels sharing the main kernel's
/// stride and padding; produces the offset field.
Var offset_predictor(Var input, DeformableConvSpec& spec);

}  // namespace dspl
