#include "dspl/deform_conv.hpp"

#include <array>
#include <cmath>
#include <string>

#include "dspl/ops.hpp"
#include "gemm.hpp"

namespace dspl {

namespace {

using detail::cmat;
using detail::mat;

// Bilinear footprint of one fractional point: four lattice neighbours in
// the order (y0,x0), (y0,x0+1), (y0+1,x0), (y0+1,x0+1). Invalid neighbours
// carry index -1 and are skipped by every consumer.
struct Footprint {
  std::array<long, 4> idx;
  std::array<double, 4> w;
  std::array<double, 4> dwy;
  std::array<double, 4> dwx;
};

Footprint footprint(double y, double x, long h, long w) {
  Footprint f{{-1, -1, -1, -1}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}};
  if (!(y > -2.0 && y < static_cast<double>(h) + 1.0 && x > -2.0 &&
        x < static_cast<double>(w) + 1.0)) {
    return f;
  }
  const double fy = std::floor(y), fx = std::floor(x);
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double ly = y - fy, lx = x - fx;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  const std::array<long, 4> ys{y0, y0, y0 + 1, y0 + 1};
  const std::array<long, 4> xs{x0, x0 + 1, x0, x0 + 1};
  f.w = {hy * hx, hy * lx, ly * hx, ly * lx};
  f.dwy = {-hx, -lx, hx, lx};
  f.dwx = {-hy, hy, -ly, ly};
  for (int k = 0; k < 4; ++k) {
    if (ys[k] >= 0 && ys[k] < h && xs[k] >= 0 && xs[k] < w) f.idx[k] = ys[k] * w + xs[k];
  }
  return f;
}

struct DeformDims {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
  std::size_t taps() const { return kh * kw; }
  std::size_t plane() const { return ho * wo; }
  std::size_t col_rows() const { return cin * kh * kw; }
};

template <class Fn>
void for_each_sample(const DeformDims& d, const double* off, Fn&& fn) {
  const std::size_t P = d.plane();
  for (std::size_t i = 0; i < d.kh; ++i) {
    for (std::size_t j = 0; j < d.kw; ++j) {
      const std::size_t k = i * d.kw + j;
      const double* oy_map = off + (2 * k) * P;
      const double* ox_map = off + (2 * k + 1) * P;
      for (std::size_t oy = 0; oy < d.ho; ++oy) {
        for (std::size_t ox = 0; ox < d.wo; ++ox) {
          const std::size_t p = oy * d.wo + ox;
          const double y = static_cast<double>(static_cast<long>(oy) * d.stride - d.pad +
                                               static_cast<long>(i)) + oy_map[p];
          const double x = static_cast<double>(static_cast<long>(ox) * d.stride - d.pad +
                                               static_cast<long>(j)) + ox_map[p];
          fn(k, p, footprint(y, x, static_cast<long>(d.h), static_cast<long>(d.w)));
        }
      }
    }
  }
}

// cols[(c*K + k)*P + p] = x_c(p0 + pn + dpn), bilinear.
void deform_im2col(const double* x, const double* off, const DeformDims& d, double* cols) {
  const std::size_t K = d.taps(), P = d.plane(), HW = d.h * d.w;
  for_each_sample(d, off, [&](std::size_t k, std::size_t p, const Footprint& f) {
    for (std::size_t c = 0; c < d.cin; ++c) {
      const double* xc = x + c * HW;
      double v = 0.0;
      for (int t = 0; t < 4; ++t) {
        if (f.idx[t] >= 0) v += f.w[t] * xc[f.idx[t]];
      }
      cols[(c * K + k) * P + p] = v;
    }
  });
}

}  // namespace

std::vector<KernelTap> DeformableConvSpec::grid() const {
  std::vector<KernelTap> r;
  const int ch = static_cast<int>(kernel_h()) / 2, cw = static_cast<int>(kernel_w()) / 2;
  for (int i = 0; i < static_cast<int>(kernel_h()); ++i) {
    for (int j = 0; j < static_cast<int>(kernel_w()); ++j) r.push_back({i - ch, j - cw});
  }
  return r;
}

void DeformableConvSpec::validate() const {
  if (weight.rank() != 4) throw ShapeError("deformable spec: weight must be [Cout,Cin,kh,kw]");
  if (kernel_h() % 2 == 0 || kernel_w() % 2 == 0) {
    throw ShapeError("deformable spec: kernel extents must be odd");
  }
  if (bias.numel() != out_channels()) throw ShapeError("deformable spec: bias size mismatch");
  const Shape expect{2 * taps(), in_channels(), kernel_h(), kernel_w()};
  if (offset_weight.shape() != expect) {
    throw ShapeError("deformable spec: offset_weight must be " + shape_str(expect) + ", got " +
                     shape_str(offset_weight.shape()));
  }
  if (offset_bias.numel() != 2 * taps()) {
    throw ShapeError("deformable spec: offset_bias must have 2*|R| entries");
  }
  if (stride < 1 || padding < 0) throw std::invalid_argument("deformable spec: bad stride/padding");
}

DeformableConvSpec DeformableConvSpec::create(std::size_t in_channels, std::size_t out_channels,
                                              std::size_t kernel, int stride, int padding,
                                              Rng& rng) {
  DeformableConvSpec s;
  s.weight = Tensor(Shape{out_channels, in_channels, kernel, kernel});
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in_channels * kernel * kernel));
  for (double& v : s.weight.data()) v = std_dev * rng.normal();
  s.bias = Tensor::zeros({out_channels});
  s.offset_weight = Tensor::zeros({2 * kernel * kernel, in_channels, kernel, kernel});
  s.offset_bias = Tensor::zeros({2 * kernel * kernel});
  s.stride = stride;
  s.padding = padding;
  s.validate();
  return s;
}

BilinearSample bilinear_sample(const Tensor& map, double y, double x) {
  if (map.rank() != 3) throw ShapeError("bilinear_sample: map must be [C,H,W]");
  if (!std::isfinite(y) || !std::isfinite(x)) {
    throw NumericError("bilinear_sample: non-finite sampling point");
  }
  map.check_finite("bilinear_sample");
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  const Footprint f = footprint(y, x, static_cast<long>(h), static_cast<long>(w));
  BilinearSample s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0),
                   std::vector<double>(c, 0.0), {}};
  if (f.idx == std::array<long, 4>{-1, -1, -1, -1}) return s;
  const long y0 = static_cast<long>(std::floor(y)), x0 = static_cast<long>(std::floor(x));
  for (int t = 0; t < 4; ++t) {
    s.taps.push_back({y0 + t / 2, x0 + t % 2, f.idx[t] >= 0 ? f.w[t] : 0.0});
    if (f.idx[t] < 0) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = map[ch * h * w + static_cast<std::size_t>(f.idx[t])];
      s.value[ch] += f.w[t] * v;
      s.d_dy[ch] += f.dwy[t] * v;
      s.d_dx[ch] += f.dwx[t] * v;
    }
  }
  return s;
}

Var deform_conv2d(Var input, Var weight, std::optional<Var> bias, Var offsets, int stride,
                  int padding) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& off = offsets.value();
  if (input.graph != weight.graph || input.graph != offsets.graph) {
    throw std::logic_error("deform_conv2d: operands on different graphs");
  }
  if (x.rank() != 4 || w.rank() != 4 || off.rank() != 4) {
    throw ShapeError("deform_conv2d: input, weight and offsets must be rank 4");
  }
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument("deform_conv2d: stride must be >= 1 and padding >= 0");
  }
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) {
    throw ShapeError("deform_conv2d: kernel extents must be odd");
  }
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("deform_conv2d: input has " + std::to_string(x.dim(1)) +
                     " channels, weight expects " + std::to_string(w.dim(1)));
  }
  x.check_finite("deform_conv2d input");
  off.check_finite("deform_conv2d offsets");
  DeformDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0,
               stride, padding};
  d.ho = conv_out_extent(d.h, d.kh, stride, padding);
  d.wo = conv_out_extent(d.w, d.kw, stride, padding);
  const Shape off_expect{d.n, 2 * d.taps(), d.ho, d.wo};
  if (off.shape() != off_expect) {
    throw ShapeError("deform_conv2d: offsets must be " + shape_str(off_expect) + ", got " +
                     shape_str(off.shape()));
  }
  if (bias && bias->value().numel() != d.cout) {
    throw ShapeError("deform_conv2d: bias size mismatch");
  }

  const auto K = static_cast<Eigen::Index>(d.col_rows());
  const auto P = static_cast<Eigen::Index>(d.plane());
  const auto Co = static_cast<Eigen::Index>(d.cout);
  const std::size_t in_stride = d.cin * d.h * d.w, off_stride = 2 * d.taps() * d.plane();
  Tensor out(Shape{d.n, d.cout, d.ho, d.wo});
  std::vector<double> cols(d.col_rows() * d.plane());
  const auto W = cmat(w.data().data(), Co, K);
  for (std::size_t n = 0; n < d.n; ++n) {
    deform_im2col(x.data().data() + n * in_stride, off.data().data() + n * off_stride, d,
                  cols.data());
    auto Y = mat(out.data().data() + n * d.cout * d.plane(), Co, P);
    Y.noalias() = W * cmat(cols.data(), K, P);
    if (bias) {
      for (Eigen::Index c = 0; c < Co; ++c) Y.row(c).array() += bias->value()[c];
    }
  }

  std::vector<NodeId> ins{input.id, weight.id, offsets.id};
  if (bias) ins.push_back(bias->id);
  const NodeId xi = input.id, wi = weight.id, oi = offsets.id;
  const std::optional<NodeId> bi = bias ? std::optional<NodeId>(bias->id) : std::nullopt;
  return input.graph->record(
      OpKind::DeformConv2d, std::move(ins), std::move(out),
      [=](Graph& g, NodeId self) {
        const auto K = static_cast<Eigen::Index>(d.col_rows());
        const auto P = static_cast<Eigen::Index>(d.plane());
        const auto Co = static_cast<Eigen::Index>(d.cout);
        const auto gy = g.grad(self);
        const Tensor& x = g.value(xi);
        const Tensor& w = g.value(wi);
        const Tensor& off = g.value(oi);
        const bool need_x = g.requires_grad(xi);
        const bool need_w = g.requires_grad(wi);
        const bool need_off = g.requires_grad(oi);
        double* dx = need_x ? g.grad(xi).data() : nullptr;
        double* dw = need_w ? g.grad(wi).data() : nullptr;
        double* doff = need_off ? g.grad(oi).data() : nullptr;
        std::vector<double> cols(need_w ? d.col_rows() * d.plane() : 0);
        std::vector<double> dcols(d.col_rows() * d.plane());
        const auto W = cmat(w.data().data(), Co, K);
        const std::size_t KT = d.taps(), PP = d.plane(), HW = d.h * d.w;
        for (std::size_t n = 0; n < d.n; ++n) {
          const double* xn = x.data().data() + n * in_stride;
          const double* offn = off.data().data() + n * off_stride;
          const auto GY = cmat(gy.data() + n * d.cout * PP, Co, P);
          if (need_w) {
            deform_im2col(xn, offn, d, cols.data());
            mat(dw, Co, K).noalias() += GY * cmat(cols.data(), K, P).transpose();
          }
          if (!need_x && !need_off) continue;
          mat(dcols.data(), K, P).noalias() = W.transpose() * GY;
          double* dxn = need_x ? dx + n * in_stride : nullptr;
          double* doffn = need_off ? doff + n * off_stride : nullptr;
          for_each_sample(d, offn, [&](std::size_t k, std::size_t p, const Footprint& f) {
            double gdy = 0.0, gdx = 0.0;
            for (std::size_t c = 0; c < d.cin; ++c) {
              const double gc = dcols[(c * KT + k) * PP + p];
              const double* xc = xn + c * HW;
              for (int t = 0; t < 4; ++t) {
                if (f.idx[t] < 0) continue;
                if (dxn) dxn[c * HW + static_cast<std::size_t>(f.idx[t])] += f.w[t] * gc;
                gdy += f.dwy[t] * xc[f.idx[t]] * gc;
                gdx += f.dwx[t] * xc[f.idx[t]] * gc;
              }
            }
            if (doffn) {
              doffn[(2 * k) * PP + p] += gdy;
              doffn[(2 * k + 1) * PP + p] += gdx;
            }
          });
        }
        if (bi && g.requires_grad(*bi)) {
          auto db = g.grad(*bi);
          for (std::size_t n = 0; n < d.n; ++n) {
            for (std::size_t c = 0; c < d.cout; ++c) {
              const double* row = gy.data() + (n * d.cout + c) * PP;
              double s = 0.0;
              for (std::size_t p = 0; p < PP; ++p) s += row[p];
              db[c] += s;
            }
          }
        }
      });
}

Var deform_conv2d(Var input, DeformableConvSpec& spec, Var offsets) {
  spec.validate();
  Graph& g = *input.graph;
  return deform_conv2d(input, g.parameter(spec.weight), g.parameter(spec.bias), offsets,
                       spec.stride, spec.padding);
}

Var offset_predictor(Var input, DeformableConvSpec& spec) {
  spec.validate();
  Graph& g = *input.graph;
  return conv2d(input, g.parameter(spec.offset_weight), g.parameter(spec.offset_bias),
                spec.stride, spec.padding);
}

}  // namespace dspl
