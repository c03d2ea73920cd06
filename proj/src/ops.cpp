#include "dspl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "gemm.hpp"

namespace dspl {

namespace {

using detail::cmat;
using detail::mat;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_graph(Var a, Var b, const char* op) {
  if (a.graph != b.graph) throw std::logic_error(std::string(op) + ": operands on different graphs");
}

void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

struct ConvDims {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
  std::size_t col_rows() const { return cin * kh * kw; }
  std::size_t col_cols() const { return ho * wo; }
};

// cols[(c*kh + i)*kw + j][oy*wo + ox] = x[c][oy*s - pad + i][ox*s - pad + j]
void im2col(const double* x, const ConvDims& d, double* cols) {
  const std::size_t plane = d.ho * d.wo;
  for (std::size_t c = 0; c < d.cin; ++c) {
    const double* xc = x + c * d.h * d.w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        double* row = cols + ((c * d.kh + i) * d.kw + j) * plane;
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const long iy = static_cast<long>(oy) * d.stride - d.pad + static_cast<long>(i);
          double* dst = row + oy * d.wo;
          if (iy < 0 || iy >= static_cast<long>(d.h)) {
            std::fill(dst, dst + d.wo, 0.0);
            continue;
          }
          const double* src = xc + iy * d.w;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const long ix = static_cast<long>(ox) * d.stride - d.pad + static_cast<long>(j);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(d.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvDims& d, double* dx) {
  const std::size_t plane = d.ho * d.wo;
  for (std::size_t c = 0; c < d.cin; ++c) {
    double* xc = dx + c * d.h * d.w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        const double* row = cols + ((c * d.kh + i) * d.kw + j) * plane;
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const long iy = static_cast<long>(oy) * d.stride - d.pad + static_cast<long>(i);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const long ix = static_cast<long>(ox) * d.stride - d.pad + static_cast<long>(j);
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            xc[iy * d.w + ix] += row[oy * d.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, int stride, int padding) {
  const long span = static_cast<long>(in) + 2L * padding - static_cast<long>(k);
  if (span < 0) {
    throw ShapeError("conv: kernel " + std::to_string(k) + " exceeds padded extent " +
                     std::to_string(in + 2 * padding));
  }
  return static_cast<std::size_t>(span / stride + 1);
}

Var conv2d(Var input, Var weight, std::optional<Var> bias, int stride, int padding) {
  require_same_graph(input, weight, "conv2d");
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  }
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " + shape_str(w.shape()));
  }
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) +
                     " channels, weight expects " + std::to_string(w.dim(1)));
  }
  x.check_finite("conv2d input");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0,
             stride, padding};
  d.ho = conv_out_extent(d.h, d.kh, stride, padding);
  d.wo = conv_out_extent(d.w, d.kw, stride, padding);
  if (bias) {
    require_same_graph(input, *bias, "conv2d");
    if (bias->value().numel() != d.cout) {
      throw ShapeError("conv2d: bias has " + std::to_string(bias->value().numel()) +
                       " entries, expected " + std::to_string(d.cout));
    }
  }

  const auto K = static_cast<Eigen::Index>(d.col_rows());
  const auto P = static_cast<Eigen::Index>(d.col_cols());
  const auto Co = static_cast<Eigen::Index>(d.cout);
  Tensor out(Shape{d.n, d.cout, d.ho, d.wo});
  std::vector<double> cols(d.col_rows() * d.col_cols());
  const auto W = cmat(w.data().data(), Co, K);
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(x.data().data() + n * d.cin * d.h * d.w, d, cols.data());
    auto Y = mat(out.data().data() + n * d.cout * d.ho * d.wo, Co, P);
    Y.noalias() = W * cmat(cols.data(), K, P);
    if (bias) {
      const auto& b = bias->value();
      for (Eigen::Index c = 0; c < Co; ++c) Y.row(c).array() += b[c];
    }
  }

  std::vector<NodeId> ins{input.id, weight.id};
  if (bias) ins.push_back(bias->id);
  const NodeId xi = input.id, wi = weight.id;
  const std::optional<NodeId> bi = bias ? std::optional<NodeId>(bias->id) : std::nullopt;
  return input.graph->record(
      OpKind::Conv2d, std::move(ins), std::move(out), [d, xi, wi, bi](Graph& g, NodeId self) {
        const auto K = static_cast<Eigen::Index>(d.col_rows());
        const auto P = static_cast<Eigen::Index>(d.col_cols());
        const auto Co = static_cast<Eigen::Index>(d.cout);
        const auto gy = g.grad(self);
        const Tensor& x = g.value(xi);
        const Tensor& w = g.value(wi);
        const bool need_x = g.requires_grad(xi);
        const bool need_w = g.requires_grad(wi);
        std::vector<double> cols(d.col_rows() * d.col_cols());
        std::vector<double> dcols(need_x ? cols.size() : 0);
        double* dw = need_w ? g.grad(wi).data() : nullptr;
        double* dx = need_x ? g.grad(xi).data() : nullptr;
        const auto W = cmat(w.data().data(), Co, K);
        for (std::size_t n = 0; n < d.n; ++n) {
          const auto GY = cmat(gy.data() + n * d.cout * d.ho * d.wo, Co, P);
          if (need_w) {
            im2col(x.data().data() + n * d.cin * d.h * d.w, d, cols.data());
            mat(dw, Co, K).noalias() += GY * cmat(cols.data(), K, P).transpose();
          }
          if (need_x) {
            mat(dcols.data(), K, P).noalias() = W.transpose() * GY;
            col2im_add(dcols.data(), d, dx + n * d.cin * d.h * d.w);
          }
        }
        if (bi && g.requires_grad(*bi)) {
          auto db = g.grad(*bi);
          for (std::size_t n = 0; n < d.n; ++n) {
            for (std::size_t c = 0; c < d.cout; ++c) {
              const double* row = gy.data() + (n * d.cout + c) * d.ho * d.wo;
              double s = 0.0;
              for (std::size_t p = 0; p < d.ho * d.wo; ++p) s += row[p];
              db[c] += s;
            }
          }
        }
      });
}

Var relu(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  const NodeId xi = x.id;
  return x.graph->record(OpKind::Relu, {xi}, std::move(out), [xi](Graph& g, NodeId self) {
    const auto gy = g.grad(self);
    const Tensor& in = g.value(xi);
    auto gx = g.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (in[i] > 0.0) gx[i] += gy[i];
    }
  });
}

Var sigmoid(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) {
    const double v = in[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  const NodeId xi = x.id;
  return x.graph->record(OpKind::Sigmoid, {xi}, std::move(out), [xi](Graph& g, NodeId self) {
    const auto gy = g.grad(self);
    const Tensor& y = g.value(self);
    auto gx = g.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
  });
}

namespace {

// Shared by the fixed-window and adaptive pools: out[n,c,oy,ox] is the max
// over rows [y0(oy), y1(oy)) x cols [x0(ox), x1(ox)).
template <class RowBounds, class ColBounds>
Var window_max(Var x, std::size_t ho, std::size_t wo, RowBounds rows, ColBounds cols, OpKind kind) {
  const Tensor& in = x.value();
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor out(Shape{n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  std::size_t o = 0;
  for (std::size_t b = 0; b < n * c; ++b) {
    const std::size_t base = b * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const auto [y0, y1] = rows(oy);
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        const auto [x0, x1] = cols(ox);
        std::size_t best = base + y0 * w + x0;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) {
            const std::size_t idx = base + yy * w + xx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        out[o] = in[best];
        (*argmax)[o] = best;
      }
    }
  }
  const NodeId xi = x.id;
  return x.graph->record(kind, {xi}, std::move(out), [xi, argmax](Graph& g, NodeId self) {
    const auto gy = g.grad(self);
    auto gx = g.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[(*argmax)[i]] += gy[i];
  });
}

}  // namespace

Var max_pool2d(Var x, int k) {
  const Tensor& in = x.value();
  require_rank(in, 4, "max_pool2d");
  if (k < 1) throw std::invalid_argument("max_pool2d: window must be >= 1");
  const auto ku = static_cast<std::size_t>(k);
  if (ku > in.dim(2) || ku > in.dim(3)) {
    throw ShapeError("max_pool2d: window " + std::to_string(k) + " larger than input " +
                     shape_str(in.shape()));
  }
  auto bounds = [ku](std::size_t o) { return std::pair{o * ku, o * ku + ku}; };
  return window_max(x, in.dim(2) / ku, in.dim(3) / ku, bounds, bounds, OpKind::MaxPool2d);
}

Var adaptive_max_pool(Var x, int out_size) {
  const Tensor& in = x.value();
  require_rank(in, 4, "adaptive_max_pool");
  if (out_size < 1) throw std::invalid_argument("adaptive_max_pool: output size must be >= 1");
  const auto os = static_cast<std::size_t>(out_size);
  const std::size_t h = in.dim(2), w = in.dim(3);
  if (os > h || os > w) {
    throw ShapeError("adaptive_max_pool: output " + std::to_string(out_size) +
                     " larger than input " + shape_str(in.shape()));
  }
  auto make = [os](std::size_t extent) {
    return [os, extent](std::size_t o) {
      return std::pair{(o * extent) / os, ((o + 1) * extent + os - 1) / os};
    };
  };
  return window_max(x, os, os, make(h), make(w), OpKind::AdaptiveMaxPool);
}

Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, Mode mode) {
  const Tensor& in = x.value();
  if (in.rank() != 4 && in.rank() != 2) {
    throw ShapeError("batch_norm: expected [N,C,H,W] or [N,C], got " + shape_str(in.shape()));
  }
  const std::size_t n = in.dim(0), c = in.dim(1);
  const std::size_t inner = in.rank() == 4 ? in.dim(2) * in.dim(3) : 1;
  if (gamma.value().numel() != c || beta.value().numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw ShapeError("batch_norm: per-channel parameters must have " + std::to_string(c) +
                     " entries");
  }
  const double count = static_cast<double>(n * inner);
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (mode == Mode::Train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = in.data().data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      mean[ch] = s / count;
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = in.data().data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) v += (p[i] - mean[ch]) * (p[i] - mean[ch]);
      }
      var[ch] = v / count;
      const double unbiased = count > 1.0 ? v / (count - 1.0) : var[ch];
      running_mean[ch] = kBatchNormMomentum * running_mean[ch] + (1.0 - kBatchNormMomentum) * mean[ch];
      running_var[ch] = kBatchNormMomentum * running_var[ch] + (1.0 - kBatchNormMomentum) * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      var[ch] = running_var[ch];
    }
  }
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + kBatchNormEps);

  auto xhat = std::make_shared<Tensor>(in.shape());
  Tensor out(in.shape());
  const Tensor& ga = gamma.value();
  const Tensor& be = beta.value();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double h = (in[off + i] - mean[ch]) * inv_std[ch];
        (*xhat)[off + i] = h;
        out[off + i] = ga[ch] * h + be[ch];
      }
    }
  }

  const NodeId xi = x.id, gi = gamma.id, bi = beta.id;
  const bool train = mode == Mode::Train;
  return x.graph->record(
      OpKind::BatchNorm, {xi, gi, bi}, std::move(out),
      [=, inv_std = std::move(inv_std)](Graph& g, NodeId self) {
        const auto gy = g.grad(self);
        const Tensor& ga = g.value(gi);
        std::vector<double> sum_gy(c, 0.0), sum_gy_xhat(c, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_gy[ch] += gy[off + i];
              sum_gy_xhat[ch] += gy[off + i] * (*xhat)[off + i];
            }
          }
        }
        if (g.requires_grad(gi)) accumulate(g.grad(gi), sum_gy_xhat);
        if (g.requires_grad(bi)) accumulate(g.grad(bi), sum_gy);
        if (!g.requires_grad(xi)) return;
        auto gx = g.grad(xi);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * inner;
            const double k = ga[ch] * inv_std[ch];
            for (std::size_t i = 0; i < inner; ++i) {
              if (train) {
                gx[off + i] += k * (gy[off + i] - sum_gy[ch] / count -
                                    (*xhat)[off + i] * sum_gy_xhat[ch] / count);
              } else {
                gx[off + i] += k * gy[off + i];
              }
            }
          }
        }
      });
}

Var linear(Var x, Var weight, std::optional<Var> bias) {
  require_same_graph(x, weight, "linear");
  const Tensor& in = x.value();
  const Tensor& w = weight.value();
  require_rank(in, 2, "linear input");
  require_rank(w, 2, "linear weight");
  if (w.dim(1) != in.dim(1)) {
    throw ShapeError("linear: input " + shape_str(in.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const auto N = static_cast<Eigen::Index>(in.dim(0));
  const auto F = static_cast<Eigen::Index>(in.dim(1));
  const auto O = static_cast<Eigen::Index>(w.dim(0));
  if (bias && bias->value().numel() != w.dim(0)) {
    throw ShapeError("linear: bias size mismatch");
  }
  Tensor out(Shape{in.dim(0), w.dim(0)});
  auto Y = mat(out.data().data(), N, O);
  Y.noalias() = cmat(in.data().data(), N, F) * cmat(w.data().data(), O, F).transpose();
  if (bias) {
    for (Eigen::Index r = 0; r < N; ++r) {
      for (Eigen::Index o = 0; o < O; ++o) Y(r, o) += bias->value()[o];
    }
  }
  std::vector<NodeId> ins{x.id, weight.id};
  if (bias) ins.push_back(bias->id);
  const NodeId xi = x.id, wi = weight.id;
  const std::optional<NodeId> bi = bias ? std::optional<NodeId>(bias->id) : std::nullopt;
  return x.graph->record(OpKind::Linear, std::move(ins), std::move(out),
                         [=](Graph& g, NodeId self) {
                           const auto GY = cmat(g.grad(self).data(), N, O);
                           if (g.requires_grad(xi)) {
                             mat(g.grad(xi).data(), N, F).noalias() +=
                                 GY * cmat(g.value(wi).data().data(), O, F);
                           }
                           if (g.requires_grad(wi)) {
                             mat(g.grad(wi).data(), O, F).noalias() +=
                                 GY.transpose() * cmat(g.value(xi).data().data(), N, F);
                           }
                           if (bi && g.requires_grad(*bi)) {
                             auto db = g.grad(*bi);
                             for (Eigen::Index r = 0; r < N; ++r) {
                               for (Eigen::Index o = 0; o < O; ++o) db[o] += GY(r, o);
                             }
                           }
                         });
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* z = logits.data().data() + r * k;
    const double m = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = std::exp(z[j] - m) / s;
  }
  return out;
}

std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: one label per row required");
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[r]) +
                              " outside [0," + std::to_string(k) + ")");
    }
    const double* z = logits.data().data() + r * k;
    const double m = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
    out[r] = m + std::log(s) - z[labels[r]];
  }
  return out;
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> weights,
                          double normalizer) {
  const Tensor& z = logits.value();
  const std::vector<double> ce = cross_entropy_per_sample(z, labels);
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (!weights.empty() && weights.size() != n) {
    throw ShapeError("softmax_cross_entropy: one weight per row required");
  }
  const double norm = normalizer > 0.0 ? normalizer : static_cast<double>(n);
  std::vector<double> w(n, 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) total += w[r] * ce[r];
  std::vector<int> lab(labels.begin(), labels.end());
  const NodeId zi = logits.id;
  return logits.graph->record(
      OpKind::SoftmaxCrossEntropy, {zi}, Tensor::scalar(total / norm),
      [=, w = std::move(w), lab = std::move(lab)](Graph& g, NodeId self) {
        const double gy = g.grad(self)[0];
        const Tensor p = softmax(g.value(zi));
        auto gz = g.grad(zi);
        for (std::size_t r = 0; r < n; ++r) {
          const double s = gy * w[r] / norm;
          for (std::size_t j = 0; j < k; ++j) {
            const double onehot = static_cast<int>(j) == lab[r] ? 1.0 : 0.0;
            gz[r * k + j] += s * (p[r * k + j] - onehot);
          }
        }
      });
}

Var add(Var a, Var b) {
  require_same_graph(a, b, "add");
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  const NodeId ai = a.id, bi = b.id;
  return a.graph->record(OpKind::Add, {ai, bi}, std::move(out), [ai, bi](Graph& g, NodeId self) {
    const auto gy = g.grad(self);
    if (g.requires_grad(ai)) accumulate(g.grad(ai), gy);
    if (g.requires_grad(bi)) accumulate(g.grad(bi), gy);
  });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b, "mul");
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  const NodeId ai = a.id, bi = b.id;
  return a.graph->record(OpKind::Mul, {ai, bi}, std::move(out), [ai, bi](Graph& g, NodeId self) {
    const auto gy = g.grad(self);
    // Read both operands before writing: a and b may be the same node.
    const Tensor& av = g.value(ai);
    const Tensor& bv = g.value(bi);
    if (g.requires_grad(ai)) {
      auto ga = g.grad(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(bi)) {
      auto gb = g.grad(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const NodeId xi = x.id;
  return x.graph->record(OpKind::Sum, {xi}, Tensor::scalar(s), [xi](Graph& g, NodeId self) {
    const double gy = g.grad(self)[0];
    for (double& v : g.grad(xi)) v += gy;
  });
}

Var scale(Var x, double s) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = s * x.value()[i];
  const NodeId xi = x.id;
  return x.graph->record(OpKind::Scale, {xi}, std::move(out), [xi, s](Graph& g, NodeId self) {
    const auto gy = g.grad(self);
    auto gx = g.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * gy[i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  const Shape& s0 = parts[0].shape();
  if (s0.size() < 2) throw ShapeError("concat: operands need rank >= 2");
  std::size_t inner = 1;
  for (std::size_t d = 2; d < s0.size(); ++d) inner *= s0[d];
  std::vector<std::size_t> widths;
  std::size_t total_c = 0;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (s.size() != s0.size() || s[0] != s0[0] ||
        !std::equal(s.begin() + 2, s.end(), s0.begin() + 2)) {
      throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
    }
    widths.push_back(s[1]);
    total_c += s[1];
  }
  Shape os = s0;
  os[1] = total_c;
  Tensor out(os);
  const std::size_t n = s0[0];
  std::vector<NodeId> ids;
  std::size_t c_off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(v.data().data() + b * widths[k] * inner, widths[k] * inner,
                  out.data().data() + (b * total_c + c_off) * inner);
    }
    c_off += widths[k];
    ids.push_back(parts[k].id);
  }
  return parts[0].graph->record(
      OpKind::Concat, ids, std::move(out),
      [ids, widths, n, inner, total_c](Graph& g, NodeId self) {
        const auto gy = g.grad(self);
        std::size_t c_off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (g.requires_grad(ids[k])) {
            auto gx = g.grad(ids[k]);
            for (std::size_t b = 0; b < n; ++b) {
              const double* src = gy.data() + (b * total_c + c_off) * inner;
              double* dst = gx.data() + b * widths[k] * inner;
              for (std::size_t i = 0; i < widths[k] * inner; ++i) dst[i] += src[i];
            }
          }
          c_off += widths[k];
        }
      });
}

Var upsample_nearest2x(Var x) {
  const Tensor& in = x.value();
  require_rank(in, 4, "upsample");
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor out(Shape{n, c, 2 * h, 2 * w});
  for (std::size_t b = 0; b < n * c; ++b) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) {
        out[(b * 2 * h + y) * 2 * w + xx] = in[(b * h + y / 2) * w + xx / 2];
      }
    }
  }
  const NodeId xi = x.id;
  return x.graph->record(OpKind::Upsample, {xi}, std::move(out),
                         [xi, n, c, h, w](Graph& g, NodeId self) {
                           const auto gy = g.grad(self);
                           auto gx = g.grad(xi);
                           for (std::size_t b = 0; b < n * c; ++b) {
                             for (std::size_t y = 0; y < 2 * h; ++y) {
                               for (std::size_t xx = 0; xx < 2 * w; ++xx) {
                                 gx[(b * h + y / 2) * w + xx / 2] +=
                                     gy[(b * 2 * h + y) * 2 * w + xx];
                               }
                             }
                           }
                         });
}

Var center_crop(Var x, std::size_t ch, std::size_t cw) {
  const Tensor& in = x.value();
  require_rank(in, 4, "center_crop");
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  if (ch == 0 || cw == 0 || ch > h || cw > w) {
    throw ShapeError("center_crop: window " + std::to_string(ch) + "x" + std::to_string(cw) +
                     " does not fit " + shape_str(in.shape()));
  }
  const std::size_t y0 = (h - ch) / 2, x0 = (w - cw) / 2;
  Tensor out(Shape{n, c, ch, cw});
  for (std::size_t b = 0; b < n * c; ++b) {
    for (std::size_t y = 0; y < ch; ++y) {
      std::copy_n(in.data().data() + (b * h + y0 + y) * w + x0, cw,
                  out.data().data() + (b * ch + y) * cw);
    }
  }
  const NodeId xi = x.id;
  return x.graph->record(OpKind::CenterCrop, {xi}, std::move(out),
                         [=](Graph& g, NodeId self) {
                           const auto gy = g.grad(self);
                           auto gx = g.grad(xi);
                           for (std::size_t b = 0; b < n * c; ++b) {
                             for (std::size_t y = 0; y < ch; ++y) {
                               for (std::size_t xx = 0; xx < cw; ++xx) {
                                 gx[(b * h + y0 + y) * w + x0 + xx] += gy[(b * ch + y) * cw + xx];
                               }
                             }
                           }
                         });
}

Var flatten(Var x) {
  Tensor out = x.value();
  const std::size_t n = out.dim(0);
  out.reshape(Shape{n, out.numel() / n});
  const NodeId xi = x.id;
  return x.graph->record(OpKind::Flatten, {xi}, std::move(out), [xi](Graph& g, NodeId self) {
    accumulate(g.grad(xi), g.grad(self));
  });
}

Var binary_cross_entropy(Var prob, const Tensor& target) {
  const Tensor& p = prob.value();
  if (p.shape() != target.shape()) {
    throw ShapeError("binary_cross_entropy: " + shape_str(p.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  const double m = static_cast<double>(p.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double pc = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    total -= target[i] * std::log(pc) + (1.0 - target[i]) * std::log(1.0 - pc);
  }
  const NodeId pi = prob.id;
  return prob.graph->record(OpKind::BinaryCrossEntropy, {pi}, Tensor::scalar(total / m),
                            [pi, m, target](Graph& g, NodeId self) {
                              const double gy = g.grad(self)[0];
                              const Tensor& p = g.value(pi);
                              auto gp = g.grad(pi);
                              for (std::size_t i = 0; i < gp.size(); ++i) {
                                if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;
                                gp[i] += gy * (p[i] - target[i]) / (p[i] * (1.0 - p[i])) / m;
                              }
                            });
}

Var soft_dice_loss(Var prob, const Tensor& target, double smooth) {
  const Tensor& p = prob.value();
  if (p.shape() != target.shape()) {
    throw ShapeError("soft_dice_loss: " + shape_str(p.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  double inter = 0.0, denom = smooth;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    inter += p[i] * target[i];
    denom += p[i] + target[i];
  }
  const double numer = 2.0 * inter + smooth;
  const NodeId pi = prob.id;
  return prob.graph->record(OpKind::SoftDice, {pi}, Tensor::scalar(1.0 - numer / denom),
                            [pi, numer, denom, target](Graph& g, NodeId self) {
                              const double gy = g.grad(self)[0];
                              auto gp = g.grad(pi);
                              for (std::size_t i = 0; i < gp.size(); ++i) {
                                gp[i] -= gy * (2.0 * target[i] * denom - numer) / (denom * denom);
                              }
                            });
}

}  // namespace dspl
