#pragma once

#include <functional>
#include <vector>

#include "dspl/gradcheck.hpp"
#include "dspl/graph.hpp"
#include "dspl/rng.hpp"
#include "dspl/tensor.hpp"

namespace dspl::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Six-loop zero-padded convolution, written for clarity only.
inline Tensor direct_conv2d(const Tensor& x, const Tensor& w, const Tensor* b, int stride,
                            int pad) {
  const long n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const long cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const long ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor y({static_cast<size_t>(n), static_cast<size_t>(cout), static_cast<size_t>(ho),
            static_cast<size_t>(wo)});
  for (long in = 0; in < n; ++in)
    for (long co = 0; co < cout; ++co)
      for (long oy = 0; oy < ho; ++oy)
        for (long ox = 0; ox < wo; ++ox) {
          double s = b ? (*b)[co] : 0.0;
          for (long ci = 0; ci < cin; ++ci)
            for (long ky = 0; ky < kh; ++ky)
              for (long kx = 0; kx < kw; ++kx) {
                const long iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                s += w.at(co, ci, ky, kx) * x.at(in, ci, iy, ix);
              }
          y.at(in, co, oy, ox) = s;
        }
  return y;
}

using LossBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Backward gradients of `build` with respect to each tensor in `ts`.
inline std::vector<Tensor> analytic_grads(const LossBuilder& build, std::vector<Tensor>& ts) {
  for (auto& t : ts) t.clear_grad();
  Graph g;
  std::vector<Var> vars;
  for (auto& t : ts) vars.push_back(g.parameter(t));
  g.backward(build(g, vars));
  std::vector<Tensor> out;
  for (auto& t : ts) {
    Tensor gt(t.shape());
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), gt.data().begin());
    out.push_back(std::move(gt));
    t.clear_grad();
  }
  return out;
}

/// Central-difference gradient of the same loss with respect to ts[k].
inline Tensor numeric_grad(const LossBuilder& build, const std::vector<Tensor>& ts, std::size_t k,
                           double eps = 1e-5) {
  auto f = [&](const Tensor& probe) {
    std::vector<Tensor> copy = ts;
    copy[k] = probe;
    Graph g;
    std::vector<Var> vars;
    for (auto& t : copy) vars.push_back(g.parameter(t));
    return build(g, vars).value()[0];
  };
  return finite_diff_grad(f, ts[k], eps);
}

/// Worst relative error over every tensor.
inline double gradcheck(const LossBuilder& build, std::vector<Tensor>& ts, double eps = 1e-5) {
  const auto an = analytic_grads(build, ts);
  double worst = 0.0;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const Tensor num = numeric_grad(build, ts, k, eps);
    worst = std::max(worst, max_relative_error(an[k].data(), num.data()));
  }
  return worst;
}

}  // namespace dspl::testing
