#include "i2i/ops.hpp"

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <memory>
#include <string>

#include "i2i/errors.hpp"

namespace i2i {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapMat = Eigen::Map<const RowMat>;

// Eigen picks its vectorized summation order from the operand addresses, and
// std::vector storage is only 16-byte aligned. Copying into Eigen-owned
// (fully aligned) matrices makes every product depend on shapes alone, which
// keeps runs bit-reproducible.
RowMat own(const double* data, std::size_t rows, std::size_t cols) { return CMapMat(data, rows, cols); }

void store(const RowMat& m, double* dst) { std::copy(m.data(), m.data() + m.size(), dst); }

void accumulate(const RowMat& m, double* dst) {
  for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] += m.data()[i];
}

[[noreturn]] void shape_fail(std::string_view op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank, std::string_view role) {
  if (t.rank() != rank) {
    shape_fail(op, std::string(role) + " must have rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

// Elementwise map with derivative expressed through (x, y).
template <class F, class D>
Tensor unary(std::string_view name, const Tensor& x, F f, D dfdx) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  auto y = std::make_shared<std::vector<double>>();
  if (x.requires_grad() && grad_recording_enabled()) *y = out;
  return record(name, x.shape(), std::move(out), {x}, [x, y, dfdx](const BackwardContext& ctx) {
    auto xv = x.values();
    double* gx = ctx.grad_in[0];
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += ctx.grad_out[i] * dfdx(xv[i], (*y)[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// col is [(C*k*k) x (N*Ho*Wo)].
void im2col(const double* x, std::size_t n_batch, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* col) {
  const std::size_t cols = n_batch * ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = col + ((c * k + ki) * k + kj) * cols;
        for (std::size_t n = 0; n < n_batch; ++n) {
          const double* plane = x + (n * channels + c) * h * w;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            double* dst = row + (n * ho + oh) * wo;
            const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(h)) {
              std::fill(dst, dst + wo, 0.0);
              continue;
            }
            const double* src = plane + ih * w;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
              dst[ow] = (iw < 0 || iw >= static_cast<long>(w)) ? 0.0 : src[iw];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into x.
void col2im(const double* col, std::size_t n_batch, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* x) {
  const std::size_t cols = n_batch * ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = col + ((c * k + ki) * k + kj) * cols;
        for (std::size_t n = 0; n < n_batch; ++n) {
          double* plane = x + (n * channels + c) * h * w;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(h)) continue;
            const double* src = row + (n * ho + oh) * wo;
            double* dst = plane + ih * w;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
              if (iw >= 0 && iw < static_cast<long>(w)) dst[iw] += src[ow];
            }
          }
        }
      }
    }
  }
}

// [N, C, S] <-> [C, N*S]
void nchw_to_cn(const double* in, std::size_t n, std::size_t c, std::size_t s, double* out) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) std::copy_n(in + (b * c + ch) * s, s, out + (ch * n + b) * s);
}

void cn_to_nchw_add(const double* in, std::size_t n, std::size_t c, std::size_t s, double* out) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = in + (ch * n + b) * s;
      double* dst = out + (b * c + ch) * s;
      for (std::size_t i = 0; i < s; ++i) dst[i] += src[i];
    }
}

void check_conv_operands(std::string_view op, const Tensor& x, const Tensor& weight, const Tensor& bias,
                         std::size_t in_axis, std::size_t out_axis, ConvAttrs attrs) {
  require_rank(op, x, 4, "input");
  require_rank(op, weight, 4, "weight");
  if (weight.dim(2) != weight.dim(3)) shape_fail(op, "non-square kernel " + shape_str(weight.shape()));
  if (x.dim(1) != weight.dim(in_axis)) {
    shape_fail(op, "input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(out_axis))) {
    shape_fail(op, "bias " + shape_str(bias.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  }
  if (attrs.stride != 1 && attrs.stride != 2) shape_fail(op, "stride must be 1 or 2");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2, "lhs");
  require_rank("matmul", b, 2, "rhs");
  if (a.dim(1) != b.dim(0)) shape_fail("matmul", "inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  store(own(a.values().data(), m, k) * own(b.values().data(), k, n), out.data());
  return record("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](const BackwardContext& ctx) {
    const RowMat g = own(ctx.grad_out.data(), m, n);
    if (ctx.grad_in[0]) accumulate(g * own(b.values().data(), k, n).transpose(), ctx.grad_in[0]);
    if (ctx.grad_in[1]) accumulate(own(a.values().data(), m, k).transpose() * g, ctx.grad_in[1]);
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvAttrs attrs) {
  check_conv_operands("conv2d", x, weight, bias, 1, 0, attrs);
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto o = weight.dim(0), k = weight.dim(2);
  const auto s = attrs.stride, p = attrs.padding;
  if (h + 2 * p < k || w + 2 * p < k) shape_fail("conv2d", "kernel larger than padded input " + shape_str(x.shape()));
  const auto ho = (h + 2 * p - k) / s + 1, wo = (w + 2 * p - k) / s + 1;
  const auto ckk = c * k * k, cols = n * ho * wo, plane = ho * wo;

  auto col = std::make_shared<RowMat>(ckk, cols);
  im2col(x.values().data(), n, c, h, w, k, s, p, ho, wo, col->data());
  const RowMat prod = own(weight.values().data(), o, ckk) * *col;
  std::vector<double> out(n * o * plane, 0.0);
  cn_to_nchw_add(prod.data(), n, o, plane, out.data());
  if (bias.defined()) {
    auto bv = bias.values();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < o; ++ch) {
        double* dst = out.data() + (b * o + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += bv[ch];
      }
  }
  if (!(weight.requires_grad() && grad_recording_enabled())) col->resize(0, 0);

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record("conv2d", {n, o, ho, wo}, std::move(out), std::move(inputs),
                [=](const BackwardContext& ctx) {
                  RowMat gm(o, cols);
                  nchw_to_cn(ctx.grad_out.data(), n, o, plane, gm.data());
                  if (ctx.grad_in[1]) accumulate(gm * col->transpose(), ctx.grad_in[1]);
                  if (ctx.grad_in.size() > 2 && ctx.grad_in[2]) {
                    for (std::size_t ch = 0; ch < o; ++ch) {
                      const double* row = gm.data() + ch * cols;
                      double acc = 0.0;
                      for (std::size_t i = 0; i < cols; ++i) acc += row[i];
                      ctx.grad_in[2][ch] += acc;
                    }
                  }
                  if (ctx.grad_in[0]) {
                    const RowMat dcol = own(weight.values().data(), o, ckk).transpose() * gm;
                    col2im(dcol.data(), n, c, h, w, k, s, p, ho, wo, ctx.grad_in[0]);
                  }
                });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvAttrs attrs) {
  check_conv_operands("conv_transpose2d", x, weight, bias, 0, 1, attrs);
  const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto co = weight.dim(1), k = weight.dim(2);
  const auto s = attrs.stride, p = attrs.padding;
  if ((h - 1) * s + k < 2 * p + 1 || (w - 1) * s + k < 2 * p + 1) {
    shape_fail("conv_transpose2d", "padding too large for input " + shape_str(x.shape()));
  }
  const auto ho = (h - 1) * s + k - 2 * p, wo = (w - 1) * s + k - 2 * p;
  const auto ckk = co * k * k, cols = n * h * w, plane = h * w;

  auto xm = std::make_shared<RowMat>(ci, cols);
  nchw_to_cn(x.values().data(), n, ci, plane, xm->data());
  const RowMat colbuf = own(weight.values().data(), ci, ckk).transpose() * *xm;
  std::vector<double> out(n * co * ho * wo, 0.0);
  col2im(colbuf.data(), n, co, ho, wo, k, s, p, h, w, out.data());
  if (bias.defined()) {
    auto bv = bias.values();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < co; ++ch) {
        double* dst = out.data() + (b * co + ch) * ho * wo;
        for (std::size_t i = 0; i < ho * wo; ++i) dst[i] += bv[ch];
      }
  }
  if (!(weight.requires_grad() && grad_recording_enabled())) xm->resize(0, 0);

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record("conv_transpose2d", {n, co, ho, wo}, std::move(out), std::move(inputs),
                [=](const BackwardContext& ctx) {
                  RowMat gm(ckk, cols);
                  im2col(ctx.grad_out.data(), n, co, ho, wo, k, s, p, h, w, gm.data());
                  if (ctx.grad_in[1]) accumulate(*xm * gm.transpose(), ctx.grad_in[1]);
                  if (ctx.grad_in.size() > 2 && ctx.grad_in[2]) {
                    const double* g = ctx.grad_out.data();
                    for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t ch = 0; ch < co; ++ch) {
                        const double* src = g + (b * co + ch) * ho * wo;
                        double acc = 0.0;
                        for (std::size_t i = 0; i < ho * wo; ++i) acc += src[i];
                        ctx.grad_in[2][ch] += acc;
                      }
                  }
                  if (ctx.grad_in[0]) {
                    const RowMat dx = own(weight.values().data(), ci, ckk) * gm;
                    cn_to_nchw_add(dx.data(), n, ci, plane, ctx.grad_in[0]);
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return record("add", a.shape(), std::move(out), {a, b}, [](const BackwardContext& ctx) {
    for (int j = 0; j < 2; ++j)
      if (double* g = ctx.grad_in[j])
        for (std::size_t i = 0; i < ctx.grad_out.size(); ++i) g[i] += ctx.grad_out[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return record("sub", a.shape(), std::move(out), {a, b}, [](const BackwardContext& ctx) {
    if (double* g = ctx.grad_in[0])
      for (std::size_t i = 0; i < ctx.grad_out.size(); ++i) g[i] += ctx.grad_out[i];
    if (double* g = ctx.grad_in[1])
      for (std::size_t i = 0; i < ctx.grad_out.size(); ++i) g[i] -= ctx.grad_out[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return record("mul", a.shape(), std::move(out), {a, b}, [a, b](const BackwardContext& ctx) {
    auto av = a.values(), bv = b.values();
    if (double* g = ctx.grad_in[0])
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += ctx.grad_out[i] * bv[i];
    if (double* g = ctx.grad_in[1])
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += ctx.grad_out[i] * av[i];
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary("scale", x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary("add_scalar", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw DomainError("sqrt: non-positive input " + std::to_string(v));
  }
  return unary("sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& x) {
  return unary("abs", x, [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary("leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary("softplus", x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v))); },
               [](double v, double) { return stable_sigmoid(v); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lo > hi");
  return unary("clamp", x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const std::size_t count = x.numel();
  return record("sum", {1}, {acc}, {x}, [count](const BackwardContext& ctx) {
    const double g = ctx.grad_out[0];
    double* gx = ctx.grad_in[0];
    for (std::size_t i = 0; i < count; ++i) gx[i] += g;
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const std::size_t count = x.numel();
  return record("mean", {1}, {acc / static_cast<double>(count)}, {x}, [count](const BackwardContext& ctx) {
    const double g = ctx.grad_out[0] / static_cast<double>(count);
    double* gx = ctx.grad_in[0];
    for (std::size_t i = 0; i < count; ++i) gx[i] += g;
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || (a.rank() != 3 && a.rank() != 4)) {
    shape_fail("concat_channels", "operands must both be CHW or NCHW, got " + shape_str(a.shape()) + " and " +
                                      shape_str(b.shape()));
  }
  const std::size_t axis = a.rank() - 3;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) {
      shape_fail("concat_channels", "non-channel dims differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
  }
  const std::size_t batch = axis == 1 ? a.dim(0) : 1;
  const std::size_t ca = a.dim(axis) * a.dim(axis + 1) * a.dim(axis + 2);
  const std::size_t cb = b.dim(axis) * b.dim(axis + 1) * b.dim(axis + 2);
  std::vector<double> out(batch * (ca + cb));
  auto av = a.values(), bv = b.values();
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(av.data() + n * ca, ca, out.data() + n * (ca + cb));
    std::copy_n(bv.data() + n * cb, cb, out.data() + n * (ca + cb) + ca);
  }
  Shape shape = a.shape();
  shape[axis] += b.dim(axis);
  return record("concat_channels", std::move(shape), std::move(out), {a, b},
                [batch, ca, cb](const BackwardContext& ctx) {
                  for (std::size_t n = 0; n < batch; ++n) {
                    const double* g = ctx.grad_out.data() + n * (ca + cb);
                    if (double* ga = ctx.grad_in[0])
                      for (std::size_t i = 0; i < ca; ++i) ga[n * ca + i] += g[i];
                    if (double* gb = ctx.grad_in[1])
                      for (std::size_t i = 0; i < cb; ++i) gb[n * cb + i] += g[ca + i];
                  }
                });
}

Tensor tile_spatial(const Tensor& v, std::size_t height, std::size_t width) {
  if ((v.rank() != 1 && v.rank() != 2) || height == 0 || width == 0) {
    shape_fail("tile_spatial", "expects [D] or [N, D] and a positive target, got " + shape_str(v.shape()));
  }
  const std::size_t plane = height * width;
  std::vector<double> out(v.numel() * plane);
  auto vv = v.values();
  for (std::size_t i = 0; i < vv.size(); ++i) std::fill_n(out.data() + i * plane, plane, vv[i]);
  Shape shape = v.shape();
  shape.push_back(height);
  shape.push_back(width);
  const std::size_t count = v.numel();
  return record("tile_spatial", std::move(shape), std::move(out), {v}, [count, plane](const BackwardContext& ctx) {
    double* gv = ctx.grad_in[0];
    for (std::size_t i = 0; i < count; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < plane; ++j) acc += ctx.grad_out[i * plane + j];
      gv[i] += acc;
    }
  });
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank("instance_norm", x, 4, "input");
  const auto n = x.dim(0), c = x.dim(1), m = x.dim(2) * x.dim(3);
  if (gamma.defined() != beta.defined()) shape_fail("instance_norm", "gamma and beta must be given together");
  if (gamma.defined() && (gamma.shape() != Shape{c} || beta.shape() != Shape{c})) {
    shape_fail("instance_norm", "affine parameters must have shape [" + std::to_string(c) + "]");
  }
  auto xv = x.values();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(n * c);
  std::vector<double> out(xv.size());
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double* src = xv.data() + nc * m;
    double mu = 0.0;
    for (std::size_t i = 0; i < m; ++i) mu += src[i];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[nc] = is;
    const double g = gamma.defined() ? gamma.values()[nc % c] : 1.0;
    const double b = beta.defined() ? beta.values()[nc % c] : 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double h = (src[i] - mu) * is;
      (*xhat)[nc * m + i] = h;
      out[nc * m + i] = g * h + b;
    }
  }
  std::vector<Tensor> inputs{x};
  if (gamma.defined()) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return record("instance_norm", x.shape(), std::move(out), std::move(inputs),
                [=](const BackwardContext& ctx) {
                  const double inv_m = 1.0 / static_cast<double>(m);
                  for (std::size_t nc = 0; nc < n * c; ++nc) {
                    const double* g = ctx.grad_out.data() + nc * m;
                    const double* h = xhat->data() + nc * m;
                    const double gm = gamma.defined() ? gamma.values()[nc % c] : 1.0;
                    double sum_g = 0.0, sum_gh = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                      sum_g += g[i];
                      sum_gh += g[i] * h[i];
                    }
                    if (ctx.grad_in.size() > 1) {
                      if (ctx.grad_in[1]) ctx.grad_in[1][nc % c] += sum_gh;
                      if (ctx.grad_in[2]) ctx.grad_in[2][nc % c] += sum_g;
                    }
                    if (double* gx = ctx.grad_in[0]) {
                      const double k = gm * (*inv_std)[nc];
                      for (std::size_t i = 0; i < m; ++i) {
                        gx[nc * m + i] += k * (g[i] - inv_m * sum_g - h[i] * inv_m * sum_gh);
                      }
                    }
                  }
                });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    shape_fail("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return record("reshape", std::move(shape), std::move(out), {x}, [](const BackwardContext& ctx) {
    double* g = ctx.grad_in[0];
    for (std::size_t i = 0; i < ctx.grad_out.size(); ++i) g[i] += ctx.grad_out[i];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4, "input");
  const auto n = x.dim(0), c = x.dim(1), m = x.dim(2) * x.dim(3);
  std::vector<double> out(n * c);
  auto xv = x.values();
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += xv[nc * m + i];
    out[nc] = acc / static_cast<double>(m);
  }
  return record("global_avg_pool", {n, c}, std::move(out), {x}, [n, c, m](const BackwardContext& ctx) {
    double* g = ctx.grad_in[0];
    for (std::size_t nc = 0; nc < n * c; ++nc) {
      const double v = ctx.grad_out[nc] / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) g[nc * m + i] += v;
    }
  });
}

namespace {

constexpr std::array kAllOps{
    OpKind::matmul,          OpKind::conv2d,     OpKind::conv_transpose2d, OpKind::add,
    OpKind::sub,             OpKind::mul,        OpKind::scale,            OpKind::add_scalar,
    OpKind::exp,             OpKind::log,        OpKind::square,           OpKind::sqrt,
    OpKind::abs,             OpKind::relu,       OpKind::leaky_relu,       OpKind::tanh,
    OpKind::sigmoid,         OpKind::softplus,   OpKind::clamp,            OpKind::sum,
    OpKind::mean,            OpKind::concat_channels, OpKind::tile_spatial, OpKind::instance_norm,
    OpKind::reshape,         OpKind::global_avg_pool,
};

void require_arity(OpKind kind, std::span<const Tensor> inputs, std::size_t lo, std::size_t hi) {
  if (inputs.size() < lo || inputs.size() > hi) {
    throw ShapeError(std::string(op_kind_name(kind)) + ": expected " + std::to_string(lo) +
                     (lo == hi ? "" : "-" + std::to_string(hi)) + " inputs, got " + std::to_string(inputs.size()));
  }
}

}  // namespace

std::span<const OpKind> all_op_kinds() { return kAllOps; }

std::string_view op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::conv_transpose2d: return "conv_transpose2d";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::abs: return "abs";
    case OpKind::relu: return "relu";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softplus: return "softplus";
    case OpKind::clamp: return "clamp";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::tile_spatial: return "tile_spatial";
    case OpKind::instance_norm: return "instance_norm";
    case OpKind::reshape: return "reshape";
    case OpKind::global_avg_pool: return "global_avg_pool";
  }
  return "unknown";
}

Tensor apply(OpKind kind, std::span<const Tensor> in, const OpAttrs& attrs) {
  switch (kind) {
    case OpKind::matmul: require_arity(kind, in, 2, 2); return matmul(in[0], in[1]);
    case OpKind::conv2d:
      require_arity(kind, in, 2, 3);
      return conv2d(in[0], in[1], in.size() > 2 ? in[2] : Tensor{}, attrs.conv);
    case OpKind::conv_transpose2d:
      require_arity(kind, in, 2, 3);
      return conv_transpose2d(in[0], in[1], in.size() > 2 ? in[2] : Tensor{}, attrs.conv);
    case OpKind::add: require_arity(kind, in, 2, 2); return add(in[0], in[1]);
    case OpKind::sub: require_arity(kind, in, 2, 2); return sub(in[0], in[1]);
    case OpKind::mul: require_arity(kind, in, 2, 2); return mul(in[0], in[1]);
    case OpKind::scale: require_arity(kind, in, 1, 1); return scale(in[0], attrs.scalar);
    case OpKind::add_scalar: require_arity(kind, in, 1, 1); return add_scalar(in[0], attrs.scalar);
    case OpKind::exp: require_arity(kind, in, 1, 1); return exp(in[0]);
    case OpKind::log: require_arity(kind, in, 1, 1); return log(in[0]);
    case OpKind::square: require_arity(kind, in, 1, 1); return square(in[0]);
    case OpKind::sqrt: require_arity(kind, in, 1, 1); return sqrt(in[0]);
    case OpKind::abs: require_arity(kind, in, 1, 1); return abs(in[0]);
    case OpKind::relu: require_arity(kind, in, 1, 1); return relu(in[0]);
    case OpKind::leaky_relu: require_arity(kind, in, 1, 1); return leaky_relu(in[0], attrs.scalar);
    case OpKind::tanh: require_arity(kind, in, 1, 1); return tanh(in[0]);
    case OpKind::sigmoid: require_arity(kind, in, 1, 1); return sigmoid(in[0]);
    case OpKind::softplus: require_arity(kind, in, 1, 1); return softplus(in[0]);
    case OpKind::clamp: require_arity(kind, in, 1, 1); return clamp(in[0], attrs.lo, attrs.hi);
    case OpKind::sum: require_arity(kind, in, 1, 1); return sum(in[0]);
    case OpKind::mean: require_arity(kind, in, 1, 1); return mean(in[0]);
    case OpKind::concat_channels: require_arity(kind, in, 2, 2); return concat_channels(in[0], in[1]);
    case OpKind::tile_spatial: require_arity(kind, in, 1, 1); return tile_spatial(in[0], attrs.height, attrs.width);
    case OpKind::instance_norm:
      require_arity(kind, in, 1, 3);
      if (in.size() == 2) throw ShapeError("instance_norm: gamma and beta must be given together");
      return in.size() == 3 ? instance_norm(in[0], in[1], in[2], attrs.eps)
                            : instance_norm(in[0], Tensor{}, Tensor{}, attrs.eps);
    case OpKind::reshape: require_arity(kind, in, 1, 1); return reshape(in[0], attrs.shape);
    case OpKind::global_avg_pool: require_arity(kind, in, 1, 1); return global_avg_pool(in[0]);
  }
  throw std::logic_error("apply: unknown op kind");
}

}  // namespace i2i
