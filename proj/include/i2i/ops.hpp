#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "i2i/tensor.hpp"

namespace i2i {

// Differentiable primitives. Image tensors are batched NCHW; conv weights are
// [out, in, k, k] and transposed-conv weights [in, out, k, k].

struct ConvAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

Tensor matmul(const Tensor& a, const Tensor& b);
/// `bias` may be an undefined Tensor.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvAttrs attrs);
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvAttrs attrs);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor exp(const Tensor& x);
/// Domain error for any non-positive entry.
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
/// Domain error for any non-positive entry.
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(1 + e^x), evaluated without overflow.
Tensor softplus(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Concatenates along the channel axis of two CHW or NCHW tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// [D] -> [D, H, W] or [N, D] -> [N, D, H, W]; channel k is constant v[k].
Tensor tile_spatial(const Tensor& v, std::size_t height, std::size_t width);
/// Per-sample, per-channel normalisation over H x W, then optional affine.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor reshape(const Tensor& x, Shape shape);
/// [N, C, H, W] -> [N, C] spatial average.
Tensor global_avg_pool(const Tensor& x);

/// Operation catalogue used by the generic `apply` entry point and the
/// gradient-check harness.
enum class OpKind {
  matmul,
  conv2d,
  conv_transpose2d,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  exp,
  log,
  square,
  sqrt,
  abs,
  relu,
  leaky_relu,
  tanh,
  sigmoid,
  softplus,
  clamp,
  sum,
  mean,
  concat_channels,
  tile_spatial,
  instance_norm,
  reshape,
  global_avg_pool,
};

std::span<const OpKind> all_op_kinds();
std::string_view op_kind_name(OpKind kind);

struct OpAttrs {
  ConvAttrs conv;
  double scalar = 0.0;  // scale factor, offset, or leaky slope
  double lo = -1.0;
  double hi = 1.0;
  std::size_t height = 1;  // tile target
  std::size_t width = 1;
  double eps = 1e-5;
  Shape shape;  // reshape target
};

/// Dispatches on `kind`. conv ops take {x, w} or {x, w, b}; instance_norm
/// takes {x} or {x, gamma, beta}.
Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace i2i
