#pragma once

#include <cstdint>

#include <cstddef>
#include <span>
#include <vector>

#include "dstu/tensor.hpp"

// Differentiable primitives. Spatial maps are stored channels-last (H, W, C);
// token sequences are (N, C). Each primitive documents its shape law and
// throws ShapeError naming the offending dimension when it is violated.
namespace dstu {

/// [.., N, K] x [K, M] -> [.., N, M]  or  [B, N, K] x [B, K, M] -> [B, N, M].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise a + b. `b` may equal a's shape or any trailing suffix of it,
/// in which case it is tiled over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
/// Elementwise a * b with the same broadcasting rule as add.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
/// out.shape[i] = x.shape[axes[i]].
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// Contiguous range [start, start + length) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalizes over the last axis. gamma/beta of shape [C] or undefined.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Erf-based GELU.
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
/// Digest of which relu inputs were positive, accumulated over every relu
/// call on this thread since the last reset. Two evaluations with equal
/// digests took the same linear piece of every relu.
std::uint64_t relu_pattern_digest();
void reset_relu_pattern_digest();
Tensor sigmoid(const Tensor& x);

/// x: (H, W, Cin), weight: (kh, kw, Cin, Cout), bias: (Cout) or undefined.
/// Output (Ho, Wo, Cout) with Ho = (H + 2*pad - kh) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);
/// x: (H, W, C); statistics over (H, W, C / groups) per group.
Tensor groupnorm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);
/// Mean over every leading axis: (..., C) -> (1, C).
Tensor avgpool_spatial(const Tensor& x);
/// (H, W, C) -> (H*f, W*f, C), nearest replication.
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
/// Cyclic shift of an (H, W, C) map: out[(i+sh) mod H, (j+sw) mod W] = x[i, j].
Tensor roll2d(const Tensor& x, long shift_h, long shift_w);
/// scores: (nW, heads, T, T) plus a constant mask (nW, T, T) broadcast over heads.
Tensor masked_add(const Tensor& scores, const Tensor& mask);
/// Row lookup: table (R, C), index entries in [0, R) -> (index.size(), C).
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index);

/// Sum of all elements, shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// x (.., in) x weight (in, out) + bias (out). Bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace dstu
