#pragma once

#include <array>
#include <vector>

#include "mmformer/tensor.hpp"

// Differentiable tensor kernels. Every op is instantiated for float (the
// production path) and double (the numeric side of gradient checks).
//
// Reductions accumulate in double in a fixed serial order, so forward passes
// are bit-reproducible.

namespace mmf {

/// 3D cross-correlation with zero padding.
/// input [N,Cin,D,H,W], weight [Cout,Cin,k,k,k], bias [Cout] or undefined.
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding);

/// Non-overlapping transposed convolution (kernel == stride == 2).
/// weight [Cin,Cout,2,2,2]; every spatial extent doubles.
template <typename T>
BasicTensor<T> conv_transpose3d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, int stride = 2);

/// Group normalisation over (C/groups, D, H, W) per sample, biased variance.
template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& input, int groups, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = 1e-5);

/// Layer normalisation over the last axis.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = 1e-5);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input);

/// Affine map over the last axis: input [..., Din] x weight [Din, Dout] + bias [Dout].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

/// Batched product of rank-3 tensors [B,M,K] x [B,K,N]; with transpose_rhs the
/// right operand is read as [B,N,K].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& lhs, const BasicTensor<T>& rhs,
                      bool transpose_rhs = false);

/// Max-subtracted softmax along `axis`.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& input, int axis);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor);

/// Sum of all elements as a [1] tensor.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);

/// Swaps two axes.
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a, int axis0, int axis1);

/// [N,C,D,H,W] -> [N, D*H*W, C]
template <typename T>
BasicTensor<T> flatten_spatial(const BasicTensor<T>& a);

/// [N, D*H*W, C] -> [N,C,D,H,W]
template <typename T>
BasicTensor<T> unflatten_spatial(const BasicTensor<T>& a, std::array<std::int64_t, 3> extents);

/// Trilinear resampling with the align_corners=false convention (half-pixel
/// centres, source coordinates clamped at the low border).
template <typename T>
BasicTensor<T> trilinear_interpolate(const BasicTensor<T>& input,
                                     std::array<std::int64_t, 3> target);

}  // namespace mmf
