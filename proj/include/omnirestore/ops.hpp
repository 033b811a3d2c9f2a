#pragma once

#include "omnirestore/tensor.hpp"

namespace omnirestore {

// Differentiable operations. Every function records a backward rule on the
// graph of its inputs; shape mixes outside the documented broadcasting rules
// (scalar-tensor, trailing-axis bias) throw ShapeError.

template <class S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> scale(const Tensor<S>& a, S s);
template <class S> Tensor<S> add_scalar(const Tensor<S>& a, S s);
// x: [..., d] plus bias b: [d]
template <class S> Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b);

template <class S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> transpose2d(const Tensor<S>& x);
template <class S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <class S> Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis);
template <class S> Tensor<S> slice(const Tensor<S>& x, int axis, int start, int len);

template <class S> Tensor<S> softmax(const Tensor<S>& x, int axis);
template <class S> Tensor<S> log(const Tensor<S>& x);
template <class S> Tensor<S> gelu(const Tensor<S>& x);
// normalization over the last (channel) axis
template <class S> Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                                        const Tensor<S>& beta, S eps = S(1e-5));
// rows of the last axis scaled to unit L2 norm
template <class S> Tensor<S> l2_normalize(const Tensor<S>& x, S eps = S(1e-12));

// x: [H, W, Cin], w: [Cout, kh, kw, Cin/groups], optional b: [Cout].
// Zero-padded "same" output extents ceil(H/stride) x ceil(W/stride); odd kernels only.
template <class S> Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w,
                                    const Tensor<S>& b, int stride = 1, int groups = 1);
template <class S> Tensor<S> upsample_nearest2(const Tensor<S>& x);
template <class S> Tensor<S> space_to_depth(const Tensor<S>& x, int p);
template <class S> Tensor<S> depth_to_space(const Tensor<S>& x, int p);

template <class S> Tensor<S> sum_all(const Tensor<S>& x);
template <class S> Tensor<S> mean_all(const Tensor<S>& x);
template <class S> Tensor<S> smooth_l1(const Tensor<S>& pred, const Tensor<S>& target,
                                       S beta = S(1));
template <class S> Tensor<S> clamp01(const Tensor<S>& x);

}  // namespace omnirestore
