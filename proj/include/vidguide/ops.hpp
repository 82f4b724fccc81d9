#pragma once

#include <cstddef>

#include "vidguide/autograd.hpp"

// Differentiable tensor ops. Binary elementwise ops accept either equal shapes
// or a right operand whose shape is a trailing suffix of the left operand's
// (bias-style expansion). Anything else is a DimensionError.
namespace vidguide::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var neg(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var silu(const Var& a);
Var tanh(const Var& a);
// Gradient passes only where lo < x < hi.
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);   // -> shape []
Var mean(const Var& a);  // -> shape []
Var sum_lastdim(const Var& a);
Var expand_last(const Var& a, std::size_t k);  // [...] -> [..., k]
Var select_last(const Var& a, std::size_t index);  // [..., L] -> [...]
Var reshape(const Var& a, Shape shape);

// a [..., M, K] x b [K, N], or batched a [B, M, K] x b [B, K, N].
Var matmul(const Var& a, const Var& b);
Var transpose_last2(const Var& a);
Var swap_leading(const Var& a);  // [A, B, ...] -> [B, A, ...]
Var softmax_lastdim(const Var& a);

// Pixel-major feature maps [B, H*W, C].
Var avgpool2(const Var& x, std::size_t height, std::size_t width);
Var upsample2(const Var& x, std::size_t height, std::size_t width);
// 3x3 mean filter over in-grid neighbours on [B, H*W, C].
Var smooth3(const Var& x, std::size_t height, std::size_t width);
Var to_pixels(const Var& z);  // [F, C, H, W] -> [F, H*W, C]
Var from_pixels(const Var& x, std::size_t height, std::size_t width);  // inverse

}  // namespace vidguide::ops

namespace vidguide::testing {

// Negative-control hook: when enabled the softmax backward rule is scaled by
// a wrong factor so gradient checks must fail.
void set_gradient_fault(bool enabled);
bool gradient_fault_enabled();

}  // namespace vidguide::testing
