#pragma once

#include <span>

#include "coseg/tensor.hpp"

namespace coseg {

// Probability clamp for log/bce/sigmoid outputs; keeps every probability in
// the open interval (0,1) and every log finite.
inline constexpr double kProbEps = 1e-7;
// Log-variances are clamped to this symmetric range before exponentiation.
inline constexpr double kLogvarClampAbs = 10.0;

enum class PoolMode { kAvg, kMax };

// 2D cross-correlation. input: C x H x W, kernel: OC x C x KH x KW, bias: OC.
// Output spatial size is floor((H + 2*padding - KH)/stride) + 1 per axis.
template <class S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernel,
                  const TensorT<S>& bias, int stride, int padding);

// Affine map. input: [N], weights: [M x N], bias: [M] -> [M].
template <class S>
TensorT<S> linear(const TensorT<S>& input, const TensorT<S>& weights,
                  const TensorT<S>& bias);

// Global per-channel spatial reduction: C x H x W -> C x 1 x 1.
template <class S>
TensorT<S> pool_spatial_global(const TensorT<S>& input, PoolMode mode);

// 2x2/stride-2 window pooling: C x H x W -> C x H/2 x W/2 (even extents).
template <class S>
TensorT<S> pool_spatial_2x2(const TensorT<S>& input, PoolMode mode);

// Cross-channel reduction: C x H x W -> 1 x H x W.
template <class S>
TensorT<S> pool_channel(const TensorT<S>& input, PoolMode mode);

// Nearest-neighbour doubling: each pixel becomes a 2x2 block; the gradient of
// an output block sums back onto its source pixel.
template <class S>
TensorT<S> upsample_nearest2x(const TensorT<S>& input);

template <class S>
TensorT<S> relu(const TensorT<S>& input);

// Output clamped into [kProbEps, 1-kProbEps]: strictly inside (0,1).
template <class S>
TensorT<S> sigmoid(const TensorT<S>& input);

template <class S>
TensorT<S> exp(const TensorT<S>& input);

// Input clamped to >= kProbEps before taking the log.
template <class S>
TensorT<S> log(const TensorT<S>& input);

template <class S>
TensorT<S> clamp(const TensorT<S>& input, S lo, S hi);

// Broadcasting elementwise sum/product (numpy-style, right-aligned, rank<=4).
template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b);

template <class S>
TensorT<S> scale(const TensorT<S>& input, S factor);

// Concatenation along the channel axis of C x H x W tensors.
template <class S>
TensorT<S> concat_channels(std::span<const TensorT<S>> parts);

// Channel slice [first, first+count) of a C x H x W tensor.
template <class S>
TensorT<S> narrow_channels(const TensorT<S>& input, int first, int count);

// Same element count, new extents; values are shared logically (copied).
template <class S>
TensorT<S> reshape(const TensorT<S>& input, Shape shape);

// Sum of all elements -> scalar tensor of shape [1].
template <class S>
TensorT<S> sum(const TensorT<S>& input);

// Elementwise mean of same-shape tensors. Per element the addends are
// accumulated in sorted order, so the result is bitwise invariant under any
// permutation of the inputs.
template <class S>
TensorT<S> mean_stack(std::span<const TensorT<S>> inputs);

// Summed binary cross-entropy: -sum(y*log(p) + (1-y)*log(1-p)) with p clamped
// into [kProbEps, 1-kProbEps]. Targets must be exactly 0 or 1.
template <class S>
TensorT<S> bce_loss(const TensorT<S>& pred, const TensorT<S>& target);

// KL divergence of a diagonal Gaussian from the standard normal:
// 0.5 * sum(mu^2 + exp(logvar) - logvar - 1), logvar clamped to +-10.
// Nonnegative; zero exactly at mu = 0, logvar = 0.
template <class S>
TensorT<S> gaussian_kl(const TensorT<S>& mean, const TensorT<S>& logvar);

#define COSEG_OPS_EXTERN(S)                                                          \
  extern template TensorT<S> conv2d<S>(const TensorT<S>&, const TensorT<S>&,        \
                                       const TensorT<S>&, int, int);                \
  extern template TensorT<S> linear<S>(const TensorT<S>&, const TensorT<S>&,        \
                                       const TensorT<S>&);                          \
  extern template TensorT<S> pool_spatial_global<S>(const TensorT<S>&, PoolMode);   \
  extern template TensorT<S> pool_spatial_2x2<S>(const TensorT<S>&, PoolMode);      \
  extern template TensorT<S> pool_channel<S>(const TensorT<S>&, PoolMode);          \
  extern template TensorT<S> upsample_nearest2x<S>(const TensorT<S>&);              \
  extern template TensorT<S> relu<S>(const TensorT<S>&);                            \
  extern template TensorT<S> sigmoid<S>(const TensorT<S>&);                         \
  extern template TensorT<S> exp<S>(const TensorT<S>&);                             \
  extern template TensorT<S> log<S>(const TensorT<S>&);                             \
  extern template TensorT<S> clamp<S>(const TensorT<S>&, S, S);                     \
  extern template TensorT<S> add<S>(const TensorT<S>&, const TensorT<S>&);          \
  extern template TensorT<S> mul<S>(const TensorT<S>&, const TensorT<S>&);          \
  extern template TensorT<S> scale<S>(const TensorT<S>&, S);                        \
  extern template TensorT<S> concat_channels<S>(std::span<const TensorT<S>>);       \
  extern template TensorT<S> narrow_channels<S>(const TensorT<S>&, int, int);       \
  extern template TensorT<S> reshape<S>(const TensorT<S>&, Shape);                  \
  extern template TensorT<S> sum<S>(const TensorT<S>&);                             \
  extern template TensorT<S> mean_stack<S>(std::span<const TensorT<S>>);            \
  extern template TensorT<S> bce_loss<S>(const TensorT<S>&, const TensorT<S>&);     \
  extern template TensorT<S> gaussian_kl<S>(const TensorT<S>&, const TensorT<S>&);

COSEG_OPS_EXTERN(float)
COSEG_OPS_EXTERN(double)
#undef COSEG_OPS_EXTERN

}  // namespace coseg
