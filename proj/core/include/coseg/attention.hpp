#pragma once

#include "coseg/ops.hpp"
#include "coseg/params.hpp"

namespace coseg {

// Channel attention: per-channel gates from pooled spatial statistics.
// The gate vector is sigma(phi(z_avg) + phi(z_max)) where phi is a two-layer
// linear bottleneck (C -> ceil(C/r) -> C) shared by both pooling branches.
template <class S>
struct ChamParamsT {
  TensorT<S> fc1_weight;  // [hidden x C]
  TensorT<S> fc1_bias;    // [hidden]
  TensorT<S> fc2_weight;  // [C x hidden]
  TensorT<S> fc2_bias;    // [C]

  int channels() const { return fc2_weight.shape()[0]; }

  static ChamParamsT create(int channels, int reduction, Pcg32& rng);
};

// Spatial attention: a per-pixel gate from the channel-pooled avg/max planes
// through a single 2-in/1-out convolution. Odd kernel so resolution is kept.
template <class S>
struct SpamParamsT {
  TensorT<S> conv_weight;  // [1 x 2 x k x k]
  TensorT<S> conv_bias;    // [1]

  int kernel_size() const { return conv_weight.shape()[2]; }

  static SpamParamsT create(int kernel_size, Pcg32& rng);
};

using ChamParams = ChamParamsT<float>;
using SpamParams = SpamParamsT<float>;

// Gate vector, shape C x 1 x 1, every entry strictly inside (0,1).
template <class S>
TensorT<S> cham_weights(const TensorT<S>& z, const ChamParamsT<S>& p);

// Channel-rescaled features: out[c] = w[c] * z[c]; shape preserved.
template <class S>
TensorT<S> cham_apply(const TensorT<S>& z, const ChamParamsT<S>& p);

// Attention plane, shape 1 x h x w, entries strictly inside (0,1).
template <class S>
TensorT<S> spam_map(const TensorT<S>& features, const SpamParamsT<S>& p);

// Per-pixel gated features: out[c] = map . features[c]; shape preserved.
template <class S>
TensorT<S> spam_apply(const TensorT<S>& features, const SpamParamsT<S>& p);

#define COSEG_ATTENTION_EXTERN(S)                                                  \
  extern template struct ChamParamsT<S>;                                           \
  extern template struct SpamParamsT<S>;                                           \
  extern template TensorT<S> cham_weights<S>(const TensorT<S>&, const ChamParamsT<S>&); \
  extern template TensorT<S> cham_apply<S>(const TensorT<S>&, const ChamParamsT<S>&);   \
  extern template TensorT<S> spam_map<S>(const TensorT<S>&, const SpamParamsT<S>&);     \
  extern template TensorT<S> spam_apply<S>(const TensorT<S>&, const SpamParamsT<S>&);

COSEG_ATTENTION_EXTERN(float)
COSEG_ATTENTION_EXTERN(double)
#undef COSEG_ATTENTION_EXTERN

}  // namespace coseg
