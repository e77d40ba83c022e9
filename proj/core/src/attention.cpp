#include "coseg/attention.hpp"

namespace coseg {

template <class S>
ChamParamsT<S> ChamParamsT<S>::create(int channels, int reduction, Pcg32& rng) {
  if (channels < 1) throw ConfigError("cham: channels must be >= 1");
  if (reduction < 1) throw ConfigError("cham: reduction must be >= 1");
  int hidden = (channels + reduction - 1) / reduction;
  ChamParamsT<S> p;
  p.fc1_weight = glorot_uniform<S>({hidden, channels}, channels, hidden, rng);
  p.fc1_bias = TensorT<S>::zeros({hidden}, true);
  p.fc2_weight = glorot_uniform<S>({channels, hidden}, hidden, channels, rng);
  p.fc2_bias = TensorT<S>::zeros({channels}, true);
  return p;
}

template <class S>
SpamParamsT<S> SpamParamsT<S>::create(int kernel_size, Pcg32& rng) {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("spam: kernel size must be odd and >= 1");
  }
  SpamParamsT<S> p;
  int k2 = kernel_size * kernel_size;
  p.conv_weight = glorot_uniform<S>({1, 2, kernel_size, kernel_size}, 2 * k2, k2, rng);
  p.conv_bias = TensorT<S>::zeros({1}, true);
  return p;
}

namespace {

// phi(v) = fc2(fc1(v)); both layers are linear, the bottleneck width does the
// regularizing.
template <class S>
TensorT<S> cham_mlp(const TensorT<S>& v, const ChamParamsT<S>& p) {
  return linear(linear(v, p.fc1_weight, p.fc1_bias), p.fc2_weight, p.fc2_bias);
}

}  // namespace

template <class S>
TensorT<S> cham_weights(const TensorT<S>& z, const ChamParamsT<S>& p) {
  if (z.rank() != 3 || z.shape()[0] != p.channels()) {
    throw ShapeError("cham_weights: features " + shape_str(z.shape()) + " do not match " +
                     std::to_string(p.channels()) + " channels");
  }
  const int c = p.channels();
  TensorT<S> z_avg = reshape(pool_spatial_global(z, PoolMode::kAvg), {c});
  TensorT<S> z_max = reshape(pool_spatial_global(z, PoolMode::kMax), {c});
  TensorT<S> gates = sigmoid(add(cham_mlp(z_avg, p), cham_mlp(z_max, p)));
  return reshape(gates, {c, 1, 1});
}

template <class S>
TensorT<S> cham_apply(const TensorT<S>& z, const ChamParamsT<S>& p) {
  return mul(z, cham_weights(z, p));
}

template <class S>
TensorT<S> spam_map(const TensorT<S>& features, const SpamParamsT<S>& p) {
  if (features.rank() != 3) {
    throw ShapeError("spam_map: expected C x h x w features, got " +
                     shape_str(features.shape()));
  }
  TensorT<S> pooled[2] = {pool_channel(features, PoolMode::kAvg),
                          pool_channel(features, PoolMode::kMax)};
  TensorT<S> stacked = concat_channels(std::span<const TensorT<S>>(pooled, 2));
  int pad = (p.kernel_size() - 1) / 2;
  return sigmoid(conv2d(stacked, p.conv_weight, p.conv_bias, 1, pad));
}

template <class S>
TensorT<S> spam_apply(const TensorT<S>& features, const SpamParamsT<S>& p) {
  return mul(features, spam_map(features, p));
}

#define COSEG_ATTENTION_INSTANTIATE(S)                                             \
  template struct ChamParamsT<S>;                                                  \
  template struct SpamParamsT<S>;                                                  \
  template TensorT<S> cham_weights<S>(const TensorT<S>&, const ChamParamsT<S>&);   \
  template TensorT<S> cham_apply<S>(const TensorT<S>&, const ChamParamsT<S>&);     \
  template TensorT<S> spam_map<S>(const TensorT<S>&, const SpamParamsT<S>&);       \
  template TensorT<S> spam_apply<S>(const TensorT<S>&, const SpamParamsT<S>&);

COSEG_ATTENTION_INSTANTIATE(float)
COSEG_ATTENTION_INSTANTIATE(double)
#undef COSEG_ATTENTION_INSTANTIATE

}  // namespace coseg
