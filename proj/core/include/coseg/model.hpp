#pragma once

#include <functional>
#include <span>
#include <vector>

#include "coseg/attention.hpp"
#include "coseg/mask.hpp"
#include "coseg/ops.hpp"
#include "coseg/params.hpp"

namespace coseg {

// Geometry of the convolutional cross-encoder. The encoder halves the
// resolution once per stage down to a 2x2 bottleneck; the decoder mirrors it
// with nearest-neighbour upsampling and gated skip connections.
struct BackboneConfig {
  int input_size = 64;
  int input_channels = 3;
  std::vector<int> encoder_widths = {16, 32, 64, 64, 64};
  int latent_channels = 32;
  int cham_reduction = 4;
  bool use_cham = true;
  bool use_spam = true;

  int stages() const { return static_cast<int>(encoder_widths.size()); }
  // Skips keep their native kernel at coarse resolutions small.
  static int spam_kernel_for(int resolution) { return resolution >= 16 ? 7 : 3; }
  void validate() const;

  // 3-stage 16x16 geometry used by gradient checks and fast tests.
  static BackboneConfig reduced16();
};

template <class S>
struct LatentDistT {
  TensorT<S> mean;    // C_z x 2 x 2
  TensorT<S> logvar;  // C_z x 2 x 2, clamped to +-10
};

template <class S>
struct SkipBundleT {
  std::vector<TensorT<S>> stages;  // s1..s_{n-1}, halving resolutions
};

// Guide-set summary: channel-attended average of posterior means plus the
// averaged log-variances. Permutation-invariant over the guide set.
template <class S>
struct PrototypeT {
  TensorT<S> attended_mean;
  TensorT<S> pooled_logvar;
};

template <class S>
struct EpisodeOutputT {
  std::vector<TensorT<S>> masks;          // one 1 x H x W probability map per image
  std::vector<LatentDistT<S>> latents;    // posterior of each segmented image
  PrototypeT<S> prototype;
};

enum class RunMode { kTrain, kEval };

// Source of standard-normal tensors for the reparameterization step.
template <class S>
using NoiseFn = std::function<TensorT<S>(const Shape&)>;

template <class S>
NoiseFn<S> gaussian_noise(Pcg32& rng);

template <class S>
class DviceModelT {
 public:
  // Fresh Glorot-initialized parameters drawn from the seed.
  DviceModelT(BackboneConfig config, std::uint64_t seed);
  // Adopts an existing parameter collection (checkpoint restore). The names,
  // order, and shapes must match the configuration exactly.
  DviceModelT(BackboneConfig config, ParamStoreT<S> params);

  DviceModelT(DviceModelT&&) noexcept = default;
  DviceModelT& operator=(DviceModelT&&) noexcept = default;
  DviceModelT(const DviceModelT&) = delete;
  DviceModelT& operator=(const DviceModelT&) = delete;

  const BackboneConfig& config() const { return config_; }
  ParamStoreT<S>& params() { return params_; }
  const ParamStoreT<S>& params() const { return params_; }

  std::pair<LatentDistT<S>, SkipBundleT<S>> encode(const TensorT<S>& image) const;

  // train: z = mu + exp(logvar/2) * eps; eval: z = mu. Gradients flow through
  // the posterior parameters, never through the noise.
  TensorT<S> reparameterize(const LatentDistT<S>& dist, RunMode mode,
                            const NoiseFn<S>& noise) const;

  PrototypeT<S> compute_prototype(std::span<const TensorT<S>> guide_images) const;

  TensorT<S> decode(const TensorT<S>& z_attended, const PrototypeT<S>& prototype,
                    const SkipBundleT<S>& skips) const;

  EpisodeOutputT<S> forward_episode(std::span<const TensorT<S>> guide_images,
                                    std::span<const TensorT<S>> coseg_images, RunMode mode,
                                    const NoiseFn<S>& noise) const;

  // Guide images influence the result only through the prototype; eval mode
  // is fully deterministic.
  std::vector<TensorT<S>> segment_episode(std::span<const TensorT<S>> guide_images,
                                          std::span<const TensorT<S>> coseg_images,
                                          RunMode mode, const NoiseFn<S>& noise) const;

 private:
  void bind_bundles();

  BackboneConfig config_;
  ParamStoreT<S> params_;
  std::vector<TensorT<S>> enc_w_, enc_b_;
  TensorT<S> enc_head_w_, enc_head_b_;
  ChamParamsT<S> cham_;
  std::vector<SpamParamsT<S>> spam_;  // one per skip, coarsest last
  std::vector<TensorT<S>> dec_w_, dec_b_;
  TensorT<S> dec_head_w_, dec_head_b_;
};

using DviceModel = DviceModelT<float>;
using LatentDist = LatentDistT<float>;
using Prototype = PrototypeT<float>;
using SkipBundle = SkipBundleT<float>;
using EpisodeOutput = EpisodeOutputT<float>;

// Empirical objective: summed per-pixel binary cross-entropy over all masks
// plus the weighted KL terms of the prototype and the per-image posteriors.
template <class S>
TensorT<S> dvice_loss(std::span<const TensorT<S>> pred_masks,
                      std::span<const TensorT<S>> target_masks,
                      std::span<const LatentDistT<S>> latents,
                      const PrototypeT<S>& prototype, S beta_proto, S beta_latent);

struct BinarizeResult {
  Mask mask;
  bool no_foreground = false;
};

// Thresholds a probability map; if the mean probability falls below
// no_fg_threshold the image is declared to contain no common foreground and
// an all-background mask is returned with the flag set.
BinarizeResult binarize(const Tensor& probs, float threshold, float no_fg_threshold);

#define COSEG_MODEL_EXTERN(S)                                                       \
  extern template struct LatentDistT<S>;                                            \
  extern template struct PrototypeT<S>;                                             \
  extern template class DviceModelT<S>;                                             \
  extern template NoiseFn<S> gaussian_noise<S>(Pcg32&);                             \
  extern template TensorT<S> dvice_loss<S>(                                         \
      std::span<const TensorT<S>>, std::span<const TensorT<S>>,                     \
      std::span<const LatentDistT<S>>, const PrototypeT<S>&, S, S);

COSEG_MODEL_EXTERN(float)
COSEG_MODEL_EXTERN(double)
#undef COSEG_MODEL_EXTERN

}  // namespace coseg
