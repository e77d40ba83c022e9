#include "coseg/model.hpp"

#include <algorithm>
#include <cmath>

namespace coseg {

void BackboneConfig::validate() const {
  if (input_channels < 1) throw ConfigError("backbone: input_channels must be >= 1");
  if (latent_channels < 1) throw ConfigError("backbone: latent_channels must be >= 1");
  if (cham_reduction < 1) throw ConfigError("backbone: cham_reduction must be >= 1");
  if (encoder_widths.empty()) throw ConfigError("backbone: encoder_widths empty");
  for (int w : encoder_widths) {
    if (w < 1) throw ConfigError("backbone: encoder widths must be >= 1");
  }
  int r = input_size;
  for (int i = 0; i < stages(); ++i) {
    if (r % 2 != 0) throw ConfigError("backbone: input size not divisible through stages");
    r /= 2;
  }
  if (r != 2) {
    throw ConfigError("backbone: " + std::to_string(stages()) + " stages on " +
                      std::to_string(input_size) + "px input does not reach a 2x2 bottleneck");
  }
}

BackboneConfig BackboneConfig::reduced16() {
  BackboneConfig cfg;
  cfg.input_size = 16;
  cfg.encoder_widths = {8, 12, 16};
  cfg.latent_channels = 8;
  return cfg;
}

namespace {

struct ParamSpec {
  std::string name;
  Shape shape;
  int fan_in = 0;
  int fan_out = 0;
  bool zero_init = false;  // biases
};

// Parameter layout; creation order here defines checkpoint order.
std::vector<ParamSpec> build_param_specs(const BackboneConfig& cfg) {
  std::vector<ParamSpec> specs;
  auto conv = [&](const std::string& name, int oc, int ic, int k) {
    specs.push_back({name + ".weight", {oc, ic, k, k}, ic * k * k, oc * k * k, false});
    specs.push_back({name + ".bias", {oc}, 0, 0, true});
  };
  auto fc = [&](const std::string& name, int out, int in) {
    specs.push_back({name + ".weight", {out, in}, in, out, false});
    specs.push_back({name + ".bias", {out}, 0, 0, true});
  };

  int in_ch = cfg.input_channels;
  for (int i = 0; i < cfg.stages(); ++i) {
    conv("enc" + std::to_string(i + 1), cfg.encoder_widths[i], in_ch, 3);
    in_ch = cfg.encoder_widths[i];
  }
  conv("enc_head", 2 * cfg.latent_channels, in_ch, 1);

  int hidden = (cfg.latent_channels + cfg.cham_reduction - 1) / cfg.cham_reduction;
  fc("cham.fc1", hidden, cfg.latent_channels);
  fc("cham.fc2", cfg.latent_channels, hidden);

  for (int i = 0; i < cfg.stages() - 1; ++i) {
    int resolution = cfg.input_size >> (i + 1);
    int k = BackboneConfig::spam_kernel_for(resolution);
    conv("spam" + std::to_string(i + 1), 1, 2, k);
  }

  std::vector<int> dec_widths(cfg.encoder_widths.rbegin(), cfg.encoder_widths.rend());
  int prev = 2 * cfg.latent_channels;
  for (int i = 0; i < cfg.stages(); ++i) {
    int in = prev;
    if (i < cfg.stages() - 1) in += cfg.encoder_widths[cfg.stages() - 2 - i];
    conv("dec" + std::to_string(i + 1), dec_widths[i], in, 3);
    prev = dec_widths[i];
  }
  conv("dec_head", 1, prev, 1);
  return specs;
}

}  // namespace

template <class S>
DviceModelT<S>::DviceModelT(BackboneConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  Pcg32 rng(seed);
  for (const ParamSpec& spec : build_param_specs(config_)) {
    if (spec.zero_init) {
      params_.add(spec.name, TensorT<S>::zeros(spec.shape, true));
    } else {
      params_.add(spec.name, glorot_uniform<S>(spec.shape, spec.fan_in, spec.fan_out, rng));
    }
  }

  // Difference-structured start for the first decoder stage: its input is
  // concat(z, prototype), and the stage begins with channel pairs close to
  // relu(z_c - proto_c) / relu(proto_c - z_c). The similarity check the
  // decoder has to perform is then downhill from the very first episode;
  // from a plain random start the prototype input stays unread.
  {
    const int cz = config_.latent_channels;
    TensorT<S>& w = params_.get("dec1.weight");
    const Shape& ws = w.shape();  // [out, in, 3, 3]
    auto values = w.values_mut();
    const std::int64_t in_ch = ws[1], k2 = static_cast<std::int64_t>(ws[2]) * ws[3];
    const std::int64_t center = k2 / 2;
    auto at = [&](int oc, std::int64_t ic) -> S& {
      return values[(oc * in_ch + ic) * k2 + center];
    };
    const S delta = S(0.4);
    for (int c = 0; c < cz && c < ws[0]; ++c) {
      at(c, c) += delta;
      at(c, c + cz) -= delta;
    }
    for (int c = 0; c < cz && cz + c < ws[0]; ++c) {
      at(cz + c, c) -= delta;
      at(cz + c, c + cz) += delta;
    }
  }
  bind_bundles();
}

template <class S>
DviceModelT<S>::DviceModelT(BackboneConfig config, ParamStoreT<S> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  auto specs = build_param_specs(config_);
  if (specs.size() != params_.size()) {
    throw FormatError("parameter collection has " + std::to_string(params_.size()) +
                      " entries, model expects " + std::to_string(specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& [name, tensor] = params_.entries()[i];
    if (name != specs[i].name) {
      throw FormatError("parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                        specs[i].name + "'");
    }
    if (tensor.shape() != specs[i].shape) {
      throw FormatError("parameter '" + name + "' has shape " + shape_str(tensor.shape()) +
                        ", expected " + shape_str(specs[i].shape));
    }
    if (!tensor.requires_grad()) {
      throw FormatError("parameter '" + name + "' does not track gradients");
    }
  }
  bind_bundles();
}

template <class S>
void DviceModelT<S>::bind_bundles() {
  enc_w_.clear();
  enc_b_.clear();
  dec_w_.clear();
  dec_b_.clear();
  spam_.clear();
  for (int i = 0; i < config_.stages(); ++i) {
    enc_w_.push_back(params_.get("enc" + std::to_string(i + 1) + ".weight"));
    enc_b_.push_back(params_.get("enc" + std::to_string(i + 1) + ".bias"));
  }
  enc_head_w_ = params_.get("enc_head.weight");
  enc_head_b_ = params_.get("enc_head.bias");
  cham_.fc1_weight = params_.get("cham.fc1.weight");
  cham_.fc1_bias = params_.get("cham.fc1.bias");
  cham_.fc2_weight = params_.get("cham.fc2.weight");
  cham_.fc2_bias = params_.get("cham.fc2.bias");
  for (int i = 0; i < config_.stages() - 1; ++i) {
    SpamParamsT<S> sp;
    sp.conv_weight = params_.get("spam" + std::to_string(i + 1) + ".weight");
    sp.conv_bias = params_.get("spam" + std::to_string(i + 1) + ".bias");
    spam_.push_back(std::move(sp));
  }
  for (int i = 0; i < config_.stages(); ++i) {
    dec_w_.push_back(params_.get("dec" + std::to_string(i + 1) + ".weight"));
    dec_b_.push_back(params_.get("dec" + std::to_string(i + 1) + ".bias"));
  }
  dec_head_w_ = params_.get("dec_head.weight");
  dec_head_b_ = params_.get("dec_head.bias");
}

template <class S>
std::pair<LatentDistT<S>, SkipBundleT<S>> DviceModelT<S>::encode(const TensorT<S>& image) const {
  const Shape expected{config_.input_channels, config_.input_size, config_.input_size};
  if (image.shape() != expected) {
    throw ShapeError("encode: expected image " + shape_str(expected) + ", got " +
                     shape_str(image.shape()));
  }
  for (S v : image.values()) {
    if (!(v >= S(0) && v <= S(1))) {
      throw ValueError("encode: image values must lie in [0,1]");
    }
  }

  SkipBundleT<S> skips;
  TensorT<S> h = image;
  for (int i = 0; i < config_.stages(); ++i) {
    h = relu(conv2d(h, enc_w_[i], enc_b_[i], 2, 1));
    if (i < config_.stages() - 1) skips.stages.push_back(h);
  }
  TensorT<S> head = conv2d(h, enc_head_w_, enc_head_b_, 1, 0);
  LatentDistT<S> dist;
  dist.mean = narrow_channels(head, 0, config_.latent_channels);
  dist.logvar = clamp(narrow_channels(head, config_.latent_channels, config_.latent_channels),
                      static_cast<S>(-kLogvarClampAbs), static_cast<S>(kLogvarClampAbs));
  return {std::move(dist), std::move(skips)};
}

template <class S>
TensorT<S> DviceModelT<S>::reparameterize(const LatentDistT<S>& dist, RunMode mode,
                                          const NoiseFn<S>& noise) const {
  if (dist.mean.shape() != dist.logvar.shape()) {
    throw ShapeError("reparameterize: mean/logvar shapes differ");
  }
  if (mode == RunMode::kEval) return dist.mean;
  TensorT<S> lv = clamp(dist.logvar, static_cast<S>(-kLogvarClampAbs),
                        static_cast<S>(kLogvarClampAbs));
  TensorT<S> std_dev = coseg::exp(scale(lv, S(0.5)));
  TensorT<S> eps = noise(dist.mean.shape());
  if (eps.shape() != dist.mean.shape()) {
    throw ShapeError("reparameterize: noise shape mismatch");
  }
  return add(dist.mean, mul(std_dev, eps));
}

template <class S>
PrototypeT<S> DviceModelT<S>::compute_prototype(std::span<const TensorT<S>> guide_images) const {
  if (guide_images.empty()) throw ConfigError("compute_prototype: empty guide set");
  std::vector<TensorT<S>> attended;
  std::vector<TensorT<S>> logvars;
  attended.reserve(guide_images.size());
  logvars.reserve(guide_images.size());
  for (const TensorT<S>& image : guide_images) {
    auto [dist, skips] = encode(image);
    attended.push_back(config_.use_cham ? cham_apply(dist.mean, cham_) : dist.mean);
    logvars.push_back(dist.logvar);
  }
  PrototypeT<S> proto;
  proto.attended_mean = mean_stack(std::span<const TensorT<S>>(attended));
  proto.pooled_logvar = mean_stack(std::span<const TensorT<S>>(logvars));
  return proto;
}

template <class S>
TensorT<S> DviceModelT<S>::decode(const TensorT<S>& z_attended, const PrototypeT<S>& prototype,
                                  const SkipBundleT<S>& skips) const {
  const int n = config_.stages();
  if (static_cast<int>(skips.stages.size()) != n - 1) {
    throw ShapeError("decode: expected " + std::to_string(n - 1) + " skip tensors, got " +
                     std::to_string(skips.stages.size()));
  }
  TensorT<S> joined[2] = {z_attended, prototype.attended_mean};
  TensorT<S> h = concat_channels(std::span<const TensorT<S>>(joined, 2));
  for (int i = 0; i < n; ++i) {
    h = upsample_nearest2x(h);
    if (i < n - 1) {
      const TensorT<S>& skip = skips.stages[n - 2 - i];
      TensorT<S> gated = config_.use_spam ? spam_apply(skip, spam_[n - 2 - i]) : skip;
      TensorT<S> both[2] = {h, gated};
      h = concat_channels(std::span<const TensorT<S>>(both, 2));
    }
    h = relu(conv2d(h, dec_w_[i], dec_b_[i], 1, 1));
  }
  return sigmoid(conv2d(h, dec_head_w_, dec_head_b_, 1, 0));
}

template <class S>
EpisodeOutputT<S> DviceModelT<S>::forward_episode(std::span<const TensorT<S>> guide_images,
                                                  std::span<const TensorT<S>> coseg_images,
                                                  RunMode mode, const NoiseFn<S>& noise) const {
  if (coseg_images.empty()) throw ConfigError("forward_episode: empty co-seg set");
  EpisodeOutputT<S> out;
  out.prototype = compute_prototype(guide_images);
  for (const TensorT<S>& image : coseg_images) {
    auto [dist, skips] = encode(image);
    TensorT<S> z = reparameterize(dist, mode, noise);
    TensorT<S> z_attended = config_.use_cham ? cham_apply(z, cham_) : z;
    out.masks.push_back(decode(z_attended, out.prototype, skips));
    out.latents.push_back(std::move(dist));
  }
  return out;
}

template <class S>
std::vector<TensorT<S>> DviceModelT<S>::segment_episode(std::span<const TensorT<S>> guide_images,
                                                        std::span<const TensorT<S>> coseg_images,
                                                        RunMode mode,
                                                        const NoiseFn<S>& noise) const {
  return forward_episode(guide_images, coseg_images, mode, noise).masks;
}

template <class S>
NoiseFn<S> gaussian_noise(Pcg32& rng) {
  return [&rng](const Shape& shape) {
    auto t = TensorT<S>::zeros(shape, false);
    for (S& v : t.values_mut()) v = static_cast<S>(rng.normal());
    return t;
  };
}

template <class S>
TensorT<S> dvice_loss(std::span<const TensorT<S>> pred_masks,
                      std::span<const TensorT<S>> target_masks,
                      std::span<const LatentDistT<S>> latents,
                      const PrototypeT<S>& prototype, S beta_proto, S beta_latent) {
  if (pred_masks.size() != target_masks.size() || pred_masks.size() != latents.size()) {
    throw ShapeError("dvice_loss: mask/target/latent counts differ");
  }
  if (pred_masks.empty()) throw ShapeError("dvice_loss: empty episode");

  TensorT<S> total = bce_loss(pred_masks[0], target_masks[0]);
  for (std::size_t j = 1; j < pred_masks.size(); ++j) {
    total = add(total, bce_loss(pred_masks[j], target_masks[j]));
  }
  if (beta_proto != S(0)) {
    total = add(total, scale(gaussian_kl(prototype.attended_mean, prototype.pooled_logvar),
                             beta_proto));
  }
  if (beta_latent != S(0)) {
    for (const LatentDistT<S>& lat : latents) {
      total = add(total, scale(gaussian_kl(lat.mean, lat.logvar), beta_latent));
    }
  }
  return total;
}

BinarizeResult binarize(const Tensor& probs, float threshold, float no_fg_threshold) {
  Shape shape = probs.shape();
  int h = 0, w = 0;
  if (shape.size() == 3 && shape[0] == 1) {
    h = shape[1];
    w = shape[2];
  } else if (shape.size() == 2) {
    h = shape[0];
    w = shape[1];
  } else {
    throw ShapeError("binarize: expected 1 x H x W or H x W probabilities, got " +
                     shape_str(shape));
  }

  BinarizeResult result;
  result.mask = Mask::zeros(h, w);
  double mean = 0;
  for (float v : probs.values()) mean += v;
  mean /= static_cast<double>(probs.size());
  if (mean < no_fg_threshold) {
    result.no_foreground = true;
    return result;
  }
  auto vals = probs.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    result.mask.values[i] = vals[i] >= threshold ? 1 : 0;
  }
  return result;
}

#define COSEG_MODEL_INSTANTIATE(S)                                                   \
  template struct LatentDistT<S>;                                                    \
  template struct PrototypeT<S>;                                                     \
  template class DviceModelT<S>;                                                     \
  template NoiseFn<S> gaussian_noise<S>(Pcg32&);                                     \
  template TensorT<S> dvice_loss<S>(std::span<const TensorT<S>>,                     \
                                    std::span<const TensorT<S>>,                     \
                                    std::span<const LatentDistT<S>>,                 \
                                    const PrototypeT<S>&, S, S);

COSEG_MODEL_INSTANTIATE(float)
COSEG_MODEL_INSTANTIATE(double)
#undef COSEG_MODEL_INSTANTIATE

}  // namespace coseg
