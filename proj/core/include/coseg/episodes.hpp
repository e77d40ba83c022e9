#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "coseg/mask.hpp"
#include "coseg/rng.hpp"
#include "coseg/tensor.hpp"

namespace coseg {

// One annotated image. class_id exists for the sampler only; the model-facing
// episode view below carries no label of any kind.
struct Sample {
  Tensor image;  // 3 x H x W, values in [0,1]
  Mask mask;
  std::string class_id;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> classes;                 // sorted, unique
  std::map<std::string, std::vector<int>> by_class; // indices into samples

  // Loads the directory contract: manifest.tsv rows of
  // class_id <TAB> image_path <TAB> mask_path, paths relative to the manifest.
  static Dataset load(const std::filesystem::path& manifest_path);
};

struct EpisodeConfig {
  int guide_size = 8;      // k
  int positive_count = 6;  // n, the guide members of the dominant class
  int coseg_size = 4;      // m
  void validate() const;
};

struct Episode {
  std::vector<Sample> guide;
  std::vector<Sample> coseg;
  std::string dominant_class;
};

// What the model is allowed to see: images, plus the masks being learned on
// the co-seg side. No guide masks, no class identifiers.
struct ModelEpisode {
  std::vector<Tensor> guide_images;
  std::vector<Tensor> coseg_images;
  std::vector<Mask> coseg_masks;
};

ModelEpisode strip_labels(const Episode& episode);

struct ClassSplit {
  std::vector<std::string> base_classes;
  std::vector<std::string> target_classes;
};

// Deterministic disjoint split; target gets round(fraction * n) classes and
// both sides must end up non-empty.
ClassSplit split_classes(std::vector<std::string> classes, double target_fraction,
                         std::uint64_t seed);

// Draws a dominant class uniformly from side_classes, then n positives and m
// co-seg samples from it (disjoint) and k-n outliers from the side's other
// classes.
Episode sample_episode(const Dataset& dataset, std::span<const std::string> side_classes,
                       const EpisodeConfig& cfg, Pcg32& rng);

// Random right-angle rotation plus an independent horizontal-flip coin,
// applied identically to image and mask.
Sample augment(const Sample& sample, Pcg32& rng);

// Quarter-turn rotation helpers (exposed for tests).
Tensor rotate90(const Tensor& image, int quarter_turns);
Mask rotate90(const Mask& mask, int quarter_turns);
Tensor flip_horizontal(const Tensor& image);
Mask flip_horizontal(const Mask& mask);

// Mask as a 1 x H x W float tensor of zeros and ones (loss targets).
Tensor mask_to_tensor(const Mask& mask);

}  // namespace coseg
