#pragma once

#include <filesystem>

#include "coseg/episodes.hpp"
#include "coseg/model.hpp"

namespace coseg {

// Percentage of pixels labelled correctly, foreground and background alike.
double precision_percent(const Mask& pred, const Mask& truth);

// Foreground intersection over union; two empty masks agree perfectly (1.0).
double jaccard(const Mask& pred, const Mask& truth);

struct EvalReport {
  std::vector<double> precisions;  // per episode, percent
  std::vector<double> jaccards;    // per episode, fraction
  double mean_precision = 0.0;
  double mean_jaccard = 0.0;
  int episodes = 0;
};

struct EvalOptions {
  float binarize_threshold = 0.5f;
  float no_fg_threshold = 0.1f;
};

// Samples num_episodes eval-mode episodes, segments and binarizes each co-seg
// image, and scores it against the ground truth. NO_FOREGROUND results score
// as all-background masks.
EvalReport evaluate(const DviceModel& model, const Dataset& dataset,
                    std::span<const std::string> classes, const EpisodeConfig& cfg,
                    int num_episodes, Pcg32& rng, const EvalOptions& options = {});

// Same protocol with an arbitrary segmenter (guide images, co-seg images ->
// probability masks); the model overload delegates here.
using SegmentFn = std::function<std::vector<Tensor>(std::span<const Tensor>,
                                                    std::span<const Tensor>)>;
EvalReport evaluate_with(const SegmentFn& segment, const Dataset& dataset,
                         std::span<const std::string> classes, const EpisodeConfig& cfg,
                         int num_episodes, Pcg32& rng, const EvalOptions& options = {});

// CSV: header episode_id,precision,jaccard; one row per episode plus a final
// mean row.
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);

// One CSV row per dataset sample: class_id plus the spatially averaged latent
// mean vector (length C_z). Header: class_id,e0,...,e{C_z-1}.
void export_embeddings(const DviceModel& model, const Dataset& dataset,
                       const std::filesystem::path& path);

}  // namespace coseg
