#include "coseg/metrics.hpp"

#include <cstdio>
#include <fstream>

namespace coseg {

namespace {

void require_pair(const Mask& pred, const Mask& truth) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw ShapeError("mask pair dimensions differ");
  }
  for (std::uint8_t v : pred.values) {
    if (v > 1) throw ValueError("mask values must be 0 or 1");
  }
  for (std::uint8_t v : truth.values) {
    if (v > 1) throw ValueError("mask values must be 0 or 1");
  }
}

}  // namespace

double precision_percent(const Mask& pred, const Mask& truth) {
  require_pair(pred, truth);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    correct += (pred.values[i] == truth.values[i]) ? 1 : 0;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.values.size());
}

double jaccard(const Mask& pred, const Mask& truth) {
  require_pair(pred, truth);
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    inter += (pred.values[i] & truth.values[i]);
    uni += (pred.values[i] | truth.values[i]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

EvalReport evaluate(const DviceModel& model, const Dataset& dataset,
                    std::span<const std::string> classes, const EpisodeConfig& cfg,
                    int num_episodes, Pcg32& rng, const EvalOptions& options) {
  NoiseFn<float> no_noise = [](const Shape&) -> Tensor {
    throw ValueError("noise requested during eval");
  };
  SegmentFn segment = [&](std::span<const Tensor> guide, std::span<const Tensor> coseg) {
    return model.segment_episode(guide, coseg, RunMode::kEval, no_noise);
  };
  return evaluate_with(segment, dataset, classes, cfg, num_episodes, rng, options);
}

EvalReport evaluate_with(const SegmentFn& segment, const Dataset& dataset,
                         std::span<const std::string> classes, const EpisodeConfig& cfg,
                         int num_episodes, Pcg32& rng, const EvalOptions& options) {
  if (num_episodes < 1) throw ConfigError("evaluate: num_episodes must be >= 1");

  EvalReport report;
  for (int e = 0; e < num_episodes; ++e) {
    Episode episode = sample_episode(dataset, classes, cfg, rng);
    ModelEpisode view = strip_labels(episode);
    std::vector<Tensor> masks = segment(view.guide_images, view.coseg_images);
    double p = 0, j = 0;
    for (std::size_t i = 0; i < masks.size(); ++i) {
      BinarizeResult bin =
          binarize(masks[i], options.binarize_threshold, options.no_fg_threshold);
      p += precision_percent(bin.mask, view.coseg_masks[i]);
      j += jaccard(bin.mask, view.coseg_masks[i]);
    }
    report.precisions.push_back(p / static_cast<double>(masks.size()));
    report.jaccards.push_back(j / static_cast<double>(masks.size()));
  }
  report.episodes = num_episodes;
  double sp = 0, sj = 0;
  for (double v : report.precisions) sp += v;
  for (double v : report.jaccards) sj += v;
  report.mean_precision = sp / num_episodes;
  report.mean_jaccard = sj / num_episodes;
  return report;
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "episode_id,precision,jaccard\n";
  char line[96];
  for (int e = 0; e < report.episodes; ++e) {
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f\n", e, report.precisions[e],
                  report.jaccards[e]);
    out << line;
  }
  std::snprintf(line, sizeof(line), "mean,%.6f,%.6f\n", report.mean_precision,
                report.mean_jaccard);
  out << line;
  if (!out) throw IoError("failed writing " + path.string());
}

void export_embeddings(const DviceModel& model, const Dataset& dataset,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const int cz = model.config().latent_channels;
  out << "class_id";
  for (int i = 0; i < cz; ++i) out << ",e" << i;
  out << "\n";
  char buf[32];
  for (const Sample& sample : dataset.samples) {
    auto [dist, skips] = model.encode(sample.image);
    Tensor pooled = pool_spatial_global(dist.mean, PoolMode::kAvg);
    out << sample.class_id;
    for (float v : pooled.values()) {
      std::snprintf(buf, sizeof(buf), ",%.8g", v);
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace coseg
