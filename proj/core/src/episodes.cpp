#include "coseg/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "coseg/image_io.hpp"

namespace coseg {

Dataset Dataset::load(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  const std::filesystem::path root = manifest_path.parent_path();

  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string class_id, image_rel, mask_rel;
    if (!std::getline(row, class_id, '\t') || !std::getline(row, image_rel, '\t') ||
        !std::getline(row, mask_rel) || class_id.empty() || image_rel.empty() ||
        mask_rel.empty()) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) +
                        ": expected class_id<TAB>image_path<TAB>mask_path");
    }
    Sample s;
    s.image = read_ppm(root / image_rel);
    s.mask = read_pgm_mask(root / mask_rel);
    if (s.mask.height != s.image.shape()[1] || s.mask.width != s.image.shape()[2]) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) +
                        ": mask dimensions do not match image");
    }
    s.class_id = class_id;
    ds.by_class[class_id].push_back(static_cast<int>(ds.samples.size()));
    ds.samples.push_back(std::move(s));
  }
  for (const auto& [cls, idx] : ds.by_class) ds.classes.push_back(cls);
  return ds;
}

void EpisodeConfig::validate() const {
  if (guide_size < 1) throw ConfigError("episode: guide size k must be >= 1");
  if (positive_count < 1 || positive_count > guide_size) {
    throw ConfigError("episode: positive count n must satisfy 1 <= n <= k");
  }
  if (coseg_size < 1) throw ConfigError("episode: co-seg size m must be >= 1");
}

ModelEpisode strip_labels(const Episode& episode) {
  ModelEpisode view;
  for (const Sample& s : episode.guide) view.guide_images.push_back(s.image);
  for (const Sample& s : episode.coseg) {
    view.coseg_images.push_back(s.image);
    view.coseg_masks.push_back(s.mask);
  }
  return view;
}

ClassSplit split_classes(std::vector<std::string> classes, double target_fraction,
                         std::uint64_t seed) {
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw ConfigError("split_classes: need at least 2 classes");
  if (!(target_fraction > 0.0 && target_fraction < 1.0)) {
    throw ConfigError("split_classes: target fraction must be in (0,1)");
  }
  std::size_t target_count =
      static_cast<std::size_t>(std::llround(target_fraction * static_cast<double>(classes.size())));
  if (target_count < 1 || target_count >= classes.size()) {
    throw ConfigError("split_classes: fraction leaves a side empty");
  }
  Pcg32 rng(seed);
  rng.shuffle(classes);
  ClassSplit split;
  split.target_classes.assign(classes.begin(), classes.begin() + target_count);
  split.base_classes.assign(classes.begin() + target_count, classes.end());
  std::sort(split.target_classes.begin(), split.target_classes.end());
  std::sort(split.base_classes.begin(), split.base_classes.end());
  return split;
}

Episode sample_episode(const Dataset& dataset, std::span<const std::string> side_classes,
                       const EpisodeConfig& cfg, Pcg32& rng) {
  cfg.validate();
  if (side_classes.empty()) throw ConfigError("sample_episode: no classes to sample from");
  const int needed_dominant = cfg.positive_count + cfg.coseg_size;

  std::vector<std::string> eligible;
  for (const std::string& cls : side_classes) {
    auto it = dataset.by_class.find(cls);
    if (it == dataset.by_class.end()) {
      throw ConfigError("sample_episode: class '" + cls + "' not in dataset");
    }
    if (static_cast<int>(it->second.size()) >= needed_dominant) eligible.push_back(cls);
  }
  if (eligible.empty()) {
    throw ConfigError("sample_episode: no class has the required " +
                      std::to_string(needed_dominant) + " samples");
  }
  const std::string dominant = eligible[rng.uniform_int(static_cast<std::uint32_t>(eligible.size()))];

  std::vector<int> pool = dataset.by_class.at(dominant);
  rng.shuffle(pool);

  Episode ep;
  ep.dominant_class = dominant;
  for (int i = 0; i < cfg.positive_count; ++i) ep.guide.push_back(dataset.samples[pool[i]]);
  for (int i = 0; i < cfg.coseg_size; ++i) {
    ep.coseg.push_back(dataset.samples[pool[cfg.positive_count + i]]);
  }

  const int outlier_count = cfg.guide_size - cfg.positive_count;
  if (outlier_count > 0) {
    std::vector<int> outlier_pool;
    for (const std::string& cls : side_classes) {
      if (cls == dominant) continue;
      for (int idx : dataset.by_class.at(cls)) outlier_pool.push_back(idx);
    }
    if (static_cast<int>(outlier_pool.size()) < outlier_count) {
      throw ConfigError("sample_episode: not enough outlier samples (" +
                        std::to_string(outlier_pool.size()) + " < " +
                        std::to_string(outlier_count) + ")");
    }
    rng.shuffle(outlier_pool);
    for (int i = 0; i < outlier_count; ++i) ep.guide.push_back(dataset.samples[outlier_pool[i]]);
  }
  rng.shuffle(ep.guide);
  return ep;
}

namespace {

template <class GetPixel, class SetPixel>
void rotate_plane(int h, int w, int quarter_turns, GetPixel get, SetPixel set) {
  // One counterclockwise quarter turn sends (row y, col x) to (row w-1-x, col y).
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int ny = y, nx = x;
      int ch = h, cw = w;
      for (int q = 0; q < quarter_turns; ++q) {
        int ty = cw - 1 - nx;
        int tx = ny;
        ny = ty;
        nx = tx;
        std::swap(ch, cw);
      }
      set(ny, nx, get(y, x));
    }
  }
}

}  // namespace

Tensor rotate90(const Tensor& image, int quarter_turns) {
  if (image.rank() != 3) throw ShapeError("rotate90: expected C x H x W tensor");
  quarter_turns = ((quarter_turns % 4) + 4) % 4;
  const int c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  const int oh = (quarter_turns % 2 == 0) ? h : w;
  const int ow = (quarter_turns % 2 == 0) ? w : h;
  auto out = Tensor::zeros({c, oh, ow});
  auto src = image.values();
  auto dst = out.values_mut();
  const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;
  for (int ci = 0; ci < c; ++ci) {
    rotate_plane(
        h, w, quarter_turns,
        [&](int y, int x) { return src[ci * in_plane + static_cast<std::int64_t>(y) * w + x]; },
        [&](int y, int x, float v) {
          dst[ci * out_plane + static_cast<std::int64_t>(y) * ow + x] = v;
        });
  }
  return out;
}

Mask rotate90(const Mask& mask, int quarter_turns) {
  quarter_turns = ((quarter_turns % 4) + 4) % 4;
  const int oh = (quarter_turns % 2 == 0) ? mask.height : mask.width;
  const int ow = (quarter_turns % 2 == 0) ? mask.width : mask.height;
  Mask out = Mask::zeros(oh, ow);
  rotate_plane(
      mask.height, mask.width, quarter_turns,
      [&](int y, int x) { return mask.at(y, x); },
      [&](int y, int x, std::uint8_t v) { out.at(y, x) = v; });
  return out;
}

Tensor flip_horizontal(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("flip_horizontal: expected C x H x W tensor");
  const int c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  auto out = Tensor::zeros({c, h, w});
  auto src = image.values();
  auto dst = out.values_mut();
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < h; ++y) {
      const std::int64_t row = (static_cast<std::int64_t>(ci) * h + y) * w;
      for (int x = 0; x < w; ++x) dst[row + x] = src[row + (w - 1 - x)];
    }
  }
  return out;
}

Mask flip_horizontal(const Mask& mask) {
  Mask out = Mask::zeros(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) out.at(y, x) = mask.at(y, mask.width - 1 - x);
  }
  return out;
}

Tensor mask_to_tensor(const Mask& mask) {
  std::vector<float> data(mask.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = mask.values[i] ? 1.0f : 0.0f;
  return Tensor::from_data({1, mask.height, mask.width}, std::move(data));
}

Sample augment(const Sample& sample, Pcg32& rng) {
  int quarter_turns = static_cast<int>(rng.uniform_int(4));
  bool flip = rng.uniform_int(2) == 1;
  Sample out;
  out.class_id = sample.class_id;
  out.image = rotate90(sample.image, quarter_turns);
  out.mask = rotate90(sample.mask, quarter_turns);
  if (flip) {
    out.image = flip_horizontal(out.image);
    out.mask = flip_horizontal(out.mask);
  }
  return out;
}

}  // namespace coseg
