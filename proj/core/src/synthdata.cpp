#include "coseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "coseg/errors.hpp"
#include "coseg/image_io.hpp"
#include "coseg/rng.hpp"

namespace coseg {

std::string shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
    case ShapeKind::kCross: return "cross";
    case ShapeKind::kRing: return "ring";
    case ShapeKind::kDiamond: return "diamond";
  }
  throw ConfigError("unknown shape kind");
}

std::string texture_name(TextureKind kind) {
  switch (kind) {
    case TextureKind::kSolid: return "solid";
    case TextureKind::kStripes: return "stripes";
    case TextureKind::kChecker: return "checker";
  }
  throw ConfigError("unknown texture kind");
}

std::string class_name(ShapeKind shape, TextureKind texture) {
  return shape_name(shape) + "_" + texture_name(texture);
}

std::vector<std::string> CorpusConfig::class_names() const {
  std::vector<std::string> names;
  for (ShapeKind s : shapes) {
    for (TextureKind t : textures) names.push_back(class_name(s, t));
  }
  std::sort(names.begin(), names.end());
  return names;
}

void CorpusConfig::validate() const {
  if (shapes.empty() || textures.empty()) throw ConfigError("corpus: no shape/texture kinds");
  if (shapes.size() * textures.size() < 4) throw ConfigError("corpus: need at least 4 classes");
  if (samples_per_class < 1) throw ConfigError("corpus: samples_per_class must be >= 1");
  if (image_size < 16) throw ConfigError("corpus: image size too small");
  if (clutter_min < 0 || clutter_max < clutter_min) throw ConfigError("corpus: bad clutter range");
  if (noise_amplitude < 0.0f || noise_amplitude > 1.0f) {
    throw ConfigError("corpus: noise amplitude must lie in [0,1]");
  }
}

namespace {

// Half-extent of the shape's bounding box, for clamping centers into frame.
int bounding_radius(ShapeKind kind, double scale) {
  long s = std::lround(scale);
  switch (kind) {
    case ShapeKind::kCircle:
    case ShapeKind::kRing:
    case ShapeKind::kDiamond: return static_cast<int>(s);
    case ShapeKind::kSquare:
    case ShapeKind::kTriangle:
    case ShapeKind::kCross: return static_cast<int>(s / 2 + 1);
  }
  return static_cast<int>(s);
}

struct SupportFn {
  ShapeKind kind;
  int cx, cy;
  long a;  // primary extent (radius / side / height)
  long b;  // secondary extent (inner radius / thickness)

  bool operator()(int x, int y) const {
    long dx = x - cx, dy = y - cy;
    switch (kind) {
      case ShapeKind::kCircle: return dx * dx + dy * dy <= a * a;
      case ShapeKind::kRing: {
        long d2 = dx * dx + dy * dy;
        return d2 <= a * a && d2 > b * b;
      }
      case ShapeKind::kDiamond: return std::labs(dx) + std::labs(dy) <= a;
      case ShapeKind::kSquare: {
        long x0 = cx - a / 2, y0 = cy - a / 2;
        return x >= x0 && x < x0 + a && y >= y0 && y < y0 + a;
      }
      case ShapeKind::kTriangle: {
        long y0 = cy - a / 2;
        long r = y - y0;
        if (r < 0 || r >= a) return false;
        long hw = (a > 1) ? (r * (a / 2)) / (a - 1) : 0;
        return std::labs(dx) <= hw;
      }
      case ShapeKind::kCross: {
        long half = a / 2, t = std::max(1l, a / 6);
        return (std::labs(dx) <= half && std::labs(dy) <= t) ||
               (std::labs(dy) <= half && std::labs(dx) <= t);
      }
    }
    return false;
  }
};

std::array<float, 3> texture_color(TextureKind texture, int x, int y,
                                   const std::array<float, 3>& a,
                                   const std::array<float, 3>& b) {
  switch (texture) {
    case TextureKind::kSolid: return a;
    case TextureKind::kStripes: return (((x + y) / 3) % 2 == 0) ? a : b;
    case TextureKind::kChecker: return (((x / 4) + (y / 4)) % 2 == 0) ? a : b;
  }
  return a;
}

void blit(Tensor& canvas, const ShapePatch& shape) {
  auto dst = canvas.values_mut();
  auto src = shape.patch.values();
  const int h = shape.mask.height, w = shape.mask.width;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (std::int64_t i = 0; i < plane; ++i) {
    if (shape.mask.values[i]) {
      dst[i] = src[i];
      dst[plane + i] = src[plane + i];
      dst[2 * plane + i] = src[2 * plane + i];
    }
  }
}

// Object colors are random per sample: appearance alone never identifies a
// class, so matching has to run on shape and texture statistics.
std::array<float, 3> random_color(Pcg32& rng) {
  return {static_cast<float>(rng.uniform(0.25, 1.0)),
          static_cast<float>(rng.uniform(0.25, 1.0)),
          static_cast<float>(rng.uniform(0.25, 1.0))};
}

struct ClassDef {
  std::string name;
  ShapeKind shape;
  TextureKind texture;
};

std::vector<ClassDef> sorted_class_defs(const CorpusConfig& cfg) {
  std::vector<ClassDef> defs;
  for (ShapeKind s : cfg.shapes) {
    for (TextureKind t : cfg.textures) defs.push_back({class_name(s, t), s, t});
  }
  std::sort(defs.begin(), defs.end(),
            [](const ClassDef& a, const ClassDef& b) { return a.name < b.name; });
  return defs;
}

Tensor make_background(int size, float amplitude, Pcg32& rng) {
  auto img = Tensor::zeros({3, size, size});
  auto v = img.values_mut();
  const std::int64_t plane = static_cast<std::int64_t>(size) * size;
  float base[3] = {static_cast<float>(rng.uniform(0.0, 0.35)),
                   static_cast<float>(rng.uniform(0.0, 0.35)),
                   static_cast<float>(rng.uniform(0.0, 0.35))};
  for (int c = 0; c < 3; ++c) {
    for (std::int64_t i = 0; i < plane; ++i) {
      float val = base[c] + static_cast<float>(rng.uniform(0.0, amplitude));
      v[c * plane + i] = std::min(1.0f, std::max(0.0f, val));
    }
  }
  return img;
}

// Scale ranges are tuned for 64px frames and shrink proportionally below.
double dominant_scale(ShapeKind kind, int image_size, Pcg32& rng) {
  double f = image_size / 64.0;
  switch (kind) {
    case ShapeKind::kCircle: return f * rng.uniform(13.0, 17.0);
    case ShapeKind::kRing: return f * rng.uniform(14.0, 18.0);
    case ShapeKind::kDiamond: return f * rng.uniform(14.0, 18.0);
    case ShapeKind::kSquare: return f * rng.uniform(24.0, 30.0);
    case ShapeKind::kTriangle: return f * rng.uniform(28.0, 36.0);
    case ShapeKind::kCross: return f * rng.uniform(28.0, 36.0);
  }
  return f * 15.0;
}

// Dual-corpus objects use the dominant distribution, narrowed so each fits
// inside its own half of the frame.
double dual_scale(ShapeKind kind, int image_size, Pcg32& rng) {
  double f = image_size / 64.0;
  switch (kind) {
    case ShapeKind::kCircle: return f * rng.uniform(13.0, 15.0);
    case ShapeKind::kRing: return f * rng.uniform(14.0, 15.0);
    case ShapeKind::kDiamond: return f * rng.uniform(14.0, 15.0);
    case ShapeKind::kSquare: return f * rng.uniform(24.0, 28.0);
    case ShapeKind::kTriangle: return f * rng.uniform(27.0, 28.0);
    case ShapeKind::kCross: return f * rng.uniform(27.0, 28.0);
  }
  return f * 14.0;
}

// Clutter stays below the dominant range but close enough that size alone
// cannot identify the common object.
double clutter_scale(ShapeKind kind, int image_size, Pcg32& rng) {
  double f = image_size / 64.0;
  double lo, hi;
  switch (kind) {
    case ShapeKind::kCircle:
    case ShapeKind::kRing:
    case ShapeKind::kDiamond: lo = 6.0; hi = 11.0; break;
    default: lo = 12.0; hi = 20.0; break;
  }
  return std::max(1.0, f * rng.uniform(lo, hi));
}

struct Placement {
  int cx = 0;
  int cy = 0;
  int radius = 0;
};

Placement sample_placement(ShapeKind kind, int size, double scale, Pcg32& rng) {
  Placement p;
  p.radius = std::min(bounding_radius(kind, scale), size / 2 - 1);
  p.cx = p.radius + static_cast<int>(rng.uniform_int(
                        static_cast<std::uint32_t>(std::max(1, size - 2 * p.radius))));
  p.cy = p.radius + static_cast<int>(rng.uniform_int(
                        static_cast<std::uint32_t>(std::max(1, size - 2 * p.radius))));
  return p;
}

ShapePatch render_class_object(const std::vector<ClassDef>& defs, std::size_t class_index,
                               int size, int cx, int cy, double scale, Pcg32& rng) {
  const ClassDef& def = defs[class_index];
  auto primary = random_color(rng);
  auto secondary = random_color(rng);
  return render_shape(def.shape, size, cx, cy, scale, def.texture, primary, secondary);
}

// Renders one object of the given class at a random in-frame position, using
// the class palette.
ShapePatch place_class_object(const std::vector<ClassDef>& defs, std::size_t class_index,
                              int size, double scale, Pcg32& rng) {
  Placement at = sample_placement(defs[class_index].shape, size, scale, rng);
  return render_class_object(defs, class_index, size, at.cx, at.cy, scale, rng);
}

std::vector<std::size_t> other_shape_classes(const std::vector<ClassDef>& defs,
                                             const std::vector<ShapeKind>& excluded) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < defs.size(); ++i) {
    if (std::find(excluded.begin(), excluded.end(), defs[i].shape) == excluded.end()) {
      pool.push_back(i);
    }
  }
  return pool;
}

void add_clutter(Tensor& canvas, const CorpusConfig& cfg, const std::vector<ClassDef>& defs,
                 const std::vector<ShapeKind>& excluded, Pcg32& rng) {
  int count = cfg.clutter_min +
              static_cast<int>(rng.uniform_int(
                  static_cast<std::uint32_t>(cfg.clutter_max - cfg.clutter_min + 1)));
  std::vector<std::size_t> pool = other_shape_classes(defs, excluded);
  if (pool.empty()) return;
  for (int i = 0; i < count; ++i) {
    std::size_t ci = pool[rng.uniform_int(static_cast<std::uint32_t>(pool.size()))];
    double scale = clutter_scale(defs[ci].shape, cfg.image_size, rng);
    blit(canvas, place_class_object(defs, ci, cfg.image_size, scale, rng));
  }
}

struct ManifestRow {
  std::string class_id;
  std::string image_rel;
  std::string mask_rel;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const ManifestRow& row : rows) {
    out << row.class_id << "\t" << row.image_rel << "\t" << row.mask_rel << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

ShapePatch render_shape(ShapeKind kind, int image_size, int cx, int cy, double scale,
                        TextureKind texture, const std::array<float, 3>& color_a,
                        const std::array<float, 3>& color_b) {
  if (!(scale > 0.5)) throw ConfigError("render_shape: degenerate scale");
  long a = std::lround(scale);
  if (a < 1) throw ConfigError("render_shape: degenerate scale");
  int radius = bounding_radius(kind, scale);
  if (2 * radius + 1 > image_size) throw ConfigError("render_shape: shape larger than frame");
  cx = std::clamp(cx, radius, image_size - 1 - radius);
  cy = std::clamp(cy, radius, image_size - 1 - radius);

  long b = 0;
  if (kind == ShapeKind::kRing) b = std::min(a - 1, std::lround(0.55 * scale));
  SupportFn support{kind, cx, cy, a, b};

  ShapePatch out;
  out.patch = Tensor::zeros({3, image_size, image_size});
  out.mask = Mask::zeros(image_size, image_size);
  auto v = out.patch.values_mut();
  const std::int64_t plane = static_cast<std::int64_t>(image_size) * image_size;
  for (int y = std::max(0, cy - radius); y <= std::min(image_size - 1, cy + radius); ++y) {
    for (int x = std::max(0, cx - radius); x <= std::min(image_size - 1, cx + radius); ++x) {
      if (!support(x, y)) continue;
      std::int64_t i = static_cast<std::int64_t>(y) * image_size + x;
      out.mask.values[i] = 1;
      auto rgb = texture_color(texture, x, y, color_a, color_b);
      v[i] = rgb[0];
      v[plane + i] = rgb[1];
      v[2 * plane + i] = rgb[2];
    }
  }
  return out;
}

std::filesystem::path generate_corpus(const CorpusConfig& cfg,
                                      const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create corpus directories under " + out_dir.string());

  std::vector<ClassDef> defs = sorted_class_defs(cfg);
  std::vector<ManifestRow> rows;

  if (!cfg.dual_object) {
    for (std::size_t ci = 0; ci < defs.size(); ++ci) {
      const ClassDef& def = defs[ci];
      Pcg32 rng(cfg.seed, 1000 + ci);
      for (int i = 0; i < cfg.samples_per_class; ++i) {
        const int size = cfg.image_size;
        Tensor canvas = make_background(size, cfg.noise_amplitude, rng);

        // A competitor object differing in both shape and texture kind, drawn
        // from the same scale distribution as the dominant one: when present,
        // nothing but the guide set identifies which large object is common.
        std::vector<std::size_t> pool;
        for (std::size_t j = 0; j < defs.size(); ++j) {
          if (defs[j].shape != def.shape && defs[j].texture != def.texture) pool.push_back(j);
        }
        if (pool.empty()) pool = other_shape_classes(defs, {def.shape});
        std::size_t comp = pool[rng.uniform_int(static_cast<std::uint32_t>(pool.size()))];
        bool with_competitor = rng.next_float() < cfg.competitor_probability;

        add_clutter(canvas, cfg, defs, {def.shape, defs[comp].shape}, rng);

        double dom_scale = dominant_scale(def.shape, size, rng);
        Placement dom_at = sample_placement(def.shape, size, dom_scale, rng);
        if (with_competitor) {
          double comp_scale = dominant_scale(defs[comp].shape, size, rng);
          Placement comp_at{};
          for (int attempt = 0; attempt < 40; ++attempt) {
            comp_at = sample_placement(defs[comp].shape, size, comp_scale, rng);
            long dx = comp_at.cx - dom_at.cx, dy = comp_at.cy - dom_at.cy;
            long min_dist = std::lround(0.9 * (comp_at.radius + dom_at.radius));
            if (dx * dx + dy * dy >= min_dist * min_dist) break;
          }
          blit(canvas, render_class_object(defs, comp, size, comp_at.cx, comp_at.cy,
                                           comp_scale, rng));
        }
        ShapePatch dominant =
            render_class_object(defs, ci, size, dom_at.cx, dom_at.cy, dom_scale, rng);
        blit(canvas, dominant);

        char stem[64];
        std::snprintf(stem, sizeof(stem), "%s_%03d", def.name.c_str(), i);
        std::string image_rel = std::string("images/") + stem + ".ppm";
        std::string mask_rel = std::string("masks/") + stem + ".pgm";
        write_ppm(out_dir / image_rel, canvas);
        write_pgm(out_dir / mask_rel, dominant.mask);
        rows.push_back({def.name, image_rel, mask_rel});
      }
    }
  } else {
    // Deterministic disjoint class pairing; each pair shares its images.
    // Partners differ in both shape and texture kind whenever possible.
    std::vector<std::size_t> shuffled(defs.size());
    for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i] = i;
    Pcg32 pair_rng(cfg.seed, 999);
    pair_rng.shuffle(shuffled);
    std::vector<std::size_t> order;
    std::vector<bool> used(defs.size(), false);
    for (std::size_t i = 0; i < shuffled.size(); ++i) {
      if (used[shuffled[i]]) continue;
      std::size_t a = shuffled[i];
      std::size_t partner = a;
      for (std::size_t j = i + 1; j < shuffled.size(); ++j) {
        std::size_t b = shuffled[j];
        if (used[b]) continue;
        if (defs[a].shape != defs[b].shape && defs[a].texture != defs[b].texture) {
          partner = b;
          break;
        }
      }
      if (partner == a) {
        for (std::size_t j = i + 1; j < shuffled.size(); ++j) {
          if (!used[shuffled[j]]) {
            partner = shuffled[j];
            break;
          }
        }
      }
      if (partner == a) break;  // odd leftover
      used[a] = used[partner] = true;
      order.push_back(a);
      order.push_back(partner);
    }
    const int size = cfg.image_size;
    for (std::size_t p = 0; p + 1 < order.size(); p += 2) {
      const ClassDef& a = defs[order[p]];
      const ClassDef& b = defs[order[p + 1]];
      Pcg32 rng(cfg.seed, 2000 + p);
      for (int i = 0; i < cfg.samples_per_class; ++i) {
        Tensor canvas = make_background(size, cfg.noise_amplitude, rng);
        add_clutter(canvas, cfg, defs, {a.shape, b.shape}, rng);

        // Two full-scale objects in disjoint halves; draw order cannot
        // matter, so both masks stay exact.
        bool a_left = rng.uniform_int(2) == 0;
        auto place = [&](std::size_t def_index, bool left) {
          const ClassDef& def = defs[def_index];
          double scale = dual_scale(def.shape, size, rng);
          int margin = bounding_radius(def.shape, scale);
          int lo = left ? margin : size / 2 + margin;
          int hi = left ? size / 2 - 1 - margin : size - 1 - margin;
          int cx = lo + static_cast<int>(rng.uniform_int(
                            static_cast<std::uint32_t>(std::max(1, hi - lo + 1))));
          int cy = margin + static_cast<int>(rng.uniform_int(
                                static_cast<std::uint32_t>(std::max(1, size - 2 * margin))));
          return render_shape(def.shape, size, cx, cy, scale, def.texture, random_color(rng),
                              random_color(rng));
        };
        ShapePatch shape_a = place(order[p], a_left);
        ShapePatch shape_b = place(order[p + 1], !a_left);
        blit(canvas, shape_a);
        blit(canvas, shape_b);

        char stem[64];
        std::snprintf(stem, sizeof(stem), "pair%02zu_%03d", p / 2, i);
        std::string image_rel = std::string("images/") + stem + ".ppm";
        write_ppm(out_dir / image_rel, canvas);
        std::string mask_a = std::string("masks/") + stem + "_a.pgm";
        std::string mask_b = std::string("masks/") + stem + "_b.pgm";
        write_pgm(out_dir / mask_a, shape_a.mask);
        write_pgm(out_dir / mask_b, shape_b.mask);
        rows.push_back({a.name, image_rel, mask_a});
        rows.push_back({b.name, image_rel, mask_b});
      }
    }
  }

  std::sort(rows.begin(), rows.end(), [](const ManifestRow& x, const ManifestRow& y) {
    return std::tie(x.class_id, x.image_rel) < std::tie(y.class_id, y.image_rel);
  });
  std::filesystem::path manifest = out_dir / "manifest.tsv";
  write_manifest(manifest, rows);
  return manifest;
}

}  // namespace coseg
