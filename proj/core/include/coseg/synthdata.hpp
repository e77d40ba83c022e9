#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "coseg/mask.hpp"
#include "coseg/tensor.hpp"

namespace coseg {

enum class ShapeKind { kCircle, kSquare, kTriangle, kCross, kRing, kDiamond };
enum class TextureKind { kSolid, kStripes, kChecker };

std::string shape_name(ShapeKind kind);
std::string texture_name(TextureKind kind);
std::string class_name(ShapeKind shape, TextureKind texture);

// Synthetic corpus: one dominant textured shape per image over a noisy
// background with reduced-scale clutter shapes borrowed from other classes.
// The mask is the exact raster support of the dominant shape.
struct CorpusConfig {
  std::vector<ShapeKind> shapes = {ShapeKind::kCircle,   ShapeKind::kSquare,
                                   ShapeKind::kTriangle, ShapeKind::kCross,
                                   ShapeKind::kRing,     ShapeKind::kDiamond};
  std::vector<TextureKind> textures = {TextureKind::kSolid, TextureKind::kStripes};
  int samples_per_class = 24;
  int image_size = 64;
  int clutter_min = 2;
  int clutter_max = 5;
  // Chance that an image carries a full-scale competitor object of another
  // class. Symmetric by construction: nothing but the guide set identifies
  // which of the two large objects is the common one.
  float competitor_probability = 0.5f;
  float noise_amplitude = 0.12f;
  // Places two full-scale objects of different classes per image; every image
  // then appears in the manifest once per object, each with its own mask.
  bool dual_object = false;
  std::uint64_t seed = 0;

  std::vector<std::string> class_names() const;
  void validate() const;
};

struct ShapePatch {
  Tensor patch;  // 3 x S x S, textured inside the support, zero elsewhere
  Mask mask;     // exact raster support
};

// Rasterizes one shape. `scale` is the radius for circle/ring/diamond, the
// side for square, and the full extent for triangle/cross. The center is
// clamped so the shape fits the frame; a degenerate scale is an error.
ShapePatch render_shape(ShapeKind kind, int image_size, int cx, int cy, double scale,
                        TextureKind texture, const std::array<float, 3>& color_a,
                        const std::array<float, 3>& color_b);

// Writes images/, masks/ and manifest.tsv under out_dir; fully determined by
// the config (per-class derived seeds). Returns the manifest path.
std::filesystem::path generate_corpus(const CorpusConfig& cfg,
                                      const std::filesystem::path& out_dir);

}  // namespace coseg
