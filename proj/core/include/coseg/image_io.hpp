#pragma once

#include <filesystem>

#include "coseg/mask.hpp"
#include "coseg/tensor.hpp"

namespace coseg {

// Binary portable images: P6 (8-bit RGB) for images, P5 (8-bit grayscale)
// for masks. Images map to planar 3 x H x W float tensors in [0,1]; mask
// pixels load as foreground when >= 128.

void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_pgm_mask(const std::filesystem::path& path);

}  // namespace coseg
