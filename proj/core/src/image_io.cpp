#include "coseg/image_io.hpp"

#include <cmath>
#include <fstream>
#include <string>

namespace coseg {

namespace {

void skip_pnm_whitespace(std::istream& in) {
  int c = in.peek();
  while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else {
      in.get();
    }
    c = in.peek();
  }
}

int read_pnm_int(std::istream& in, const std::filesystem::path& path) {
  skip_pnm_whitespace(in);
  int v = -1;
  in >> v;
  if (!in || v < 0) throw FormatError("malformed PNM header in " + path.string());
  return v;
}

std::vector<std::uint8_t> read_pnm_payload(const std::filesystem::path& path,
                                           const std::string& magic, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string found(2, '\0');
  in.read(found.data(), 2);
  if (!in || found != magic) {
    throw FormatError(path.string() + ": expected " + magic + " image");
  }
  width = read_pnm_int(in, path);
  height = read_pnm_int(in, path);
  int maxval = read_pnm_int(in, path);
  if (maxval != 255) throw FormatError(path.string() + ": only maxval 255 supported");
  in.get();  // single whitespace before payload
  std::size_t channels = (magic == "P6") ? 3 : 1;
  std::vector<std::uint8_t> data(static_cast<std::size_t>(width) * height * channels);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (static_cast<std::size_t>(in.gcount()) != data.size()) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return data;
}

std::uint8_t to_byte(float v) {
  float scaled = std::lround(std::min(1.0f, std::max(0.0f, v)) * 255.0f);
  return static_cast<std::uint8_t>(scaled);
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.shape()[0] != 3) {
    throw ShapeError("write_ppm: expected 3 x H x W image, got " + shape_str(image.shape()));
  }
  const int h = image.shape()[1], w = image.shape()[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << w << " " << h << "\n255\n";
  auto v = image.values();
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::int64_t i = static_cast<std::int64_t>(y) * w + x;
      row[3 * x + 0] = to_byte(v[i]);
      row[3 * x + 1] = to_byte(v[plane + i]);
      row[3 * x + 2] = to_byte(v[2 * plane + i]);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto bytes = read_pnm_payload(path, "P6", w, h);
  std::vector<float> data(static_cast<std::size_t>(3) * h * w);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (std::int64_t i = 0; i < plane; ++i) {
    data[i] = bytes[3 * i + 0] / 255.0f;
    data[plane + i] = bytes[3 * i + 1] / 255.0f;
    data[2 * plane + i] = bytes[3 * i + 2] / 255.0f;
  }
  return Tensor::from_data({3, h, w}, std::move(data));
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<std::uint8_t> bytes(mask.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.values[i] ? 255 : 0;
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Mask read_pgm_mask(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto bytes = read_pnm_payload(path, "P5", w, h);
  Mask mask = Mask::zeros(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) mask.values[i] = bytes[i] >= 128 ? 1 : 0;
  return mask;
}

}  // namespace coseg
