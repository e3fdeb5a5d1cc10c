#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace capvid::img {

// Row-major, channel-interleaved 8-bit image.
struct ImageU8 {
  int h = 0, w = 0, c = 1;
  std::vector<uint8_t> data;

  uint8_t at(int y, int x, int ch = 0) const { return data[(y * w + x) * c + ch]; }
  uint8_t& at(int y, int x, int ch = 0) { return data[(y * w + x) * c + ch]; }
};

// Reads a binary or ASCII PGM/PPM file (P2/P3/P5/P6). Throws IoError /
// FormatError on failure.
ImageU8 read_pnm(const std::filesystem::path& path);

// Writes a binary PGM (c=1) or PPM (c=3).
void write_pnm(const std::filesystem::path& path, const ImageU8& image);

ImageU8 resize_bilinear(const ImageU8& src, int out_h, int out_w);

ImageU8 to_grayscale(const ImageU8& src);

// Writes an animated GIF (infinite loop) from grayscale or RGB frames; for
// 8-bit grayscale input the encoding is lossless.
void write_gif(const std::filesystem::path& path, const std::vector<ImageU8>& frames,
               int delay_centiseconds);

}  // namespace capvid::img
