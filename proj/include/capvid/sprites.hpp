#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "capvid/rng.hpp"

namespace capvid {

// A bank of grayscale digit sprites, several variants per digit class.
struct SpriteSet {
  int size = 28;  // sprites are size x size, row-major uint8
  std::array<std::vector<std::vector<uint8_t>>, 10> variants;

  const std::vector<uint8_t>& pick(int digit, Rng& rng) const;
};

// Loads sprites from an IDX image/label file pair (the standard serialized
// form of handwritten-digit datasets). Throws IoError if the files are
// missing, FormatError on malformed contents.
SpriteSet load_idx_sprites(const std::filesystem::path& images_path,
                           const std::filesystem::path& labels_path,
                           int max_per_digit = 256);

// Deterministic built-in sprite bank: stroke-rendered digits with small
// seeded shape jitter, used when no external sprite files are configured.
const SpriteSet& builtin_sprites();

}  // namespace capvid
