#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "capvid/rng.hpp"

namespace capvid {

enum class Motion { UpDown, LeftRight };

std::string motion_phrase(Motion m);  // "up and down" / "left and right"

// Per-digit generation record: identity, motion label, initial top-left
// position and per-frame velocity in pixels.
struct DigitMeta {
  int digit = 0;
  Motion motion = Motion::UpDown;
  int row0 = 0, col0 = 0;
  int vr = 0, vc = 0;

  bool operator==(const DigitMeta&) const = default;
};

struct SampleMeta {
  std::string caption;
  std::vector<DigitMeta> digits;
  uint64_t seed = 0;

  bool operator==(const SampleMeta&) const = default;
};

// On-disk/in-memory dataset: packed uint8 pixels plus one meta record per
// sample. Pixels are sample-major, then frame-major, row-major, channel
// interleaved.
struct DatasetContainer {
  uint32_t n = 0, H = 0, W = 0, C = 1;
  std::vector<uint8_t> pixels;
  std::vector<SampleMeta> meta;

  size_t count() const { return meta.size(); }
  size_t frame_bytes() const { return static_cast<size_t>(H) * W * C; }
  size_t sample_bytes() const { return frame_bytes() * n; }
  const uint8_t* frame_ptr(size_t sample, size_t frame) const {
    return pixels.data() + sample * sample_bytes() + frame * frame_bytes();
  }
  uint8_t* frame_ptr(size_t sample, size_t frame) {
    return pixels.data() + sample * sample_bytes() + frame * frame_bytes();
  }

  bool operator==(const DatasetContainer&) const = default;
};

// A single video with pixel values in [0,1]; each frame is a (C, H*W) matrix
// whose rows are row-major image planes.
struct VideoSample {
  int H = 0, W = 0, C = 1;
  std::vector<Eigen::MatrixXd> frames;
  std::string caption;
  SampleMeta meta;
};

struct SynthConfig {
  std::vector<int> digits = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  bool allow_updown = true;
  bool allow_leftright = true;
  int samples_per_class = 1;
  int n = 10;
  int H = 64, W = 64;
  int sprite_size = 28;
  int speed_min = 2, speed_max = 4;
  uint64_t seed = 0;
  // One-digit captions default to the "is going" phrasing; this switches them
  // to "is moving" so both dataset kinds share one grammar.
  bool canonical_moving = false;
  // Empty paths select the built-in sprite bank.
  std::string sprite_images;
  std::string sprite_labels;
};

void validate_config(const SynthConfig& cfg);

DatasetContainer synth_one_digit(const SynthConfig& cfg);
DatasetContainer synth_two_digit(const SynthConfig& cfg);

VideoSample extract_sample(const DatasetContainer& d, size_t index);

// Returns a copy with an all-zero start-of-video frame prepended.
VideoSample prepend_sov(const VideoSample& sample);

struct HeldoutSplit {
  DatasetContainer train;
  std::vector<std::string> test_captions;
};

// Withholds exactly one motion assignment per digit (or digit pair) from the
// training set and emits the withheld caption strings.
HeldoutSplit split_heldout_captions(const DatasetContainer& d, uint64_t seed);

void save_container(const DatasetContainer& d, const std::filesystem::path& path);
DatasetContainer load_container(const std::filesystem::path& path);

// Builds a container from a directory of per-video frame image files (PGM or
// PPM) and a manifest of lines "<video-dir-name>\t<caption>". Frames are
// resized to H x W; H==0 or W==0 adopts the first frame's size. C must be 1
// (luminance) or 3.
DatasetContainer ingest_frames(const std::filesystem::path& dir,
                               const std::filesystem::path& manifest_path, int H, int W,
                               int C = 1);

// Caption template grammar.
std::string one_digit_caption(int digit, Motion m, bool canonical_moving = false);
std::string two_digit_caption(int d1, Motion m1, int d2, Motion m2);
std::optional<std::vector<std::pair<int, Motion>>> parse_caption(const std::string& caption);

// One reflected constant-speed step on [0, limit].
std::pair<int, int> reflect_step(int pos, int vel, int limit);

}  // namespace capvid
