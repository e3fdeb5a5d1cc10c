#pragma once

#include <stdexcept>
#include <string>

namespace capvid {

// Invalid user-supplied configuration (dimensions, modes, flag combinations).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed on-disk data (bad magic, truncation, count disagreement).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem-level failure (missing file, unwritable path).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Tensor dimension disagreement between operands.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Training aborted (non-finite loss, incompatible checkpoint).
struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace capvid
