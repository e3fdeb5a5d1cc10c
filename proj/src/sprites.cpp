#include "capvid/sprites.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "capvid/errors.hpp"

namespace capvid {

const std::vector<uint8_t>& SpriteSet::pick(int digit, Rng& rng) const {
  const auto& v = variants.at(static_cast<size_t>(digit));
  if (v.empty()) throw ConfigError("no sprites available for digit " + std::to_string(digit));
  return v[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(v.size()) - 1))];
}

namespace {

uint32_t read_u32_be(std::istream& in) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("idx: truncated header");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | b[3];
}

}  // namespace

SpriteSet load_idx_sprites(const std::filesystem::path& images_path,
                           const std::filesystem::path& labels_path, int max_per_digit) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw IoError("missing sprite source: " + images_path.string());
  std::ifstream lbls(labels_path, std::ios::binary);
  if (!lbls) throw IoError("missing sprite source: " + labels_path.string());

  if (read_u32_be(imgs) != 0x00000803u) throw FormatError("idx: bad image magic");
  if (read_u32_be(lbls) != 0x00000801u) throw FormatError("idx: bad label magic");
  const uint32_t n_img = read_u32_be(imgs);
  const uint32_t rows = read_u32_be(imgs);
  const uint32_t cols = read_u32_be(imgs);
  const uint32_t n_lbl = read_u32_be(lbls);
  if (n_img != n_lbl) throw FormatError("idx: image/label count mismatch");
  if (rows != cols) throw FormatError("idx: sprites must be square");

  SpriteSet set;
  set.size = static_cast<int>(rows);
  std::vector<uint8_t> buf(rows * cols);
  for (uint32_t i = 0; i < n_img; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!imgs) throw FormatError("idx: truncated image data");
    char lab;
    lbls.get(lab);
    if (!lbls) throw FormatError("idx: truncated label data");
    if (lab < 0 || lab > 9) throw FormatError("idx: label out of range");
    auto& bucket = set.variants[static_cast<size_t>(lab)];
    if (static_cast<int>(bucket.size()) < max_per_digit) bucket.push_back(buf);
  }
  for (int d = 0; d < 10; ++d)
    if (set.variants[static_cast<size_t>(d)].empty())
      throw FormatError("idx: no sprites for digit " + std::to_string(d));
  return set;
}

namespace {

struct Pt {
  double x, y;
};

// Each digit is a set of polylines in a unit box, y down.
using Stroke = std::vector<Pt>;

Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1, int steps = 24) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    const double a = a0 + (a1 - a0) * i / steps;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

std::vector<Stroke> digit_strokes(int d) {
  const double pi = M_PI;
  switch (d) {
    case 0:
      return {arc(0.5, 0.5, 0.32, 0.42, 0, 2 * pi, 48)};
    case 1:
      return {{{0.32, 0.25}, {0.55, 0.08}, {0.55, 0.92}}, {{0.35, 0.92}, {0.75, 0.92}}};
    case 2: {
      auto top = arc(0.5, 0.3, 0.3, 0.22, -pi, 0.25 * pi, 28);
      top.push_back({0.22, 0.92});
      return {top, {{0.22, 0.92}, {0.8, 0.92}}};
    }
    case 3:
      return {arc(0.48, 0.28, 0.28, 0.2, -0.85 * pi, 0.5 * pi, 28),
              arc(0.48, 0.7, 0.32, 0.23, -0.5 * pi, 0.85 * pi, 28)};
    case 4:
      return {{{0.62, 0.08}, {0.2, 0.62}, {0.85, 0.62}}, {{0.62, 0.08}, {0.62, 0.92}}};
    case 5: {
      auto bulge = arc(0.47, 0.66, 0.32, 0.26, -0.5 * pi, 0.8 * pi, 28);
      return {{{0.75, 0.08}, {0.28, 0.08}, {0.24, 0.45}}, bulge};
    }
    case 6: {
      auto sweep = arc(0.62, 0.3, 0.42, 0.55, 1.05 * pi, 1.6 * pi, 28);
      std::reverse(sweep.begin(), sweep.end());
      return {sweep, arc(0.5, 0.68, 0.26, 0.24, 0, 2 * pi, 40)};
    }
    case 7:
      return {{{0.2, 0.1}, {0.8, 0.1}, {0.42, 0.92}}};
    case 8:
      return {arc(0.5, 0.3, 0.24, 0.2, 0, 2 * pi, 40), arc(0.5, 0.72, 0.29, 0.22, 0, 2 * pi, 40)};
    case 9:
      return {arc(0.5, 0.32, 0.26, 0.24, 0, 2 * pi, 40),
              {{0.76, 0.32}, {0.72, 0.65}, {0.55, 0.92}}};
    default:
      throw ConfigError("digit out of range: " + std::to_string(d));
  }
}

double dist_to_segment(Pt p, Pt a, Pt b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

std::vector<uint8_t> render_digit(int digit, int size, double jitter_x, double jitter_y,
                                  double scale, double slant, double thickness) {
  const auto strokes = digit_strokes(digit);
  std::vector<uint8_t> img(static_cast<size_t>(size) * size, 0);
  const double edge = thickness * 0.55;  // soft falloff width
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      // Map pixel to unit stroke space, undoing jitter/scale/slant.
      const double uy = ((y + 0.5) / size - 0.5 - jitter_y) / scale + 0.5;
      double ux = ((x + 0.5) / size - 0.5 - jitter_x) / scale + 0.5;
      ux -= slant * (0.5 - uy);
      double dmin = 1e9;
      for (const auto& s : strokes)
        for (size_t i = 0; i + 1 < s.size(); ++i)
          dmin = std::min(dmin, dist_to_segment({ux, uy}, s[i], s[i + 1]));
      double v = 0;
      if (dmin < thickness) {
        v = 1.0;
      } else if (dmin < thickness + edge) {
        v = 1.0 - (dmin - thickness) / edge;
      }
      img[static_cast<size_t>(y) * size + x] = static_cast<uint8_t>(std::lround(255.0 * v));
    }
  }
  return img;
}

}  // namespace

const SpriteSet& builtin_sprites() {
  static const SpriteSet set = [] {
    SpriteSet s;
    s.size = 28;
    Rng rng(0xD161735ULL);
    const int variants_per_digit = 24;
    for (int d = 0; d < 10; ++d) {
      for (int v = 0; v < variants_per_digit; ++v) {
        const double jx = rng.uniform(-0.03, 0.03);
        const double jy = rng.uniform(-0.03, 0.03);
        const double sc = rng.uniform(0.82, 0.98);
        const double sl = rng.uniform(-0.12, 0.12);
        const double th = rng.uniform(0.055, 0.075);
        s.variants[static_cast<size_t>(d)].push_back(render_digit(d, s.size, jx, jy, sc, sl, th));
      }
    }
    return s;
  }();
  return set;
}

}  // namespace capvid
