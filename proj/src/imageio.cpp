#include "capvid/imageio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "capvid/errors.hpp"

namespace capvid::img {

namespace {

int next_pnm_int(std::istream& in) {
  // Skips whitespace and '#' comments.
  while (true) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v;
  if (!(in >> v)) throw FormatError("pnm: expected integer token");
  return v;
}

}  // namespace

ImageU8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  char p, kind;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '2' && kind != '3' && kind != '5' && kind != '6'))
    throw FormatError("unsupported image format (want PGM/PPM): " + path.string());
  const bool color = (kind == '3' || kind == '6');
  const bool ascii = (kind == '2' || kind == '3');
  ImageU8 im;
  im.w = next_pnm_int(in);
  im.h = next_pnm_int(in);
  const int maxval = next_pnm_int(in);
  if (maxval <= 0 || maxval > 255) throw FormatError("pnm: unsupported maxval");
  im.c = color ? 3 : 1;
  im.data.resize(static_cast<size_t>(im.h) * im.w * im.c);
  if (ascii) {
    for (auto& px : im.data) px = static_cast<uint8_t>(next_pnm_int(in));
  } else {
    in.get();  // single whitespace after maxval
    in.read(reinterpret_cast<char*>(im.data.data()), static_cast<std::streamsize>(im.data.size()));
    if (static_cast<size_t>(in.gcount()) != im.data.size())
      throw FormatError("pnm: truncated pixel data in " + path.string());
  }
  return im;
}

void write_pnm(const std::filesystem::path& path, const ImageU8& image) {
  if (image.c != 1 && image.c != 3) throw FormatError("write_pnm: channels must be 1 or 3");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path.string());
  out << (image.c == 1 ? "P5" : "P6") << "\n" << image.w << " " << image.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
  if (!out) throw IoError("short write: " + path.string());
}

ImageU8 resize_bilinear(const ImageU8& src, int out_h, int out_w) {
  ImageU8 dst;
  dst.h = out_h;
  dst.w = out_w;
  dst.c = src.c;
  dst.data.resize(static_cast<size_t>(out_h) * out_w * src.c);
  const double sy = out_h > 1 ? static_cast<double>(src.h - 1) / (out_h - 1) : 0;
  const double sx = out_w > 1 ? static_cast<double>(src.w - 1) / (out_w - 1) : 0;
  for (int y = 0; y < out_h; ++y) {
    const double fy = y * sy;
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = x * sx;
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < src.c; ++ch) {
        const double v = (1 - wy) * ((1 - wx) * src.at(y0, x0, ch) + wx * src.at(y0, x1, ch)) +
                         wy * ((1 - wx) * src.at(y1, x0, ch) + wx * src.at(y1, x1, ch));
        dst.at(y, x, ch) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return dst;
}

ImageU8 to_grayscale(const ImageU8& src) {
  if (src.c == 1) return src;
  ImageU8 dst;
  dst.h = src.h;
  dst.w = src.w;
  dst.c = 1;
  dst.data.resize(static_cast<size_t>(src.h) * src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      const double v = 0.299 * src.at(y, x, 0) + 0.587 * src.at(y, x, 1) + 0.114 * src.at(y, x, 2);
      dst.at(y, x) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  return dst;
}

namespace {

// Incremental GIF LZW encoder with LSB-first bit packing and 255-byte
// sub-block framing.
class LzwWriter {
 public:
  LzwWriter(std::ostream& out, int min_code_size) : out_(out), min_(min_code_size) {
    reset_table();
  }

  void encode(const std::vector<uint8_t>& indices) {
    emit(clear_code());
    if (indices.empty()) {
      emit(end_code());
      flush_bits();
      flush_block();
      return;
    }
    int32_t prefix = indices[0];
    for (size_t i = 1; i < indices.size(); ++i) {
      const uint8_t k = indices[i];
      const int64_t key = (static_cast<int64_t>(prefix) << 8) | k;
      auto it = table_.find(key);
      if (it != table_.end()) {
        prefix = it->second;
        continue;
      }
      emit(prefix);
      if (next_code_ >= 4096) {
        emit(clear_code());
        reset_table();
      } else {
        table_[key] = next_code_++;
        if (next_code_ - 1 == (1 << code_size_) && code_size_ < 12) ++code_size_;
      }
      prefix = k;
    }
    emit(prefix);
    emit(end_code());
    flush_bits();
    flush_block();
  }

 private:
  int clear_code() const { return 1 << min_; }
  int end_code() const { return (1 << min_) + 1; }

  void reset_table() {
    table_.clear();
    next_code_ = end_code() + 1;
    code_size_ = min_ + 1;
  }

  void emit(int code) {
    bits_ |= static_cast<uint32_t>(code) << nbits_;
    nbits_ += code_size_;
    while (nbits_ >= 8) {
      push_byte(static_cast<uint8_t>(bits_ & 0xff));
      bits_ >>= 8;
      nbits_ -= 8;
    }
  }

  void flush_bits() {
    if (nbits_ > 0) {
      push_byte(static_cast<uint8_t>(bits_ & 0xff));
      bits_ = 0;
      nbits_ = 0;
    }
  }

  void push_byte(uint8_t b) {
    block_.push_back(b);
    if (block_.size() == 255) flush_block();
  }

  void flush_block() {
    if (block_.empty()) return;
    const uint8_t len = static_cast<uint8_t>(block_.size());
    out_.put(static_cast<char>(len));
    out_.write(reinterpret_cast<const char*>(block_.data()), len);
    block_.clear();
  }

  std::ostream& out_;
  int min_;
  std::unordered_map<int64_t, int32_t> table_;
  int32_t next_code_ = 0;
  int code_size_ = 0;
  uint32_t bits_ = 0;
  int nbits_ = 0;
  std::vector<uint8_t> block_;
};

void put_u16(std::ostream& out, uint16_t v) {
  out.put(static_cast<char>(v & 0xff));
  out.put(static_cast<char>(v >> 8));
}

}  // namespace

void write_gif(const std::filesystem::path& path, const std::vector<ImageU8>& frames,
               int delay_centiseconds) {
  if (frames.empty()) throw FormatError("write_gif: no frames");
  const int h = frames[0].h, w = frames[0].w;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write gif: " + path.string());

  out.write("GIF89a", 6);
  put_u16(out, static_cast<uint16_t>(w));
  put_u16(out, static_cast<uint16_t>(h));
  out.put(static_cast<char>(0xf7));  // global color table, 256 entries, 8-bit
  out.put(0);                        // background color
  out.put(0);                        // aspect
  for (int i = 0; i < 256; ++i) {    // grayscale palette
    out.put(static_cast<char>(i));
    out.put(static_cast<char>(i));
    out.put(static_cast<char>(i));
  }
  // Netscape looping extension (loop forever).
  const uint8_t loop_ext[] = {0x21, 0xff, 0x0b, 'N', 'E', 'T', 'S', 'C', 'A',
                              'P',  'E',  '2',  '.', '0', 0x03, 0x01, 0x00, 0x00, 0x00};
  out.write(reinterpret_cast<const char*>(loop_ext), sizeof(loop_ext));

  for (const auto& f : frames) {
    if (f.h != h || f.w != w) throw FormatError("write_gif: frame size mismatch");
    // Graphic control extension: per-frame delay.
    out.put(0x21);
    out.put(static_cast<char>(0xf9));
    out.put(0x04);
    out.put(0x00);
    put_u16(out, static_cast<uint16_t>(delay_centiseconds));
    out.put(0x00);
    out.put(0x00);
    // Image descriptor.
    out.put(0x2c);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, static_cast<uint16_t>(w));
    put_u16(out, static_cast<uint16_t>(h));
    out.put(0x00);  // no local color table
    out.put(0x08);  // LZW minimum code size
    std::vector<uint8_t> indices(static_cast<size_t>(h) * w);
    if (f.c == 1) {
      indices.assign(f.data.begin(), f.data.end());
    } else {
      ImageU8 g = to_grayscale(f);
      indices.assign(g.data.begin(), g.data.end());
    }
    LzwWriter lzw(out, 8);
    lzw.encode(indices);
    out.put(0x00);  // block terminator
  }
  out.put(0x3b);  // trailer
  if (!out) throw IoError("short write: " + path.string());
}

}  // namespace capvid::img
