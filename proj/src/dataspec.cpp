#include "capvid/dataspec.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "capvid/errors.hpp"
#include "capvid/imageio.hpp"
#include "capvid/sprites.hpp"

namespace capvid {

std::string motion_phrase(Motion m) {
  return m == Motion::UpDown ? "up and down" : "left and right";
}

std::string one_digit_caption(int digit, Motion m, bool canonical_moving) {
  std::ostringstream os;
  os << "digit " << digit << " is " << (canonical_moving ? "moving" : "going") << " "
     << motion_phrase(m);
  return os.str();
}

std::string two_digit_caption(int d1, Motion m1, int d2, Motion m2) {
  std::ostringstream os;
  os << "digit " << d1 << " is moving " << motion_phrase(m1) << " and digit " << d2
     << " is moving " << motion_phrase(m2);
  return os.str();
}

std::optional<std::vector<std::pair<int, Motion>>> parse_caption(const std::string& caption) {
  static const std::regex two_re(
      R"(^digit (\d) is (?:going|moving) (up and down|left and right) and digit (\d) is (?:going|moving) (up and down|left and right)$)");
  static const std::regex one_re(
      R"(^digit (\d) is (?:going|moving) (up and down|left and right)$)");
  auto motion_of = [](const std::string& s) {
    return s == "up and down" ? Motion::UpDown : Motion::LeftRight;
  };
  std::smatch m;
  if (std::regex_match(caption, m, two_re)) {
    return std::vector<std::pair<int, Motion>>{{std::stoi(m[1]), motion_of(m[2])},
                                               {std::stoi(m[3]), motion_of(m[4])}};
  }
  if (std::regex_match(caption, m, one_re)) {
    return std::vector<std::pair<int, Motion>>{{std::stoi(m[1]), motion_of(m[2])}};
  }
  return std::nullopt;
}

std::pair<int, int> reflect_step(int pos, int vel, int limit) {
  if (limit <= 0) return {0, vel};
  int p = pos + vel;
  while (p < 0 || p > limit) {
    if (p < 0) {
      p = -p;
    } else {
      p = 2 * limit - p;
    }
    vel = -vel;
  }
  return {p, vel};
}

void validate_config(const SynthConfig& cfg) {
  if (cfg.digits.empty()) throw ConfigError("digit set must be non-empty");
  for (int d : cfg.digits)
    if (d < 0 || d > 9) throw ConfigError("digit out of range: " + std::to_string(d));
  if (!cfg.allow_updown && !cfg.allow_leftright)
    throw ConfigError("at least one motion must be allowed");
  if (cfg.n < 1) throw ConfigError("frame count must be >= 1");
  if (cfg.H < 1 || cfg.W < 1) throw ConfigError("frame size must be positive");
  if (cfg.sprite_size >= std::min(cfg.H, cfg.W))
    throw ConfigError("sprite size must be smaller than the frame");
  if (cfg.speed_min <= 0) throw ConfigError("speed must be > 0");
  if (cfg.speed_max < cfg.speed_min) throw ConfigError("speed range is empty");
  if (cfg.samples_per_class < 1) throw ConfigError("samples per class must be >= 1");
}

namespace {

std::vector<Motion> allowed_motions(const SynthConfig& cfg) {
  std::vector<Motion> ms;
  if (cfg.allow_updown) ms.push_back(Motion::UpDown);
  if (cfg.allow_leftright) ms.push_back(Motion::LeftRight);
  return ms;
}

// Sprite bank rescaled to the configured sprite size.
std::vector<std::vector<std::vector<uint8_t>>> prepare_sprites(const SynthConfig& cfg) {
  SpriteSet loaded;
  const SpriteSet* set = nullptr;
  if (cfg.sprite_images.empty()) {
    set = &builtin_sprites();
  } else {
    loaded = load_idx_sprites(cfg.sprite_images, cfg.sprite_labels);
    set = &loaded;
  }
  std::vector<std::vector<std::vector<uint8_t>>> bank(10);
  for (int d = 0; d < 10; ++d) {
    for (const auto& raw : set->variants[static_cast<size_t>(d)]) {
      if (set->size == cfg.sprite_size) {
        bank[static_cast<size_t>(d)].push_back(raw);
      } else {
        img::ImageU8 im;
        im.h = im.w = set->size;
        im.c = 1;
        im.data = raw;
        bank[static_cast<size_t>(d)].push_back(
            img::resize_bilinear(im, cfg.sprite_size, cfg.sprite_size).data);
      }
    }
  }
  return bank;
}

struct DigitTrack {
  int digit;
  Motion motion;
  const std::vector<uint8_t>* sprite;
  int row0, col0, vr, vc;
};

DigitTrack roll_track(int digit, Motion motion,
                      const std::vector<std::vector<std::vector<uint8_t>>>& bank,
                      const SynthConfig& cfg, Rng& rng) {
  DigitTrack tr;
  tr.digit = digit;
  tr.motion = motion;
  const auto& variants = bank[static_cast<size_t>(digit)];
  tr.sprite = &variants[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(variants.size()) - 1))];
  const int max_r = cfg.H - cfg.sprite_size;
  const int max_c = cfg.W - cfg.sprite_size;
  tr.row0 = static_cast<int>(rng.uniform_int(0, max_r));
  tr.col0 = static_cast<int>(rng.uniform_int(0, max_c));
  const int speed = static_cast<int>(rng.uniform_int(cfg.speed_min, cfg.speed_max));
  const int sign = rng.uniform_int(0, 1) == 0 ? 1 : -1;
  if (motion == Motion::UpDown) {
    tr.vr = sign * speed;
    tr.vc = 0;
  } else {
    tr.vr = 0;
    tr.vc = sign * speed;
  }
  return tr;
}

void render_tracks(uint8_t* dst, const std::vector<DigitTrack>& tracks, const SynthConfig& cfg) {
  const size_t frame_bytes = static_cast<size_t>(cfg.H) * cfg.W;
  const int max_r = cfg.H - cfg.sprite_size;
  const int max_c = cfg.W - cfg.sprite_size;
  std::vector<std::pair<std::pair<int, int>, std::pair<int, int>>> state;  // (pos, vel)
  state.reserve(tracks.size());
  for (const auto& tr : tracks) state.push_back({{tr.row0, tr.col0}, {tr.vr, tr.vc}});

  for (int f = 0; f < cfg.n; ++f) {
    uint8_t* frame = dst + static_cast<size_t>(f) * frame_bytes;
    for (size_t k = 0; k < tracks.size(); ++k) {
      auto& [pos, vel] = state[k];
      const auto& sprite = *tracks[k].sprite;
      for (int y = 0; y < cfg.sprite_size; ++y) {
        uint8_t* row = frame + static_cast<size_t>(pos.first + y) * cfg.W + pos.second;
        const uint8_t* src = sprite.data() + static_cast<size_t>(y) * cfg.sprite_size;
        for (int x = 0; x < cfg.sprite_size; ++x)
          row[x] = std::max(row[x], src[x]);  // pixelwise max on overlap
      }
      auto [r, vr] = reflect_step(pos.first, vel.first, max_r);
      auto [c, vc] = reflect_step(pos.second, vel.second, max_c);
      pos = {r, c};
      vel = {vr, vc};
    }
  }
}

DatasetContainer synth_common(const SynthConfig& cfg, bool two_digits) {
  validate_config(cfg);
  const auto bank = prepare_sprites(cfg);
  const auto motions = allowed_motions(cfg);

  // Enumerate caption classes in a fixed order.
  struct ClassSpec {
    std::vector<std::pair<int, Motion>> slots;
    std::string caption;
  };
  std::vector<ClassSpec> classes;
  if (!two_digits) {
    for (int d : cfg.digits)
      for (Motion m : motions)
        classes.push_back({{{d, m}}, one_digit_caption(d, m, cfg.canonical_moving)});
  } else {
    for (int d1 : cfg.digits)
      for (Motion m1 : motions)
        for (int d2 : cfg.digits)
          for (Motion m2 : motions)
            classes.push_back({{{d1, m1}, {d2, m2}}, two_digit_caption(d1, m1, d2, m2)});
  }

  DatasetContainer out;
  out.n = static_cast<uint32_t>(cfg.n);
  out.H = static_cast<uint32_t>(cfg.H);
  out.W = static_cast<uint32_t>(cfg.W);
  out.C = 1;
  out.pixels.assign(classes.size() * cfg.samples_per_class * out.sample_bytes(), 0);
  out.meta.reserve(classes.size() * cfg.samples_per_class);

  size_t sample_index = 0;
  for (size_t ci = 0; ci < classes.size(); ++ci) {
    for (int s = 0; s < cfg.samples_per_class; ++s, ++sample_index) {
      const uint64_t sample_seed = derive_seed(cfg.seed, ci, static_cast<uint64_t>(s));
      Rng rng(sample_seed);
      std::vector<DigitTrack> tracks;
      for (auto [d, m] : classes[ci].slots) tracks.push_back(roll_track(d, m, bank, cfg, rng));
      render_tracks(out.pixels.data() + sample_index * out.sample_bytes(), tracks, cfg);
      SampleMeta meta;
      meta.caption = classes[ci].caption;
      meta.seed = sample_seed;
      for (const auto& tr : tracks)
        meta.digits.push_back({tr.digit, tr.motion, tr.row0, tr.col0, tr.vr, tr.vc});
      out.meta.push_back(std::move(meta));
    }
  }
  return out;
}

}  // namespace

DatasetContainer synth_one_digit(const SynthConfig& cfg) { return synth_common(cfg, false); }
DatasetContainer synth_two_digit(const SynthConfig& cfg) { return synth_common(cfg, true); }

VideoSample extract_sample(const DatasetContainer& d, size_t index) {
  if (index >= d.count()) throw ConfigError("sample index out of range");
  VideoSample s;
  s.H = static_cast<int>(d.H);
  s.W = static_cast<int>(d.W);
  s.C = static_cast<int>(d.C);
  s.caption = d.meta[index].caption;
  s.meta = d.meta[index];
  s.frames.reserve(d.n);
  const size_t plane = static_cast<size_t>(d.H) * d.W;
  for (uint32_t f = 0; f < d.n; ++f) {
    const uint8_t* src = d.frame_ptr(index, f);
    Eigen::MatrixXd m(d.C, plane);
    for (size_t p = 0; p < plane; ++p)
      for (uint32_t c = 0; c < d.C; ++c) m(c, static_cast<Eigen::Index>(p)) = src[p * d.C + c] / 255.0;
    s.frames.push_back(std::move(m));
  }
  return s;
}

VideoSample prepend_sov(const VideoSample& sample) {
  VideoSample out = sample;
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(out.C, static_cast<Eigen::Index>(out.H) * out.W);
  out.frames.insert(out.frames.begin(), std::move(zero));
  return out;
}

HeldoutSplit split_heldout_captions(const DatasetContainer& d, uint64_t seed) {
  // Group samples by digit identity tuple; collect the motion assignments
  // observed for each tuple.
  std::map<std::vector<int>, std::set<std::vector<Motion>>> seen;
  std::vector<std::vector<std::pair<int, Motion>>> parsed(d.count());
  bool uses_going = false;
  for (size_t i = 0; i < d.count(); ++i) {
    auto p = parse_caption(d.meta[i].caption);
    if (!p) throw FormatError("caption does not match the template grammar: " + d.meta[i].caption);
    parsed[i] = *p;
    std::vector<int> digits;
    std::vector<Motion> motions;
    for (auto [dg, mo] : *p) {
      digits.push_back(dg);
      motions.push_back(mo);
    }
    seen[digits].insert(motions);
    if (d.meta[i].caption.find(" is going ") != std::string::npos) uses_going = true;
  }

  // Deterministically withhold one full motion assignment per digit tuple.
  Rng rng(derive_seed(seed, 0xCA97));
  std::set<std::pair<std::vector<int>, std::vector<Motion>>> withheld;
  HeldoutSplit out;
  for (const auto& [digits, assignments] : seen) {
    // The withheld assignment is drawn from the full motion product so a
    // tuple trained with only one motion still yields an unseen caption.
    const size_t slots = digits.size();
    const size_t combos = static_cast<size_t>(1) << slots;
    std::vector<std::vector<Motion>> all;
    for (size_t mask = 0; mask < combos; ++mask) {
      std::vector<Motion> ms;
      for (size_t b = 0; b < slots; ++b)
        ms.push_back((mask >> b) & 1 ? Motion::LeftRight : Motion::UpDown);
      all.push_back(std::move(ms));
    }
    // Prefer to withhold an assignment that actually occurs, so the split
    // removes training data; fall back to any unseen one.
    std::vector<std::vector<Motion>> present(assignments.begin(), assignments.end());
    const auto& pool = present.size() > 1 ? present : all;
    std::vector<Motion> choice;
    do {
      choice = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
    } while (present.size() == 1 && pool.size() > 1 && choice == present.front());
    withheld.insert({digits, choice});

    std::string caption;
    if (slots == 1) {
      caption = one_digit_caption(digits[0], choice[0], !uses_going);
    } else {
      caption = two_digit_caption(digits[0], choice[0], digits[1], choice[1]);
    }
    out.test_captions.push_back(std::move(caption));
  }

  out.train.n = d.n;
  out.train.H = d.H;
  out.train.W = d.W;
  out.train.C = d.C;
  for (size_t i = 0; i < d.count(); ++i) {
    std::vector<int> digits;
    std::vector<Motion> motions;
    for (auto [dg, mo] : parsed[i]) {
      digits.push_back(dg);
      motions.push_back(mo);
    }
    if (withheld.count({digits, motions})) continue;
    out.train.meta.push_back(d.meta[i]);
    const uint8_t* src = d.pixels.data() + i * d.sample_bytes();
    out.train.pixels.insert(out.train.pixels.end(), src, src + d.sample_bytes());
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'V', 'I', 'D', '0', '1'};
constexpr char kTrailer[8] = {'C', 'A', 'P', 'V', 'I', 'D', 'M', 'F'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  put_u32(out, static_cast<uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<uint32_t>(v >> 32));
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("container truncated while reading header");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

uint64_t get_u64(std::istream& in) {
  uint64_t lo = get_u32(in);
  uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

std::string motion_code(Motion m) { return m == Motion::UpDown ? "ud" : "lr"; }

Motion motion_from_code(const std::string& s) {
  if (s == "ud") return Motion::UpDown;
  if (s == "lr") return Motion::LeftRight;
  throw FormatError("bad motion code in manifest: " + s);
}

std::string manifest_record(const SampleMeta& m) {
  std::ostringstream os;
  os << "caption=" << m.caption << "\tseed=" << m.seed << "\tdigits=";
  if (m.digits.empty()) {
    os << "-";
  } else {
    for (size_t i = 0; i < m.digits.size(); ++i) {
      const auto& g = m.digits[i];
      if (i) os << ",";
      os << g.digit << ":" << motion_code(g.motion) << ":" << g.row0 << ":" << g.col0 << ":"
         << g.vr << ":" << g.vc;
    }
  }
  return os.str();
}

SampleMeta parse_manifest_record(const std::string& line) {
  SampleMeta m;
  std::istringstream is(line);
  std::string field;
  bool have_caption = false;
  while (std::getline(is, field, '\t')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw FormatError("bad manifest field: " + field);
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "caption") {
      m.caption = value;
      have_caption = true;
    } else if (key == "seed") {
      m.seed = std::stoull(value);
    } else if (key == "digits") {
      if (value == "-") continue;
      std::istringstream ds(value);
      std::string item;
      while (std::getline(ds, item, ',')) {
        std::istringstream fs(item);
        std::string tok;
        std::vector<std::string> parts;
        while (std::getline(fs, tok, ':')) parts.push_back(tok);
        if (parts.size() != 6) throw FormatError("bad digit record in manifest: " + item);
        DigitMeta g;
        g.digit = std::stoi(parts[0]);
        g.motion = motion_from_code(parts[1]);
        g.row0 = std::stoi(parts[2]);
        g.col0 = std::stoi(parts[3]);
        g.vr = std::stoi(parts[4]);
        g.vc = std::stoi(parts[5]);
        m.digits.push_back(g);
      }
    }
    // Unknown keys are ignored for forward compatibility.
  }
  if (!have_caption) throw FormatError("manifest record missing caption");
  return m;
}

}  // namespace

void save_container(const DatasetContainer& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write container: " + path.string());
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(d.count()));
  put_u32(out, d.n);
  put_u32(out, d.H);
  put_u32(out, d.W);
  put_u32(out, d.C);
  const size_t expected = d.count() * d.sample_bytes();
  if (d.pixels.size() != expected)
    throw FormatError("container payload size mismatch: " + std::to_string(d.pixels.size()) +
                      " vs expected " + std::to_string(expected));
  out.write(reinterpret_cast<const char*>(d.pixels.data()),
            static_cast<std::streamsize>(d.pixels.size()));
  const uint64_t manifest_offset = 8 + 6 * 4 + d.pixels.size();
  for (const auto& m : d.meta) out << manifest_record(m) << "\n";
  put_u64(out, manifest_offset);
  out.write(kTrailer, 8);
  if (!out) throw IoError("short write: " + path.string());
}

DatasetContainer load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open container: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("bad container magic: expected CAPVID01");
  const uint32_t version = get_u32(in);
  if (version != kVersion)
    throw FormatError("unsupported container version " + std::to_string(version) + ", expected " +
                      std::to_string(kVersion));
  DatasetContainer d;
  const uint32_t count = get_u32(in);
  d.n = get_u32(in);
  d.H = get_u32(in);
  d.W = get_u32(in);
  d.C = get_u32(in);
  const size_t payload = static_cast<size_t>(count) * d.sample_bytes();
  d.pixels.resize(payload);
  in.read(reinterpret_cast<char*>(d.pixels.data()), static_cast<std::streamsize>(payload));
  if (static_cast<size_t>(in.gcount()) != payload)
    throw FormatError("container payload truncated: expected " + std::to_string(payload) +
                      " pixel bytes");

  // Footer: the manifest occupies [offset, end-16).
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<uint64_t>(in.tellg());
  if (file_size < 16 + payload + 32) throw FormatError("container too small for footer");
  in.seekg(static_cast<std::streamoff>(file_size - 16));
  const uint64_t manifest_offset = get_u64(in);
  char trailer[8];
  in.read(trailer, 8);
  if (!in || std::memcmp(trailer, kTrailer, 8) != 0)
    throw FormatError("bad container trailer: expected CAPVIDMF");
  if (manifest_offset != 8 + 6 * 4 + payload)
    throw FormatError("manifest offset disagrees with payload length");
  in.seekg(static_cast<std::streamoff>(manifest_offset));
  std::string manifest(file_size - 16 - manifest_offset, '\0');
  in.read(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  if (!in) throw FormatError("container manifest truncated");

  std::istringstream ms(manifest);
  std::string line;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    d.meta.push_back(parse_manifest_record(line));
  }
  if (d.meta.size() != count)
    throw FormatError("manifest/payload count disagreement: " + std::to_string(d.meta.size()) +
                      " records vs " + std::to_string(count) + " samples");
  return d;
}

DatasetContainer ingest_frames(const std::filesystem::path& dir,
                               const std::filesystem::path& manifest_path, int H, int W, int C) {
  if (C != 1 && C != 3) throw ConfigError("ingest: channels must be 1 or 3");
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open ingest manifest: " + manifest_path.string());
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("ingest manifest line needs <video>\\t<caption>: " + line);
    entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (entries.empty()) throw FormatError("ingest manifest lists no videos");

  DatasetContainer d;
  d.C = static_cast<uint32_t>(C);
  bool first = true;
  for (const auto& [name, caption] : entries) {
    const auto video_dir = dir / name;
    if (!std::filesystem::is_directory(video_dir))
      throw IoError("missing frames directory: " + video_dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(video_dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw FormatError("no frame files in " + video_dir.string());

    if (first) {
      img::ImageU8 probe = img::read_pnm(files[0]);
      d.H = static_cast<uint32_t>(H > 0 ? H : probe.h);
      d.W = static_cast<uint32_t>(W > 0 ? W : probe.w);
      d.n = static_cast<uint32_t>(files.size());
      first = false;
    }
    if (files.size() != d.n)
      throw FormatError("inconsistent frame counts: " + video_dir.string() + " has " +
                        std::to_string(files.size()) + ", expected " + std::to_string(d.n));

    for (const auto& f : files) {
      img::ImageU8 im = img::read_pnm(f);
      if (C == 1 && im.c != 1) im = img::to_grayscale(im);
      if (C == 3 && im.c == 1) {
        img::ImageU8 rgb;
        rgb.h = im.h;
        rgb.w = im.w;
        rgb.c = 3;
        rgb.data.resize(im.data.size() * 3);
        for (size_t i = 0; i < im.data.size(); ++i)
          rgb.data[3 * i] = rgb.data[3 * i + 1] = rgb.data[3 * i + 2] = im.data[i];
        im = std::move(rgb);
      }
      if (im.h != static_cast<int>(d.H) || im.w != static_cast<int>(d.W))
        im = img::resize_bilinear(im, static_cast<int>(d.H), static_cast<int>(d.W));
      d.pixels.insert(d.pixels.end(), im.data.begin(), im.data.end());
    }
    if (caption.find('\t') != std::string::npos || caption.find('\n') != std::string::npos)
      throw FormatError("caption may not contain tabs or newlines");
    SampleMeta meta;
    meta.caption = caption;
    d.meta.push_back(std::move(meta));
  }
  return d;
}

}  // namespace capvid
