#include <cstring>
#include <fstream>

#include "capvid/errors.hpp"
#include "capvid/train.hpp"

namespace capvid {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'V', 'I', 'D', 'C', 'K'};
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
  if (!in) throw FormatError("checkpoint truncated");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

uint64_t get_u64(std::istream& in) {
  uint64_t lo = get_u32(in);
  uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

void put_str(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& in) {
  const uint64_t len = get_u64(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint truncated while reading string");
  return s;
}

}  // namespace

void save_checkpoint(const CheckpointData& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_str(out, serialize_train_config(ckpt.cfg));
  put_u64(out, ckpt.vocab_tokens.size());
  for (const auto& tok : ckpt.vocab_tokens) put_str(out, tok);
  put_u64(out, static_cast<uint64_t>(ckpt.step));
  put_str(out, ckpt.rng_state);
  put_u64(out, ckpt.arrays.size());
  for (const auto& [name, m] : ckpt.arrays) {
    put_str(out, name);
    put_u32(out, static_cast<uint32_t>(m.rows()));
    put_u32(out, static_cast<uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  if (!out) throw IoError("short write: " + path.string());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("bad checkpoint magic: expected CAPVIDCK");
  const uint32_t version = get_u32(in);
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  CheckpointData ckpt;
  ckpt.cfg = parse_train_config_text(get_str(in));
  const uint64_t vocab_count = get_u64(in);
  ckpt.vocab_tokens.reserve(vocab_count);
  for (uint64_t i = 0; i < vocab_count; ++i) ckpt.vocab_tokens.push_back(get_str(in));
  ckpt.step = static_cast<int64_t>(get_u64(in));
  ckpt.rng_state = get_str(in);
  const uint64_t array_count = get_u64(in);
  for (uint64_t i = 0; i < array_count; ++i) {
    std::string name = get_str(in);
    const uint32_t rows = get_u32(in);
    const uint32_t cols = get_u32(in);
    Eigen::MatrixXd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw FormatError("checkpoint truncated in array " + name);
    ckpt.arrays.emplace_back(std::move(name), std::move(m));
  }
  return ckpt;
}

void append_train_log(const std::filesystem::path& path,
                      const std::vector<TrainLogRecord>& recs) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write train log: " + path.string());
  if (fresh) out << "# step\trecon\tkl\ttotal\tkl_weight\twall_ms\n";
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const auto& r : recs)
    out << r.step << "\t" << r.recon << "\t" << r.kl << "\t" << r.total << "\t" << r.kl_weight
        << "\t" << r.wall_ms << "\n";
}

std::vector<TrainLogRecord> read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open train log: " + path.string());
  std::vector<TrainLogRecord> recs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    TrainLogRecord r;
    if (std::sscanf(line.c_str(), "%ld\t%lf\t%lf\t%lf\t%lf\t%lf", &r.step, &r.recon, &r.kl,
                    &r.total, &r.kl_weight, &r.wall_ms) != 6)
      throw FormatError("bad train log record: " + line);
    recs.push_back(r);
  }
  return recs;
}

}  // namespace capvid
