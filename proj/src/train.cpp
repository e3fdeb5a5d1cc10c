#include "capvid/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "capvid/lang.hpp"

namespace capvid {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

TrainConfig parse_train_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line needs key=value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };

    if (key == "learning_rate") cfg.learning_rate = as_double();
    else if (key == "grad_clip") cfg.grad_clip = as_double();
    else if (key == "batch_size") cfg.batch_size = as_int();
    else if (key == "steps") cfg.steps = as_int();
    else if (key == "kl_warmup_steps") cfg.kl_warmup_steps = as_int();
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "mode") cfg.mode = value;
    else if (key == "precision") cfg.precision = value;
    else if (key == "checkpoint_every") cfg.checkpoint_every = as_int();
    else if (key == "single_thread") cfg.single_thread = value == "1" || value == "true";
    else if (key == "T") cfg.model.T = as_int();
    else if (key == "d_z") cfg.model.d_z = as_int();
    else if (key == "N") cfg.model.N = as_int();
    else if (key == "d_lang") cfg.model.d_lang = as_int();
    else if (key == "d_emb") cfg.model.d_emb = as_int();
    else if (key == "d_a") cfg.model.d_a = as_int();
    else if (key == "d_v") cfg.model.d_v = as_int();
    else if (key == "d_g") cfg.model.d_g = as_int();
    else if (key == "d_enc") cfg.model.d_enc = as_int();
    else if (key == "d_dec") cfg.model.d_dec = as_int();
    else if (key == "H") cfg.model.H = as_int();
    else if (key == "W") cfg.model.W = as_int();
    else if (key == "C") cfg.model.C = as_int();
    else if (key == "S") cfg.model.S = as_int();
    else if (key == "glimpse_c1") cfg.model.glimpse_c1 = as_int();
    else if (key == "glimpse_c2") cfg.model.glimpse_c2 = as_int();
    else if (key == "hist_channels") cfg.model.hist_channels = as_int();
    else if (key == "hist_down") cfg.model.hist_down = as_int();
    else if (key == "onehot_dim") cfg.model.onehot_dim = as_int();
    else if (key == "vocab_size") cfg.model.vocab_size = as_int();
    else throw ConfigError("unknown config key: " + key);
  }
  cfg.model.mode = mode_from_string(cfg.mode);
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config_text(ss.str());
}

std::string serialize_train_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "learning_rate=" << cfg.learning_rate << "\n";
  os << "grad_clip=" << cfg.grad_clip << "\n";
  os << "batch_size=" << cfg.batch_size << "\n";
  os << "steps=" << cfg.steps << "\n";
  os << "kl_warmup_steps=" << cfg.kl_warmup_steps << "\n";
  os << "seed=" << cfg.seed << "\n";
  os << "mode=" << cfg.mode << "\n";
  os << "precision=" << cfg.precision << "\n";
  os << "checkpoint_every=" << cfg.checkpoint_every << "\n";
  os << "single_thread=" << (cfg.single_thread ? 1 : 0) << "\n";
  const auto& m = cfg.model;
  os << "T=" << m.T << "\nd_z=" << m.d_z << "\nN=" << m.N << "\nd_lang=" << m.d_lang
     << "\nd_emb=" << m.d_emb << "\nd_a=" << m.d_a << "\nd_v=" << m.d_v << "\nd_g=" << m.d_g
     << "\nd_enc=" << m.d_enc << "\nd_dec=" << m.d_dec << "\nH=" << m.H << "\nW=" << m.W
     << "\nC=" << m.C << "\nS=" << m.S << "\nglimpse_c1=" << m.glimpse_c1
     << "\nglimpse_c2=" << m.glimpse_c2 << "\nhist_channels=" << m.hist_channels
     << "\nhist_down=" << m.hist_down << "\nonehot_dim=" << m.onehot_dim
     << "\nvocab_size=" << m.vocab_size << "\n";
  return os.str();
}

std::vector<double> onehot_from_meta(const SampleMeta& meta, int onehot_dim) {
  std::vector<std::pair<int, Motion>> slots;
  if (!meta.digits.empty()) {
    for (const auto& g : meta.digits) slots.emplace_back(g.digit, g.motion);
  } else {
    auto parsed = parse_caption(meta.caption);
    if (!parsed) throw ConfigError("cannot derive one-hot conditioning from: " + meta.caption);
    slots = *parsed;
  }
  if (static_cast<int>(slots.size()) * 12 != onehot_dim)
    throw ConfigError("one-hot width mismatch: " + std::to_string(slots.size()) +
                      " slots vs dim " + std::to_string(onehot_dim));
  std::vector<double> v(static_cast<size_t>(onehot_dim), 0.0);
  for (size_t s = 0; s < slots.size(); ++s) {
    v[12 * s + static_cast<size_t>(slots[s].first)] = 1.0;
    v[12 * s + 10 + (slots[s].second == Motion::UpDown ? 0 : 1)] = 1.0;
  }
  return v;
}

namespace {

// Frames of one sample with the start-of-video prefix, as double matrices.
std::vector<Eigen::MatrixXd> frames_with_sov(const DatasetContainer& data, size_t idx) {
  VideoSample s = extract_sample(data, idx);
  s = prepend_sov(s);
  return s.frames;
}

template <class S>
typename CapVidModel<S>::SegmentCond cond_from_meta(const SampleMeta& meta,
                                                    const Vocabulary& vocab,
                                                    const ModelConfig& mc) {
  typename CapVidModel<S>::SegmentCond cond;
  if (mc.uses_caption_encoder()) {
    cond.tokens = tokenize(meta.caption, vocab);
  } else if (mc.mode == ModelMode::OnehotBaseline) {
    cond.onehot = onehot_from_meta(meta, mc.onehot_dim);
  }
  return cond;
}

template <class S>
TrainResult train_impl(const DatasetContainer& data, TrainConfig cfg,
                       const std::filesystem::path& out_dir) {
  using Clock = std::chrono::steady_clock;
  std::filesystem::create_directories(out_dir);

  cfg.model.mode = mode_from_string(cfg.mode);
  cfg.model.H = static_cast<int>(data.H);
  cfg.model.W = static_cast<int>(data.W);
  cfg.model.C = static_cast<int>(data.C);

  Vocabulary vocab;
  if (cfg.model.uses_caption_encoder()) {
    std::vector<std::string> captions;
    for (const auto& m : data.meta) {
      if (m.caption.empty())
        throw ConfigError("captioned training requires a caption on every sample");
      captions.push_back(m.caption);
    }
    vocab = build_vocabulary(captions);
    cfg.model.vocab_size = vocab.size();
  } else if (cfg.model.mode == ModelMode::OnehotBaseline) {
    auto parsed = parse_caption(data.meta[0].caption);
    if (!parsed) throw ConfigError("one-hot baseline needs template captions");
    cfg.model.onehot_dim = 12 * static_cast<int>(parsed->size());
  }
  cfg.validate();
  cfg.model.validate();

  CapVidModel<S> model(cfg.model, cfg.seed);
  AdamOptimizer<S> opt(cfg.learning_rate, cfg.grad_clip);
  const int warmup = cfg.resolved_warmup();
  const int ckpt_every = cfg.resolved_checkpoint_every();
  Rng order_rng(derive_seed(cfg.seed, 0x0bde7));

  std::vector<size_t> order(data.count());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // forces a shuffle on first use

  TrainResult result;
  result.log_path = out_dir / "train_log.tsv";
  std::vector<TrainLogRecord> pending;

  const auto t0 = Clock::now();
  for (int step = 0; step < cfg.steps; ++step) {
    const double kl_w = kl_warmup_weight(step, warmup);
    model.params().zero_grad();
    double recon_acc = 0, kl_acc = 0;
    const double inv_b = 1.0 / cfg.batch_size;
    for (int bi = 0; bi < cfg.batch_size; ++bi) {
      if (cursor >= order.size()) {
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1],
                    order[static_cast<size_t>(order_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
        cursor = 0;
      }
      const size_t idx = order[cursor++];
      ad::Tape<S> tape;
      auto bound = model.bind(tape);
      auto frames = frames_with_sov(data, idx);
      auto cond = cond_from_meta<S>(data.meta[idx], vocab, cfg.model);
      Rng noise(derive_seed(cfg.seed, 0x7015e, static_cast<uint64_t>(step) * 1000003ULL + idx));
      auto loss = model.total_loss(tape, bound, frames, cond, noise, kl_w);
      tape.backward(loss.total * inv_b);
      recon_acc += loss.recon();
      kl_acc += loss.kl();
    }
    const double recon = recon_acc / cfg.batch_size;
    const double kl = kl_acc / cfg.batch_size;
    const double total = recon + kl;
    if (!std::isfinite(total)) {
      append_train_log(result.log_path, pending);
      throw TrainError("loss diverged to a non-finite value at step " + std::to_string(step) +
                       " (recon=" + std::to_string(recon) + ", kl=" + std::to_string(kl) + ")");
    }
    opt.step(model.params());

    TrainLogRecord rec;
    rec.step = step;
    rec.recon = recon;
    rec.kl = kl;
    rec.total = total;
    rec.kl_weight = kl_w;
    rec.wall_ms =
        std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - t0).count() / 1000.0;
    pending.push_back(rec);
    result.log.push_back(rec);
    if (pending.size() >= 32) {
      append_train_log(result.log_path, pending);
      pending.clear();
    }

    if (ckpt_every > 0 && (step + 1) % ckpt_every == 0 && step + 1 < cfg.steps) {
      auto ck = checkpoint_from_model(model, cfg, vocab, step + 1, order_rng.state());
      save_checkpoint(ck, out_dir / ("ckpt_step" + std::to_string(step + 1) + ".ckpt"));
    }
  }
  append_train_log(result.log_path, pending);

  auto ck = checkpoint_from_model(model, cfg, vocab, cfg.steps, order_rng.state());
  result.checkpoint_path = out_dir / "final.ckpt";
  save_checkpoint(ck, result.checkpoint_path);
  return result;
}

template <class S>
EvalResult evaluate_impl(const CheckpointData& ckpt, const DatasetContainer& data,
                         uint64_t seed) {
  if (data.count() == 0) throw ConfigError("evaluate: dataset is empty");
  const ModelConfig& mc = ckpt.cfg.model;
  if (static_cast<int>(data.H) != mc.H || static_cast<int>(data.W) != mc.W ||
      static_cast<int>(data.C) != mc.C)
    throw ConfigError("dataset dims " + std::to_string(data.H) + "x" + std::to_string(data.W) +
                      "x" + std::to_string(data.C) + " do not match checkpoint " +
                      std::to_string(mc.H) + "x" + std::to_string(mc.W) + "x" +
                      std::to_string(mc.C));
  CapVidModel<S> model = model_from_checkpoint<S>(ckpt);
  Vocabulary vocab = Vocabulary::from_tokens(ckpt.vocab_tokens.empty()
                                                 ? std::vector<std::string>{"<unk>"}
                                                 : ckpt.vocab_tokens);
  EvalResult out;
  for (size_t i = 0; i < data.count(); ++i) {
    ad::Tape<S> tape;
    auto bound = model.bind(tape);
    auto frames = frames_with_sov(data, i);
    auto cond = cond_from_meta<S>(data.meta[i], vocab, mc);
    Rng noise(derive_seed(seed, 0xe7a1, i));
    auto loss = model.total_loss(tape, bound, frames, cond, noise, 1.0);
    out.recon += loss.recon();
    out.kl += loss.kl();
  }
  out.samples = data.count();
  out.recon /= static_cast<double>(data.count());
  out.kl /= static_cast<double>(data.count());
  out.total = out.recon + out.kl;
  return out;
}

}  // namespace

TrainResult train(const DatasetContainer& data, TrainConfig cfg,
                  const std::filesystem::path& out_dir) {
  if (data.count() == 0) throw ConfigError("train: dataset is empty");
  cfg.validate();
  if (cfg.precision == "float32") return train_impl<float>(data, cfg, out_dir);
  return train_impl<double>(data, cfg, out_dir);
}

EvalResult evaluate(const CheckpointData& ckpt, const DatasetContainer& data, uint64_t seed) {
  if (ckpt.cfg.precision == "float32") return evaluate_impl<float>(ckpt, data, seed);
  return evaluate_impl<double>(ckpt, data, seed);
}

}  // namespace capvid
