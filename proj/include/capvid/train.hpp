#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "capvid/dataspec.hpp"
#include "capvid/vaecore.hpp"

namespace capvid {

struct TrainConfig {
  double learning_rate = 1e-3;
  double grad_clip = 5.0;
  int batch_size = 8;
  int steps = 1000;
  int kl_warmup_steps = -1;   // -1 selects the default of steps/5
  uint64_t seed = 0;
  std::string mode = "captioned";
  std::string precision = "float64";  // float32 | float64
  int checkpoint_every = -1;  // -1 selects steps/2; 0 writes only the final
  bool single_thread = true;
  ModelConfig model;

  int resolved_warmup() const { return kl_warmup_steps < 0 ? steps / 5 : kl_warmup_steps; }
  int resolved_checkpoint_every() const {
    return checkpoint_every < 0 ? std::max(1, steps / 2) : checkpoint_every;
  }

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (grad_clip < 0) throw ConfigError("grad_clip must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (resolved_warmup() > steps) throw ConfigError("kl warm-up exceeds the step budget");
    if (precision != "float32" && precision != "float64")
      throw ConfigError("precision must be float32 or float64");
    mode_from_string(mode);
  }
};

// Flat key=value text document; keys are exactly the TrainConfig field names
// with the embedded ModelConfig fields appearing unprefixed.
TrainConfig parse_train_config_text(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string serialize_train_config(const TrainConfig& cfg);

// KL weight schedule: 0 at step 0, linear to exactly 1 after `warmup` steps.
inline double kl_warmup_weight(int64_t step, int64_t warmup) {
  if (warmup <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup));
}

struct TrainLogRecord {
  int64_t step = 0;
  double recon = 0, kl = 0, total = 0;
  double kl_weight = 0;
  double wall_ms = 0;
};

void append_train_log(const std::filesystem::path& path, const std::vector<TrainLogRecord>& recs);
std::vector<TrainLogRecord> read_train_log(const std::filesystem::path& path);

// Checkpoint archive contents: named float64 arrays plus vocabulary, config,
// step counter and RNG state.
struct CheckpointData {
  TrainConfig cfg;
  std::vector<std::string> vocab_tokens;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;
  int64_t step = 0;
  std::string rng_state;
};

void save_checkpoint(const CheckpointData& ckpt, const std::filesystem::path& path);
CheckpointData load_checkpoint(const std::filesystem::path& path);

// Builds the sample conditioning from its meta record for the given mode.
// Token conditioning tokenizes the caption; the one-hot baseline packs
// (digit, motion) indicator blocks per slot.
std::vector<double> onehot_from_meta(const SampleMeta& meta, int onehot_dim);

struct TrainResult {
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
  std::vector<TrainLogRecord> log;
};

TrainResult train(const DatasetContainer& data, TrainConfig cfg,
                  const std::filesystem::path& out_dir);

struct EvalResult {
  double recon = 0, kl = 0, total = 0;
  size_t samples = 0;
};

EvalResult evaluate(const CheckpointData& ckpt, const DatasetContainer& data, uint64_t seed);

// Rebuilds a model from a checkpoint; throws ConfigError naming any missing
// or shape-mismatched array.
template <class S>
CapVidModel<S> model_from_checkpoint(const CheckpointData& ckpt) {
  CapVidModel<S> model(ckpt.cfg.model, ckpt.cfg.seed);
  std::unordered_map<std::string, const Eigen::MatrixXd*> by_name;
  for (const auto& [name, m] : ckpt.arrays) by_name[name] = &m;
  for (auto& e : model.params().entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw ConfigError("checkpoint missing parameter: " + e.name);
    const auto& src = *it->second;
    if (src.rows() != e.value.rows() || src.cols() != e.value.cols())
      throw ConfigError("checkpoint parameter " + e.name + " has shape " +
                        std::to_string(src.rows()) + "x" + std::to_string(src.cols()) +
                        ", expected " + std::to_string(e.value.rows()) + "x" +
                        std::to_string(e.value.cols()));
    e.value = src.template cast<S>();
  }
  return model;
}

template <class S>
CheckpointData checkpoint_from_model(const CapVidModel<S>& model, const TrainConfig& cfg,
                                     const Vocabulary& vocab, int64_t step,
                                     const std::string& rng_state) {
  CheckpointData ckpt;
  ckpt.cfg = cfg;
  ckpt.cfg.model = model.config();
  ckpt.vocab_tokens = vocab.tokens();
  ckpt.step = step;
  ckpt.rng_state = rng_state;
  for (const auto& e : model.params().entries())
    ckpt.arrays.emplace_back(e.name, e.value.template cast<double>());
  return ckpt;
}

}  // namespace capvid
