#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "capvid/errors.hpp"
#include "capvid/nn.hpp"

namespace capvid {

// Token table with a reserved <unk> id at 0; insertion order is stable and
// survives serialization.
class Vocabulary {
 public:
  static constexpr int kUnkId = 0;

  Vocabulary() { add("<unk>"); }

  int add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    tokens_.push_back(token);
    const int id = static_cast<int>(tokens_.size()) - 1;
    index_[token] = id;
    return id;
  }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }

  const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    if (tokens.empty() || tokens[0] != "<unk>")
      throw FormatError("vocabulary list must start with <unk>");
    for (size_t i = 1; i < tokens.size(); ++i) v.add(tokens[i]);
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercased whitespace-split words.
std::vector<std::string> split_caption_words(const std::string& caption);

// Maps a caption to token ids; unknown words become <unk>. Throws ConfigError
// on an empty caption.
std::vector<int> tokenize(const std::string& caption, const Vocabulary& vocab);

Vocabulary build_vocabulary(const std::vector<std::string>& captions);

// Bidirectional recurrent caption encoder producing one latent state per
// word: the concatenation of the forward and backward recurrent states at
// that position.
template <class S>
class LangEncoder {
 public:
  LangEncoder() = default;
  LangEncoder(ParamStore<S>& store, const std::string& prefix, int vocab_size, int d_emb,
              int d_lang, Rng& rng)
      : vocab_size_(vocab_size), d_emb_(d_emb), d_lang_(d_lang) {
    if (d_lang % 2 != 0) throw ConfigError("d_lang must be even (two directions)");
    emb_ = store.add_uniform(prefix + ".emb", vocab_size, d_emb, 0.1, rng);
    fwd_ = nn::LstmCell<S>(store, prefix + ".fwd", d_emb, d_lang / 2, rng);
    bwd_ = nn::LstmCell<S>(store, prefix + ".bwd", d_emb, d_lang / 2, rng);
  }

  // Returns m states, each (d_lang, 1).
  std::vector<ad::Var<S>> encode(ad::Tape<S>& t, ParamStore<S>& store,
                                 const std::vector<int>& tokens) const {
    if (tokens.empty()) throw ConfigError("cannot encode an empty token sequence");
    for (int id : tokens)
      if (id < 0 || id >= vocab_size_)
        throw ConfigError("token id outside vocabulary range: " + std::to_string(id));
    const int m = static_cast<int>(tokens.size());
    auto emb = store.use(t, emb_);
    std::vector<ad::Var<S>> inputs;
    inputs.reserve(tokens.size());
    for (int id : tokens) inputs.push_back(ad::transpose(ad::rows(emb, id, 1)));

    auto fb = fwd_.bind(store, t);
    auto bb = bwd_.bind(store, t);
    std::vector<ad::Var<S>> fwd_states(m), bwd_states(m);
    auto fs = fb.zero_state(t);
    for (int i = 0; i < m; ++i) {
      fs = fb.step(inputs[static_cast<size_t>(i)], fs);
      fwd_states[static_cast<size_t>(i)] = fs.h;
    }
    auto bs = bb.zero_state(t);
    for (int i = m - 1; i >= 0; --i) {
      bs = bb.step(inputs[static_cast<size_t>(i)], bs);
      bwd_states[static_cast<size_t>(i)] = bs.h;
    }
    std::vector<ad::Var<S>> states;
    states.reserve(tokens.size());
    for (int i = 0; i < m; ++i)
      states.push_back(ad::vstack<S>({fwd_states[static_cast<size_t>(i)],
                                      bwd_states[static_cast<size_t>(i)]}));
    return states;
  }

  int d_lang() const { return d_lang_; }
  int vocab_size() const { return vocab_size_; }

 private:
  int vocab_size_ = 0, d_emb_ = 0, d_lang_ = 0;
  int emb_ = -1;
  nn::LstmCell<S> fwd_, bwd_;
};

}  // namespace capvid
