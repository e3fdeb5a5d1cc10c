#include "capvid/lang.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace capvid {

std::vector<std::string> split_caption_words(const std::string& caption) {
  std::string lower = caption;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream is(lower);
  std::vector<std::string> words;
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

std::vector<int> tokenize(const std::string& caption, const Vocabulary& vocab) {
  const auto words = split_caption_words(caption);
  if (words.empty()) throw ConfigError("caption is empty");
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

Vocabulary build_vocabulary(const std::vector<std::string>& captions) {
  Vocabulary v;
  for (const auto& c : captions)
    for (const auto& w : split_caption_words(c)) v.add(w);
  return v;
}

}  // namespace capvid
