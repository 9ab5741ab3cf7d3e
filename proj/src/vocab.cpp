#include "owvis/vocab.hpp"

namespace owvis {

Vocabulary Vocabulary::standard() {
  return from_tokens({
      "<bos>", "<eos>", "<pad>",
      "a",
      "red", "green", "blue", "yellow", "magenta", "cyan", "orange", "purple",
      "square", "circle", "triangle", "cross", "ring", "bar",
      "moving",
      "left", "right", "up", "down", "still",
      "the", "an", "object", "shape", "small", "large", "bright", "dark",
  });
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  v.tokens_ = tokens;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    if (!v.index_.emplace(tokens[i], i).second)
      throw Error("bad-vocab", "duplicate token: " + tokens[i]);
  }
  if (v.size() < 3 || v.tokens_[kBos] != "<bos>" || v.tokens_[kEos] != "<eos>" ||
      v.tokens_[kPad] != "<pad>")
    throw Error("bad-vocab", "special tokens must be <bos>, <eos>, <pad> at ids 0, 1, 2");
  return v;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw Error("unknown-token", "token id out of range");
  return tokens_[id];
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw Error("unknown-token", "not in vocabulary: " + word);
  return it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    words.push_back(token(id));
  }
  return words;
}

}  // namespace owvis
