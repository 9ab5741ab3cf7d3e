#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "owvis/common.hpp"

namespace owvis {

// Fixed closed vocabulary for the caption stream. Token ids are stable:
// 0 = <bos>, 1 = <eos>, 2 = <pad>, then the content words.
class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;

  // The built-in 32-token vocabulary covering every caption the synthetic
  // world can produce, plus spare filler words.
  static Vocabulary standard();

  // Builds from an explicit token list (for loading saved datasets or
  // checkpoints). Errors: "bad-vocab" on duplicates or missing specials.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const;
  bool contains(const std::string& word) const { return index_.count(word) > 0; }
  // Errors: "unknown-token" for words outside the vocabulary.
  int id(const std::string& word) const;

  std::vector<int> encode(const std::vector<std::string>& words) const;
  // Drops <bos>/<pad>; stops at the first <eos>.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace owvis
