#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace mrg {

// Word-level vocabulary over the closed report lexicon. Special tokens occupy
// fixed low ids; everything else is dense in first-seen order. Unknown words
// map to [UNK].
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kCls = 3;
  static constexpr int kEnc = 4;
  static constexpr int kSep = 5;
  static constexpr int kMaskNeg = 6;  // empty-knowledge sentinel
  static constexpr int kUnk = 7;
  static constexpr int kSpecialCount = 8;

  Vocabulary();

  // Adds every word of every phrase, skipping duplicates.
  void add_words(const std::vector<std::string>& phrases);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  bool is_special(int id) const { return id >= 0 && id < kSpecialCount; }

  // Lowercases, collapses whitespace, splits on spaces.
  static std::vector<std::string> split_words(const std::string& text);
  static std::string normalize(const std::string& text);

  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace mrg
