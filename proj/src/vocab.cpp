#include "mrg/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "mrg/errors.hpp"

namespace mrg {

Vocabulary::Vocabulary() {
  const char* specials[] = {"[PAD]", "[BOS]", "[EOS]", "[CLS]",
                            "[ENC]", "[SEP]", "[MASK-NEG]", "[UNK]"};
  for (const char* s : specials) {
    token_to_id_[s] = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(s);
  }
}

void Vocabulary::add_words(const std::vector<std::string>& phrases) {
  for (const auto& phrase : phrases)
    for (const auto& w : split_words(phrase))
      if (!token_to_id_.count(w)) {
        token_to_id_[w] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(w);
      }
}

int Vocabulary::id(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw ContractError("token id " + std::to_string(id) + " out of vocabulary of " +
                        std::to_string(size()));
  return id_to_token_[id];
}

std::string Vocabulary::normalize(const std::string& text) {
  std::string out;
  bool in_space = true;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<std::string> Vocabulary::split_words(const std::string& text) {
  std::istringstream in(normalize(text));
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(i);
  }
  return out;
}

}  // namespace mrg
