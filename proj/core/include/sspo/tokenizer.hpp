#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sspo {

using TokenSequence = std::vector<int>;

// Fixed word/tag-piece vocabulary: grammar tags, section template words,
// label tokens, digits, punctuation, and specials. Closed by construction so
// probability accounting over the vocabulary is exact.
//
// decode() is the inverse of encode() on the id side: for any valid id
// sequence, encode(decode(ids)) == ids.
class Tokenizer {
 public:
  // Vocabulary entries must be non-empty; words may not contain whitespace,
  // digits, punctuation, or angle brackets (tags excepted).
  explicit Tokenizer(std::vector<std::string> vocab);

  // The toolkit's base vocabulary plus one token per task label.
  static Tokenizer with_base_vocab(const std::vector<std::string>& labels);

  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  int eos_id() const { return eos_id_; }
  int unk_id() const { return unk_id_; }

  // -1 when the token is not in the vocabulary.
  int id_of(std::string_view token) const;
  const std::string& token_text(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& vocab() const { return vocab_; }

  TokenSequence encode(std::string_view text) const;
  std::string decode(const TokenSequence& ids) const;

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  int eos_id_ = -1;
  int unk_id_ = -1;
};

}  // namespace sspo
