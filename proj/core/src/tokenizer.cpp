#include "sspo/tokenizer.hpp"

#include <cctype>
#include <stdexcept>

namespace sspo {

namespace {

constexpr std::string_view kEos = "<eos>";
constexpr std::string_view kUnk = "<unk>";

bool is_punct(char c) { return c == '.' || c == ',' || c == ':' || c == ';'; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

enum class TokClass { OpenTag, CloseTag, Punct, Digit, Word };

TokClass classify(std::string_view tok) {
  if (tok.size() >= 2 && tok.front() == '<' && tok.back() == '>') {
    return tok[1] == '/' ? TokClass::CloseTag : TokClass::OpenTag;
  }
  if (tok.size() == 1 && is_punct(tok[0])) return TokClass::Punct;
  if (tok.size() == 1 && is_digit(tok[0])) return TokClass::Digit;
  return TokClass::Word;
}

const std::vector<std::string>& base_vocab() {
  static const std::vector<std::string> v = {
      // specials
      "<eos>", "<unk>",
      // grammar tags
      "<think>", "</think>", "<rhythm>", "</rhythm>", "<conduction>", "</conduction>",
      "<morphology>", "</morphology>", "<impression>", "</impression>", "<answer>",
      "</answer>",
      // punctuation
      ".", ",", ":",
      // digits
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
      // section template and report words
      "No", "rhythm", "abnormalities", "identified", "conduction", "morphological",
      "Irregular", "pattern", "consistent", "with", "Delayed", "intervals", "Abnormal",
      "waveform", "morphology", "Findings", "Normal", "ECG", "Diagnose", "this", "sinus",
      "rate", "wave", "segment", "interval", "axis", "ST", "QRS", "PR", "QT", "prolonged",
      "elevated", "borderline", "reduced"};
  return v;
}

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    const std::string& tok = vocab_[i];
    if (tok.empty()) throw std::invalid_argument("tokenizer: empty vocabulary entry");
    if (classify(tok) == TokClass::Word) {
      for (char c : tok) {
        if (is_space(c) || is_punct(c) || is_digit(c) || c == '<' || c == '>') {
          throw std::invalid_argument("tokenizer: word token with separator char: " + tok);
        }
      }
    }
    if (!index_.emplace(tok, static_cast<int>(i)).second) {
      throw std::invalid_argument("tokenizer: duplicate vocabulary entry: " + tok);
    }
  }
  eos_id_ = id_of(kEos);
  unk_id_ = id_of(kUnk);
  if (eos_id_ < 0 || unk_id_ < 0) {
    throw std::invalid_argument("tokenizer: vocabulary must contain <eos> and <unk>");
  }
}

Tokenizer Tokenizer::with_base_vocab(const std::vector<std::string>& labels) {
  std::vector<std::string> vocab = base_vocab();
  for (const auto& label : labels) {
    bool present = false;
    for (const auto& tok : vocab) {
      if (tok == label) {
        present = true;
        break;
      }
    }
    if (!present) vocab.push_back(label);
  }
  return Tokenizer(std::move(vocab));
}

int Tokenizer::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

TokenSequence Tokenizer::encode(std::string_view text) const {
  TokenSequence out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto push = [&](std::string_view tok) {
    const int id = id_of(tok);
    out.push_back(id >= 0 ? id : unk_id_);
  };
  while (i < n) {
    const char c = text[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (c == '<') {
      const std::size_t close = text.find('>', i);
      // Tags are short; anything longer is stray text.
      if (close != std::string_view::npos && close - i <= 16) {
        push(text.substr(i, close - i + 1));
        i = close + 1;
      } else {
        out.push_back(unk_id_);
        ++i;
      }
      continue;
    }
    if (is_punct(c) || is_digit(c)) {
      push(text.substr(i, 1));
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && !is_space(text[j]) && !is_punct(text[j]) && !is_digit(text[j]) &&
           text[j] != '<' && text[j] != '>') {
      ++j;
    }
    if (j == i) {  // lone '>'
      out.push_back(unk_id_);
      ++i;
      continue;
    }
    push(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string Tokenizer::decode(const TokenSequence& ids) const {
  std::string out;
  TokClass prev = TokClass::OpenTag;  // suppresses the leading space
  for (int id : ids) {
    const std::string& tok = vocab_.at(static_cast<std::size_t>(id));
    const TokClass cur = classify(tok);
    const bool space = (cur == TokClass::Word && prev != TokClass::OpenTag) ||
                       (cur == TokClass::Digit && prev != TokClass::OpenTag &&
                        prev != TokClass::Digit);
    if (space && !out.empty()) out.push_back(' ');
    out += tok;
    prev = cur;
  }
  return out;
}

}  // namespace sspo
