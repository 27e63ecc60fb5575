#include "sspo/labels.hpp"

#include <algorithm>
#include <cctype>

namespace sspo {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

std::string canonicalize_label(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (is_space(c)) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

LabelSet::LabelSet(std::initializer_list<std::string> labels) {
  for (const auto& l : labels) insert(l);
}

LabelSet::LabelSet(const std::vector<std::string>& labels) {
  for (const auto& l : labels) insert(l);
}

void LabelSet::insert(std::string_view raw) {
  std::string canon = canonicalize_label(raw);
  if (!canon.empty()) items_.insert(std::move(canon));
}

std::size_t LabelSet::intersection_size(const LabelSet& other) const {
  const LabelSet& small = size() <= other.size() ? *this : other;
  const LabelSet& large = size() <= other.size() ? other : *this;
  std::size_t n = 0;
  for (const auto& item : small) {
    if (large.contains(item)) ++n;
  }
  return n;
}

LabelSet LabelSet::set_union(const LabelSet& a, const LabelSet& b) {
  LabelSet out = a;
  for (const auto& item : b) out.items_.insert(item);
  return out;
}

LabelSet LabelSet::set_intersection(const LabelSet& a, const LabelSet& b) {
  LabelSet out;
  for (const auto& item : a) {
    if (b.contains(item)) out.items_.insert(item);
  }
  return out;
}

}  // namespace sspo
