#pragma once

#include <initializer_list>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace sspo {

// Trims surrounding whitespace, collapses internal whitespace runs to a
// single space, uppercases ASCII.
std::string canonicalize_label(std::string_view raw);

// An unordered set of canonical diagnosis labels. Insertion canonicalizes,
// so spellings differing only by case or surrounding whitespace collapse to
// one member. Iteration order is lexicographic.
class LabelSet {
 public:
  LabelSet() = default;
  LabelSet(std::initializer_list<std::string> labels);
  explicit LabelSet(const std::vector<std::string>& labels);

  // Canonicalizes `raw`; empty strings (after canonicalization) are ignored.
  void insert(std::string_view raw);

  bool contains(const std::string& canonical) const { return items_.count(canonical) > 0; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::vector<std::string> sorted() const { return {items_.begin(), items_.end()}; }

  std::size_t intersection_size(const LabelSet& other) const;
  static LabelSet set_union(const LabelSet& a, const LabelSet& b);
  static LabelSet set_intersection(const LabelSet& a, const LabelSet& b);

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::set<std::string> items_;
};

}  // namespace sspo
