#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sspo/labels.hpp"

namespace sspo {

// The four mandatory clinical sections of a reasoning trace, in the order
// the grammar requires them.
enum class SectionKind { Rhythm = 0, Conduction = 1, Morphology = 2, Impression = 3 };

inline constexpr std::array<SectionKind, 4> kSectionOrder = {
    SectionKind::Rhythm, SectionKind::Conduction, SectionKind::Morphology,
    SectionKind::Impression};

inline constexpr std::size_t section_index(SectionKind k) {
  return static_cast<std::size_t>(k);
}

std::string_view section_name(SectionKind k);       // "rhythm", ...
std::string_view section_open_tag(SectionKind k);   // "<rhythm>", ...
std::string_view section_close_tag(SectionKind k);  // "</rhythm>", ...

// The fixed negative sentence a placeholder in an evidence section maps to,
// e.g. "No conduction abnormalities identified." Defined for rhythm,
// conduction and morphology; impressions are never synthesized.
std::string_view canonical_negative_sentence(SectionKind k);

// A parsed reasoning trace: four sections, the answer region, and the
// validity indicators the structure reward consumes.
struct StructuredTrace {
  std::array<std::string, 4> sections;  // indexed by section_index()
  std::string answer_text;              // raw text inside the answer region
  LabelSet answer_set;                  // in-vocabulary canonical labels
  bool tags_valid = false;
  std::array<bool, 4> section_valid{};

  // Canonicalized answer tokens that were not in the label vocabulary.
  // Excluded from answer_set; kept for diagnostics.
  std::vector<std::string> unknown_answer_tokens;

  const std::string& section(SectionKind k) const { return sections[section_index(k)]; }
  std::string& section(SectionKind k) { return sections[section_index(k)]; }
  bool valid(SectionKind k) const { return section_valid[section_index(k)]; }
};

// Total over all inputs: malformed text yields tags_valid=false plus a
// best-effort reconstruction of whatever sections were recoverable.
//
// tags_valid is true iff every one of the twelve grammar tags appears exactly
// once and their positions follow the canonical order
//   <think> <rhythm> </rhythm> <conduction> </conduction>
//   <morphology> </morphology> <impression> </impression>
//   </think> <answer> </answer>.
// Answer tokens are split on comma, semicolon, or newline, canonicalized,
// and kept only if they are members of `label_vocab`.
StructuredTrace parse_trace(std::string_view raw_text, const LabelSet& label_vocab);

// Emits the canonical textual form: fixed tag order, one newline between
// section blocks, answer labels sorted ascending and comma-joined.
// Re-parsing the result reproduces sections, indicators, and answer_set.
std::string canonical_serialize(const StructuredTrace& trace);

}  // namespace sspo
