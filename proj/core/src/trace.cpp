#include "sspo/trace.hpp"

#include <algorithm>
#include <stdexcept>

namespace sspo {

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

constexpr std::array<std::string_view, 4> kNames = {"rhythm", "conduction", "morphology",
                                                    "impression"};
constexpr std::array<std::string_view, 4> kOpen = {"<rhythm>", "<conduction>", "<morphology>",
                                                   "<impression>"};
constexpr std::array<std::string_view, 4> kClose = {"</rhythm>", "</conduction>",
                                                    "</morphology>", "</impression>"};

std::vector<std::size_t> find_all(std::string_view text, std::string_view needle) {
  std::vector<std::size_t> out;
  std::size_t pos = text.find(needle);
  while (pos != std::string_view::npos) {
    out.push_back(pos);
    pos = text.find(needle, pos + 1);
  }
  return out;
}

// First well-paired region for (open, close): the first open tag followed by
// the first close tag after it. Returns false if no such pair exists.
bool first_region(std::string_view text, std::string_view open, std::string_view close,
                  std::string_view& inner) {
  const std::size_t o = text.find(open);
  if (o == std::string_view::npos) return false;
  const std::size_t start = o + open.size();
  const std::size_t c = text.find(close, start);
  if (c == std::string_view::npos) return false;
  inner = text.substr(start, c - start);
  return true;
}

std::string_view trimmed(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

std::string_view section_name(SectionKind k) { return kNames[section_index(k)]; }
std::string_view section_open_tag(SectionKind k) { return kOpen[section_index(k)]; }
std::string_view section_close_tag(SectionKind k) { return kClose[section_index(k)]; }

std::string_view canonical_negative_sentence(SectionKind k) {
  switch (k) {
    case SectionKind::Rhythm:
      return "No rhythm abnormalities identified.";
    case SectionKind::Conduction:
      return "No conduction abnormalities identified.";
    case SectionKind::Morphology:
      return "No morphological abnormalities identified.";
    case SectionKind::Impression:
      break;
  }
  throw std::invalid_argument("canonical_negative_sentence: impressions have no negative form");
}

StructuredTrace parse_trace(std::string_view raw_text, const LabelSet& label_vocab) {
  StructuredTrace trace;

  // The full tag sequence the grammar demands, in order.
  const std::array<std::string_view, 12> ordered_tags = {
      kThinkOpen, kOpen[0],  kClose[0],   kOpen[1],    kClose[1],  kOpen[2],
      kClose[2],  kOpen[3],  kClose[3],   kThinkClose, kAnswerOpen, kAnswerClose};

  bool valid = true;
  std::size_t prev_pos = 0;
  bool have_prev = false;
  for (const auto tag : ordered_tags) {
    const auto occurrences = find_all(raw_text, tag);
    if (occurrences.size() != 1) {
      valid = false;
      break;
    }
    if (have_prev && occurrences[0] <= prev_pos) {
      valid = false;
      break;
    }
    prev_pos = occurrences[0];
    have_prev = true;
  }
  trace.tags_valid = valid;

  // Best-effort extraction works for valid and malformed input alike: in the
  // valid case the first pair is the unique pair.
  for (SectionKind k : kSectionOrder) {
    std::string_view inner;
    if (first_region(raw_text, section_open_tag(k), section_close_tag(k), inner)) {
      trace.section(k) = std::string(inner);
    }
    trace.section_valid[section_index(k)] = !trimmed(trace.section(k)).empty();
  }

  std::string_view answer_inner;
  if (first_region(raw_text, kAnswerOpen, kAnswerClose, answer_inner)) {
    trace.answer_text = std::string(answer_inner);
    std::size_t start = 0;
    while (start <= answer_inner.size()) {
      std::size_t sep = answer_inner.find_first_of(",;\n", start);
      if (sep == std::string_view::npos) sep = answer_inner.size();
      const std::string token = canonicalize_label(answer_inner.substr(start, sep - start));
      if (!token.empty()) {
        if (label_vocab.contains(token)) {
          trace.answer_set.insert(token);
        } else if (std::find(trace.unknown_answer_tokens.begin(),
                             trace.unknown_answer_tokens.end(),
                             token) == trace.unknown_answer_tokens.end()) {
          trace.unknown_answer_tokens.push_back(token);
        }
      }
      start = sep + 1;
    }
  }

  return trace;
}

std::string canonical_serialize(const StructuredTrace& trace) {
  std::string out;
  out += kThinkOpen;
  for (SectionKind k : kSectionOrder) {
    out += section_open_tag(k);
    out += trace.section(k);
    out += section_close_tag(k);
    if (k != SectionKind::Impression) out += '\n';
  }
  out += kThinkClose;
  out += '\n';
  out += kAnswerOpen;
  const auto labels = trace.answer_set.sorted();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) out += ", ";
    out += labels[i];
  }
  out += kAnswerClose;
  return out;
}

}  // namespace sspo
