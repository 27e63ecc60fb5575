#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sspo/labels.hpp"
#include "sspo/trace.hpp"

namespace sspo {

// An externally supplied raw analysis record: free-text fields keyed by
// source field name, plus its diagnosis labels.
struct RawRecord {
  std::string id;
  std::map<std::string, std::string> sections;
  std::vector<std::string> labels;
};

// Audit record of one cleaning run. kept + dropped_missing_impression equals
// the input count.
struct CleanReport {
  long kept = 0;
  long dropped_missing_impression = 0;
  long placeholders_normalized = 0;
  long reformatted = 0;
};

struct CleanedRecord {
  std::string id;
  std::array<std::string, 4> sections;  // indexed by section_index()
  std::vector<std::string> labels;      // canonical, sorted, deduplicated
  std::string trace;                    // canonical trace text
};

// Source field name (lowercase) -> trace section.
using FieldMap = std::map<std::string, SectionKind>;

// The four canonical names plus the "waveform" alias for morphology.
FieldMap default_field_map();

struct NormalizeResult {
  RawRecord record;
  long replaced = 0;
};

// Replaces placeholder content ("", "None", "N/A", "-", case-insensitive) in
// fields mapping to rhythm/conduction/morphology with that section's
// canonical negative sentence, adding the field when it is missing entirely.
// Impressions are never filled: an empty impression is a drop signal.
NormalizeResult normalize_placeholders(const RawRecord& record,
                                       const FieldMap& fields = default_field_map());

// Drops records whose impression is absent or placeholder-only.
std::pair<std::vector<RawRecord>, CleanReport> filter_missing_impression(
    const std::vector<RawRecord>& records, const FieldMap& fields = default_field_map());

// Deterministic reformatting onto the four-section trace. Introduces no new
// content: every output sentence is either input field text or a canonical
// negative. Unmappable field names raise DataError naming the keys.
CleanedRecord restructure(const RawRecord& record,
                          const FieldMap& fields = default_field_map());

// normalize -> filter -> restructure over a whole file worth of records.
std::pair<std::vector<CleanedRecord>, CleanReport> run_clean(
    const std::vector<RawRecord>& records, const FieldMap& fields = default_field_map());

// Line-delimited JSON, one record per line. Reading accepts both raw records
// and previously cleaned output (whose sections are already canonical).
std::vector<RawRecord> read_raw_records(const std::filesystem::path& path);
void write_cleaned_records(const std::filesystem::path& path,
                           const std::vector<CleanedRecord>& records);

}  // namespace sspo
