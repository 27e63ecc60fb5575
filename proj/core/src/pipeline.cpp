#include "sspo/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <json.hpp>

#include "sspo/errors.hpp"

namespace sspo {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_placeholder(std::string_view text) {
  const std::string t = lower(trim(text));
  return t.empty() || t == "none" || t == "n/a" || t == "-";
}

}  // namespace

FieldMap default_field_map() {
  FieldMap m;
  for (SectionKind k : kSectionOrder) m.emplace(std::string(section_name(k)), k);
  m.emplace("waveform", SectionKind::Morphology);
  return m;
}

NormalizeResult normalize_placeholders(const RawRecord& record, const FieldMap& fields) {
  NormalizeResult res;
  res.record = record;
  std::array<bool, 4> seen{};
  for (auto& [name, text] : res.record.sections) {
    auto it = fields.find(lower(name));
    if (it == fields.end() || it->second == SectionKind::Impression) continue;
    seen[section_index(it->second)] = true;
    if (is_placeholder(text)) {
      text = std::string(canonical_negative_sentence(it->second));
      ++res.replaced;
    }
  }
  // A completely missing evidence field is the same placeholder case.
  for (SectionKind k : {SectionKind::Rhythm, SectionKind::Conduction, SectionKind::Morphology}) {
    if (!seen[section_index(k)]) {
      res.record.sections.emplace(std::string(section_name(k)),
                                  std::string(canonical_negative_sentence(k)));
      ++res.replaced;
    }
  }
  return res;
}

std::pair<std::vector<RawRecord>, CleanReport> filter_missing_impression(
    const std::vector<RawRecord>& records, const FieldMap& fields) {
  std::vector<RawRecord> kept;
  CleanReport report;
  for (const RawRecord& rec : records) {
    bool has_impression = false;
    for (const auto& [name, text] : rec.sections) {
      auto it = fields.find(lower(name));
      if (it != fields.end() && it->second == SectionKind::Impression &&
          !is_placeholder(text)) {
        has_impression = true;
        break;
      }
    }
    if (has_impression) {
      kept.push_back(rec);
    } else {
      ++report.dropped_missing_impression;
    }
  }
  report.kept = static_cast<long>(kept.size());
  return {std::move(kept), report};
}

CleanedRecord restructure(const RawRecord& record, const FieldMap& fields) {
  std::vector<std::string> unmappable;
  std::array<std::vector<std::pair<std::string, std::string>>, 4> grouped;
  for (const auto& [name, text] : record.sections) {
    auto it = fields.find(lower(name));
    if (it == fields.end()) {
      unmappable.push_back(name);
      continue;
    }
    grouped[section_index(it->second)].emplace_back(lower(name), text);
  }
  if (!unmappable.empty()) {
    std::sort(unmappable.begin(), unmappable.end());
    std::string msg = "record '" + record.id + "': unmappable fields:";
    for (const auto& k : unmappable) msg += " " + k;
    throw DataError(msg);
  }

  CleanedRecord out;
  out.id = record.id;
  for (SectionKind k : kSectionOrder) {
    auto& parts = grouped[section_index(k)];
    std::sort(parts.begin(), parts.end());  // field-name order, deterministic
    std::string text;
    for (const auto& [name, content] : parts) {
      const std::string t = trim(content);
      if (t.empty()) continue;
      if (!text.empty()) text += ' ';
      text += t;
    }
    out.sections[section_index(k)] = text;
  }

  LabelSet labels(record.labels);
  out.labels = labels.sorted();

  StructuredTrace trace;
  trace.sections = out.sections;
  trace.answer_set = labels;
  out.trace = canonical_serialize(trace);
  return out;
}

std::pair<std::vector<CleanedRecord>, CleanReport> run_clean(
    const std::vector<RawRecord>& records, const FieldMap& fields) {
  std::vector<RawRecord> normalized;
  normalized.reserve(records.size());
  long replaced = 0;
  for (const RawRecord& rec : records) {
    NormalizeResult res = normalize_placeholders(rec, fields);
    replaced += res.replaced;
    normalized.push_back(std::move(res.record));
  }

  auto [kept, report] = filter_missing_impression(normalized, fields);
  report.placeholders_normalized = replaced;

  std::vector<CleanedRecord> cleaned;
  cleaned.reserve(kept.size());
  for (const RawRecord& rec : kept) cleaned.push_back(restructure(rec, fields));
  report.reformatted = static_cast<long>(cleaned.size());
  return {std::move(cleaned), report};
}

std::vector<RawRecord> read_raw_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open records file: " + path.string());
  std::vector<RawRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      RawRecord rec;
      rec.id = j.at("id").get<std::string>();
      if (rec.id.empty()) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty record id");
      }
      if (const auto it = j.find("sections"); it != j.end()) {
        for (const auto& [name, text] : it->items()) {
          rec.sections[name] = text.is_null() ? "" : text.get<std::string>();
        }
      }
      if (const auto it = j.find("labels"); it != j.end()) {
        for (const auto& l : *it) rec.labels.push_back(l.get<std::string>());
      }
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  // ids must be unique within a file
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw DataError(path.string() + ": duplicate record ids");
  }
  return records;
}

void write_cleaned_records(const std::filesystem::path& path,
                           const std::vector<CleanedRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const CleanedRecord& rec : records) {
    nlohmann::json sections;
    for (SectionKind k : kSectionOrder) {
      sections[std::string(section_name(k))] = rec.sections[section_index(k)];
    }
    nlohmann::json j = {{"id", rec.id},
                        {"labels", rec.labels},
                        {"sections", std::move(sections)},
                        {"trace", rec.trace}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing cleaned records: " + path.string());
}

}  // namespace sspo
