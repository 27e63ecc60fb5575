#include "sspo/synth.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "sspo/errors.hpp"
#include "sspo/rng.hpp"

namespace sspo {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Evidence sections rotate over the three observation tiers so the teacher
// sentences stay disentangled by construction.
constexpr std::array<SectionKind, 3> kEvidenceSections = {
    SectionKind::Rhythm, SectionKind::Conduction, SectionKind::Morphology};

std::string evidence_sentence(SectionKind section, const std::string& label) {
  switch (section) {
    case SectionKind::Rhythm:
      return "Irregular rhythm pattern consistent with " + label + ".";
    case SectionKind::Conduction:
      return "Delayed conduction intervals consistent with " + label + ".";
    default:
      return "Abnormal waveform morphology consistent with " + label + ".";
  }
}

void add_template(Eigen::MatrixXd& samples, const LabelTemplate& tpl) {
  for (int t = 0; t < tpl.burst_len; ++t) {
    const double phase = kTwoPi * tpl.cycles * static_cast<double>(t) /
                         static_cast<double>(tpl.burst_len);
    samples(tpl.burst_start + t, tpl.channel) += tpl.amplitude * std::sin(phase);
  }
}

SynthRecord make_record(const TaskSpec& spec, std::uint64_t global_index) {
  std::mt19937_64 rng(mix_seed(spec.seed, 0xd5u + global_index));

  const std::size_t n_active_labels = spec.labels.size() - 1;
  std::vector<bool> active(n_active_labels, false);
  bool ok = false;
  for (int attempt = 0; attempt < 10000 && !ok; ++attempt) {
    int count = 0;
    for (std::size_t j = 0; j < n_active_labels; ++j) {
      active[j] = uniform01(rng) < spec.activation_prob;
      count += active[j] ? 1 : 0;
    }
    ok = count >= spec.min_labels && count <= spec.max_labels;
  }
  if (!ok) throw DataError("generate_dataset: could not satisfy label count constraints");

  SynthRecord rec;
  char id_buf[16];
  std::snprintf(id_buf, sizeof(id_buf), "r%06llu", static_cast<unsigned long long>(global_index));
  rec.id = id_buf;

  rec.signal.samples = Eigen::MatrixXd::Zero(spec.signal_len, spec.channels);
  std::vector<std::string> active_labels;
  for (std::size_t j = 0; j < n_active_labels; ++j) {
    if (!active[j]) continue;
    const std::string& label = spec.labels[j + 1];
    active_labels.push_back(label);
    add_template(rec.signal.samples, spec.feature_templates.at(label));
  }
  if (spec.noise_sigma > 0.0) {
    for (int t = 0; t < spec.signal_len; ++t) {
      for (int c = 0; c < spec.channels; ++c) {
        rec.signal.samples(t, c) += spec.noise_sigma * normal01(rng);
      }
    }
  }

  if (active_labels.empty()) {
    rec.truth.insert(spec.labels[0]);
  } else {
    for (const auto& l : active_labels) rec.truth.insert(l);
  }

  // Teacher trace: evidence sentences per designated section (label-sorted),
  // negatives elsewhere, an impression that names the answer set.
  StructuredTrace trace;
  for (SectionKind k : kEvidenceSections) {
    std::string text;
    for (const std::string& label : rec.truth.sorted()) {
      auto it = spec.feature_templates.find(label);
      if (it == spec.feature_templates.end() || it->second.section != k) continue;
      if (!text.empty()) text += ' ';
      text += evidence_sentence(k, label);
    }
    trace.section(k) = text.empty() ? std::string(canonical_negative_sentence(k)) : text;
  }
  if (active_labels.empty()) {
    trace.section(SectionKind::Impression) = "Normal ECG.";
  } else {
    std::string imp = "Findings consistent with:";
    const auto sorted = rec.truth.sorted();
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      imp += i == 0 ? " " : ", ";
      imp += sorted[i];
    }
    imp += ".";
    trace.section(SectionKind::Impression) = imp;
  }
  trace.answer_set = rec.truth;
  rec.teacher_trace = canonical_serialize(trace);
  return rec;
}

nlohmann::json template_to_json(const LabelTemplate& tpl) {
  return {{"channel", tpl.channel},       {"cycles", tpl.cycles},
          {"amplitude", tpl.amplitude},   {"burst_start", tpl.burst_start},
          {"burst_len", tpl.burst_len},   {"section", std::string(section_name(tpl.section))}};
}

LabelTemplate template_from_json(const nlohmann::json& j) {
  LabelTemplate tpl;
  tpl.channel = j.at("channel").get<int>();
  tpl.cycles = j.at("cycles").get<double>();
  tpl.amplitude = j.at("amplitude").get<double>();
  tpl.burst_start = j.at("burst_start").get<int>();
  tpl.burst_len = j.at("burst_len").get<int>();
  const std::string sec = j.at("section").get<std::string>();
  bool found = false;
  for (SectionKind k : kSectionOrder) {
    if (sec == section_name(k)) {
      tpl.section = k;
      found = true;
    }
  }
  if (!found) throw DataError("task spec: unknown section name: " + sec);
  return tpl;
}

}  // namespace

void TaskSpec::finalize() {
  for (std::size_t j = 1; j < labels.size(); ++j) {
    const std::string& label = labels[j];
    if (feature_templates.count(label)) continue;
    LabelTemplate tpl;
    const int idx = static_cast<int>(j) - 1;
    tpl.channel = idx % channels;
    tpl.cycles = 3.0 + 2.0 * idx;
    tpl.amplitude = 1.0;
    tpl.burst_len = signal_len / 2;
    tpl.burst_start = (idx * signal_len / 8) % (signal_len - tpl.burst_len + 1);
    tpl.section = kEvidenceSections[static_cast<std::size_t>(idx) % kEvidenceSections.size()];
    feature_templates.emplace(label, tpl);
  }
  validate();
}

void TaskSpec::validate() const {
  if (labels.size() < 2) throw std::invalid_argument("TaskSpec: need at least two labels");
  {
    LabelSet dedup(labels);
    if (dedup.size() != labels.size()) {
      throw std::invalid_argument("TaskSpec: labels must be distinct and canonical");
    }
    for (const auto& l : labels) {
      if (canonicalize_label(l) != l) {
        throw std::invalid_argument("TaskSpec: label not in canonical form: " + l);
      }
    }
  }
  const int n_active = static_cast<int>(labels.size()) - 1;
  if (min_labels < 0 || max_labels < min_labels || min_labels > n_active) {
    throw std::invalid_argument("TaskSpec: infeasible min/max label constraints");
  }
  if (min_labels > 0 && activation_prob <= 0.0) {
    throw std::invalid_argument("TaskSpec: min_labels > 0 requires activation_prob > 0");
  }
  if (activation_prob < 0.0 || activation_prob > 1.0) {
    throw std::invalid_argument("TaskSpec: activation_prob must lie in [0, 1]");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("TaskSpec: noise_sigma must be >= 0");
  if (signal_len < 2 || channels < 1) {
    throw std::invalid_argument("TaskSpec: signal_len/channels out of range");
  }
  if (n_train < 0 || n_val < 0 || n_test < 0) {
    throw std::invalid_argument("TaskSpec: split sizes must be non-negative");
  }
  for (const auto& [label, tpl] : feature_templates) {
    if (tpl.channel < 0 || tpl.channel >= channels) {
      throw std::invalid_argument("TaskSpec: template channel out of range for " + label);
    }
    if (tpl.burst_len < 1 || tpl.burst_start < 0 ||
        tpl.burst_start + tpl.burst_len > signal_len) {
      throw std::invalid_argument("TaskSpec: template burst out of range for " + label);
    }
  }
}

Dataset generate_dataset(const TaskSpec& input_spec) {
  TaskSpec spec = input_spec;
  spec.finalize();

  Dataset ds;
  std::uint64_t idx = 0;
  for (int i = 0; i < spec.n_train; ++i) ds.train.push_back(make_record(spec, idx++));
  for (int i = 0; i < spec.n_val; ++i) ds.val.push_back(make_record(spec, idx++));
  for (int i = 0; i < spec.n_test; ++i) ds.test.push_back(make_record(spec, idx++));
  return ds;
}

LabelSet bayes_oracle(const SignalRecord& signal, const TaskSpec& input_spec) {
  TaskSpec spec = input_spec;
  spec.finalize();

  LabelSet predicted;
  for (std::size_t j = 1; j < spec.labels.size(); ++j) {
    const std::string& label = spec.labels[j];
    const LabelTemplate& tpl = spec.feature_templates.at(label);
    double num = 0.0, denom = 0.0;
    for (int t = 0; t < tpl.burst_len; ++t) {
      const double w = tpl.amplitude * std::sin(kTwoPi * tpl.cycles * static_cast<double>(t) /
                                                static_cast<double>(tpl.burst_len));
      num += w * signal.samples(tpl.burst_start + t, tpl.channel);
      denom += w * w;
    }
    if (denom > 0.0 && num / denom > 0.5) predicted.insert(label);
  }
  if (predicted.empty()) predicted.insert(spec.labels[0]);
  return predicted;
}

void write_records(const std::filesystem::path& path, const std::vector<SynthRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const SynthRecord& rec : records) {
    nlohmann::json signal = nlohmann::json::array();
    for (Eigen::Index t = 0; t < rec.signal.samples.rows(); ++t) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < rec.signal.samples.cols(); ++c) {
        row.push_back(rec.signal.samples(t, c));
      }
      signal.push_back(std::move(row));
    }
    nlohmann::json j = {{"id", rec.id},
                        {"labels", rec.truth.sorted()},
                        {"signal", std::move(signal)},
                        {"trace", rec.teacher_trace}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing records: " + path.string());
}

std::vector<SynthRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open records file: " + path.string());
  std::vector<SynthRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      SynthRecord rec;
      rec.id = j.at("id").get<std::string>();
      for (const auto& l : j.at("labels")) rec.truth.insert(l.get<std::string>());
      const auto& signal = j.at("signal");
      const Eigen::Index rows = static_cast<Eigen::Index>(signal.size());
      if (rows == 0) throw DataError("record " + rec.id + ": empty signal");
      const Eigen::Index cols = static_cast<Eigen::Index>(signal.at(0).size());
      rec.signal.samples.resize(rows, cols);
      for (Eigen::Index t = 0; t < rows; ++t) {
        const auto& row = signal.at(static_cast<std::size_t>(t));
        if (static_cast<Eigen::Index>(row.size()) != cols) {
          throw DataError("record " + rec.id + ": ragged signal rows");
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
          rec.signal.samples(t, c) = row.at(static_cast<std::size_t>(c)).get<double>();
        }
      }
      rec.teacher_trace = j.at("trace").get<std::string>();
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void write_task_spec(const std::filesystem::path& path, const TaskSpec& spec) {
  nlohmann::json templates;
  for (const auto& [label, tpl] : spec.feature_templates) {
    templates[label] = template_to_json(tpl);
  }
  nlohmann::json j = {{"labels", spec.labels},
                      {"feature_templates", std::move(templates)},
                      {"noise_sigma", spec.noise_sigma},
                      {"activation_prob", spec.activation_prob},
                      {"min_labels", spec.min_labels},
                      {"max_labels", spec.max_labels},
                      {"n_train", spec.n_train},
                      {"n_val", spec.n_val},
                      {"n_test", spec.n_test},
                      {"signal_len", spec.signal_len},
                      {"channels", spec.channels},
                      {"seed", spec.seed}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing task spec: " + path.string());
}

TokenSequence default_query(const Tokenizer& tokenizer) {
  return tokenizer.encode("Diagnose this ECG.");
}

Example to_example(const SynthRecord& record, const Tokenizer& tokenizer,
                   const TokenSequence& query) {
  Example ex;
  ex.signal = record.signal;
  ex.query = query;
  ex.target = tokenizer.encode(record.teacher_trace);
  ex.target.push_back(tokenizer.eos_id());
  return ex;
}

std::vector<Example> to_examples(const std::vector<SynthRecord>& records,
                                 const Tokenizer& tokenizer, const TokenSequence& query) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& rec : records) out.push_back(to_example(rec, tokenizer, query));
  return out;
}

RlQuery to_rl_query(const SynthRecord& record, const TokenSequence& query) {
  return {record.signal, query, record.truth};
}

std::vector<RlQuery> to_rl_queries(const std::vector<SynthRecord>& records,
                                   const TokenSequence& query) {
  std::vector<RlQuery> out;
  out.reserve(records.size());
  for (const auto& rec : records) out.push_back(to_rl_query(rec, query));
  return out;
}

TaskSpec read_task_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task spec: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    TaskSpec spec;
    spec.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& [label, tj] : j.at("feature_templates").items()) {
      spec.feature_templates[label] = template_from_json(tj);
    }
    spec.noise_sigma = j.at("noise_sigma").get<double>();
    spec.activation_prob = j.at("activation_prob").get<double>();
    spec.min_labels = j.at("min_labels").get<int>();
    spec.max_labels = j.at("max_labels").get<int>();
    spec.n_train = j.at("n_train").get<int>();
    spec.n_val = j.at("n_val").get<int>();
    spec.n_test = j.at("n_test").get<int>();
    spec.signal_len = j.at("signal_len").get<int>();
    spec.channels = j.at("channels").get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad task spec " + path.string() + ": " + e.what());
  }
}

}  // namespace sspo
