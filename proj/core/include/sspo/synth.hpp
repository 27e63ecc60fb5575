#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sspo/labels.hpp"
#include "sspo/policy.hpp"
#include "sspo/tokenizer.hpp"
#include "sspo/trace.hpp"
#include "sspo/trainers.hpp"

namespace sspo {

// Per-label signal signature: a sinusoid burst on one designated channel,
// plus the evidence section its teacher sentence is written to.
struct LabelTemplate {
  int channel = 0;
  double cycles = 4.0;  // full periods across the burst window
  double amplitude = 1.0;
  int burst_start = 0;
  int burst_len = 0;
  SectionKind section = SectionKind::Morphology;

  friend bool operator==(const LabelTemplate&, const LabelTemplate&) = default;
};

struct TaskSpec {
  // First label is the "no findings" class, assigned exactly when no other
  // label is active.
  std::vector<std::string> labels = {"NORM", "MI", "STTC", "CD", "HYP"};
  std::map<std::string, LabelTemplate> feature_templates;  // built by finalize()
  double noise_sigma = 0.8;
  double activation_prob = 0.35;
  int min_labels = 0;  // bounds on the number of active non-normal labels
  int max_labels = 2;
  int n_train = 2000;
  int n_val = 200;
  int n_test = 200;
  int signal_len = 256;  // T
  int channels = 4;      // C
  std::uint64_t seed = 0;

  // Fills feature_templates for any labels that lack one, then validates.
  void finalize();
  void validate() const;  // throws std::invalid_argument

  LabelSet label_vocab() const { return LabelSet(labels); }
};

struct SynthRecord {
  std::string id;
  SignalRecord signal;
  LabelSet truth;
  std::string teacher_trace;  // canonical, grammar-perfect
};

struct Dataset {
  std::vector<SynthRecord> train, val, test;
};

// Deterministic per spec.seed; each record depends only on (seed, record
// index), so sharded generation cannot change outputs. Splits are disjoint
// by record id.
Dataset generate_dataset(const TaskSpec& spec);

// Matched-filter reference predictor: correlates the signal with every label
// template and thresholds at the midpoint of the noiseless on/off statistics.
LabelSet bayes_oracle(const SignalRecord& signal, const TaskSpec& spec);

// Line-delimited records {id, labels, signal, trace}.
void write_records(const std::filesystem::path& path, const std::vector<SynthRecord>& records);
std::vector<SynthRecord> read_records(const std::filesystem::path& path);

void write_task_spec(const std::filesystem::path& path, const TaskSpec& spec);
TaskSpec read_task_spec(const std::filesystem::path& path);

// The fixed user query every record is paired with.
TokenSequence default_query(const Tokenizer& tokenizer);

// Teacher-trace tokens plus the end token, ready for the SFT objective.
Example to_example(const SynthRecord& record, const Tokenizer& tokenizer,
                   const TokenSequence& query);
std::vector<Example> to_examples(const std::vector<SynthRecord>& records,
                                 const Tokenizer& tokenizer, const TokenSequence& query);

RlQuery to_rl_query(const SynthRecord& record, const TokenSequence& query);
std::vector<RlQuery> to_rl_queries(const std::vector<SynthRecord>& records,
                                   const TokenSequence& query);

}  // namespace sspo
