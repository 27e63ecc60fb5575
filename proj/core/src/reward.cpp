#include "sspo/reward.hpp"

#include <cmath>
#include <stdexcept>

namespace sspo {

double structure_reward(const StructuredTrace& trace) {
  int satisfied = trace.tags_valid ? 1 : 0;
  for (bool v : trace.section_valid) satisfied += v ? 1 : 0;
  return static_cast<double>(satisfied) / 5.0;
}

double dice_reward(const LabelSet& truth, const LabelSet& predicted) {
  const std::size_t denom = truth.size() + predicted.size();
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(truth.intersection_size(predicted)) /
         static_cast<double>(denom);
}

RewardBreakdown composite_reward(const StructuredTrace& trace, const LabelSet& truth) {
  RewardBreakdown out;
  out.structure = structure_reward(trace);
  out.diagnosis = dice_reward(truth, trace.answer_set);
  out.total = out.structure + out.diagnosis;
  return out;
}

GroupAdvantages group_advantages(const std::vector<double>& rewards, double epsilon) {
  if (rewards.size() < 2) {
    throw std::invalid_argument("group_advantages: need a group of at least 2 rewards");
  }
  if (epsilon < 0.0) {
    throw std::invalid_argument("group_advantages: epsilon must be non-negative");
  }

  GroupAdvantages out;
  out.rewards = rewards;
  out.epsilon = epsilon;

  const double g = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  out.mean = sum / g;

  double sq = 0.0;
  for (double r : rewards) sq += (r - out.mean) * (r - out.mean);
  out.variance = sq / g;  // population variance

  const double denom = std::sqrt(out.variance + epsilon);
  out.advantages.resize(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out.advantages[i] = denom > 0.0 ? (rewards[i] - out.mean) / denom : 0.0;
  }
  return out;
}

}  // namespace sspo
