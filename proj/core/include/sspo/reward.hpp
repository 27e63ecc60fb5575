#pragma once

#include <vector>

#include "sspo/labels.hpp"
#include "sspo/trace.hpp"

namespace sspo {

// Per-rollout reward components. total is always structure + diagnosis.
struct RewardBreakdown {
  double structure = 0.0;  // in [0, 1], multiples of 1/5
  double diagnosis = 0.0;  // in [0, 1]
  double total = 0.0;      // in [0, 2]
};

// Fraction of the five format rules satisfied: valid tag hierarchy plus one
// rule per non-empty section.
double structure_reward(const StructuredTrace& trace);

// Dice coefficient 2|A∩B| / (|A|+|B|). Two empty sets count as perfect
// agreement (1.0) so the reward stays total.
double dice_reward(const LabelSet& truth, const LabelSet& predicted);

RewardBreakdown composite_reward(const StructuredTrace& trace, const LabelSet& truth);

// Group-normalized advantages: a_i = (r_i - mean) / sqrt(variance + epsilon),
// with the population variance over the group.
struct GroupAdvantages {
  std::vector<double> rewards;
  double mean = 0.0;
  double variance = 0.0;
  std::vector<double> advantages;
  double epsilon = 0.0;
};

// Requires at least two rewards and epsilon >= 0. A group with zero variance
// and epsilon == 0 yields all-zero advantages.
GroupAdvantages group_advantages(const std::vector<double>& rewards, double epsilon);

}  // namespace sspo
