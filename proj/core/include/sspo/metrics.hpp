#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sspo/labels.hpp"
#include "sspo/trace.hpp"

namespace sspo {

struct LabelCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

// Multi-label set metrics in all three averaging modes. 0/0 ratios resolve
// to 0 except the per-pair Dice-style F1, where two empty sets agree.
struct SetMetrics {
  double micro_precision = 0.0;
  double micro_recall = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;   // unweighted mean over labels present in any truth
  double sample_f1 = 0.0;  // mean per-pair Dice-style F1
  std::map<std::string, LabelCounts> per_label;
};

SetMetrics set_metrics(const std::vector<std::pair<LabelSet, LabelSet>>& pairs);

// Percentage of traces satisfying all five format rules.
double ssv_metric(const std::vector<StructuredTrace>& traces);

// Fleiss' kappa over a subjects x raters matrix of categorical ratings.
// Returns nullopt when chance agreement is total (no rating variance).
std::optional<double> fleiss_kappa(const std::vector<std::vector<int>>& ratings);

// Quadratic weighted kappa over two equal-length ordinal ratings sharing a
// category range. Returns nullopt when both raters are constant.
std::optional<double> quadratic_weighted_kappa(const std::vector<int>& a,
                                               const std::vector<int>& b);

// Pearson correlation of average ranks; ties get the mean of their rank
// range. Returns nullopt when either vector has zero rank variance.
std::optional<double> spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace sspo
