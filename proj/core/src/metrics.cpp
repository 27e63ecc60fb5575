#include "sspo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sspo/reward.hpp"

namespace sspo {

namespace {

double safe_ratio(double num, double denom) { return denom > 0.0 ? num / denom : 0.0; }

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });

  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

SetMetrics set_metrics(const std::vector<std::pair<LabelSet, LabelSet>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("set_metrics: empty pair list");

  SetMetrics out;
  long tp = 0, fp = 0, fn = 0;
  double sample_sum = 0.0;
  LabelSet truth_labels;
  for (const auto& [truth, predicted] : pairs) {
    for (const auto& label : truth) {
      truth_labels.insert(label);
      if (predicted.contains(label)) {
        ++tp;
        ++out.per_label[label].tp;
      } else {
        ++fn;
        ++out.per_label[label].fn;
      }
    }
    for (const auto& label : predicted) {
      if (!truth.contains(label)) {
        ++fp;
        ++out.per_label[label].fp;
      }
    }
    sample_sum += dice_reward(truth, predicted);
  }

  out.micro_precision = safe_ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
  out.micro_recall = safe_ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
  out.micro_f1 = safe_ratio(2.0 * out.micro_precision * out.micro_recall,
                            out.micro_precision + out.micro_recall);

  double macro_sum = 0.0;
  for (const auto& label : truth_labels) {
    const LabelCounts& c = out.per_label[label];
    const double p = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    const double r = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    macro_sum += safe_ratio(2.0 * p * r, p + r);
  }
  out.macro_f1 = macro_sum / static_cast<double>(truth_labels.size());
  out.sample_f1 = sample_sum / static_cast<double>(pairs.size());
  return out;
}

double ssv_metric(const std::vector<StructuredTrace>& traces) {
  if (traces.empty()) throw std::invalid_argument("ssv_metric: empty trace list");
  long valid = 0;
  for (const StructuredTrace& t : traces) {
    if (structure_reward(t) == 1.0) ++valid;
  }
  return 100.0 * static_cast<double>(valid) / static_cast<double>(traces.size());
}

std::optional<double> fleiss_kappa(const std::vector<std::vector<int>>& ratings) {
  const std::size_t n = ratings.size();
  if (n < 2) throw std::invalid_argument("fleiss_kappa: need at least 2 subjects");
  const std::size_t raters = ratings[0].size();
  if (raters < 2) throw std::invalid_argument("fleiss_kappa: need at least 2 raters");

  std::map<int, std::size_t> category_index;
  for (const auto& row : ratings) {
    if (row.size() != raters) {
      throw std::invalid_argument("fleiss_kappa: ragged ratings matrix");
    }
    for (int c : row) category_index.emplace(c, 0);
  }
  std::size_t next = 0;
  for (auto& [cat, idx] : category_index) idx = next++;
  const std::size_t k = category_index.size();

  std::vector<double> p_cat(k, 0.0);
  double p_bar = 0.0;
  const double r = static_cast<double>(raters);
  for (const auto& row : ratings) {
    std::vector<double> counts(k, 0.0);
    for (int c : row) counts[category_index[c]] += 1.0;
    double sum_sq = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      sum_sq += counts[j] * counts[j];
      p_cat[j] += counts[j];
    }
    p_bar += (sum_sq - r) / (r * (r - 1.0));
  }
  p_bar /= static_cast<double>(n);

  double p_e = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double pj = p_cat[j] / (static_cast<double>(n) * r);
    p_e += pj * pj;
  }
  if (p_e >= 1.0) return std::nullopt;  // no rating variance, kappa undefined
  return (p_bar - p_e) / (1.0 - p_e);
}

std::optional<double> quadratic_weighted_kappa(const std::vector<int>& a,
                                               const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("quadratic_weighted_kappa: length mismatch");
  if (a.empty()) throw std::invalid_argument("quadratic_weighted_kappa: empty ratings");

  int lo = a[0], hi = a[0];
  for (int v : a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (int v : b) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const std::size_t k = static_cast<std::size_t>(hi - lo) + 1;
  if (k == 1) return std::nullopt;  // both raters constant and identical

  const double n = static_cast<double>(a.size());
  std::vector<std::vector<double>> observed(k, std::vector<double>(k, 0.0));
  std::vector<double> hist_a(k, 0.0), hist_b(k, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t ia = static_cast<std::size_t>(a[i] - lo);
    const std::size_t ib = static_cast<std::size_t>(b[i] - lo);
    observed[ia][ib] += 1.0 / n;
    hist_a[ia] += 1.0 / n;
    hist_b[ib] += 1.0 / n;
  }

  const double denom_w = static_cast<double>((k - 1) * (k - 1));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double d = static_cast<double>(i) - static_cast<double>(j);
      const double w = d * d / denom_w;
      num += w * observed[i][j];
      den += w * hist_a[i] * hist_b[j];
    }
  }
  if (den == 0.0) return std::nullopt;
  return 1.0 - num / den;
}

std::optional<double> spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman_rho: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("spearman_rho: need at least 2 values");

  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());

  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;

  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return std::nullopt;
  return cov / std::sqrt(va * vb);
}

}  // namespace sspo
