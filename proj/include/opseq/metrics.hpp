#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "opseq/error.hpp"

namespace opseq {

/// Positive class is "vulnerable". Laid out as C00 = tp, C01 = fp, C10 = fn,
/// C11 = tn (rows predicted, columns actual).
struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }

  std::uint64_t cell(int row, int col) const noexcept {
    if (row == 0) return col == 0 ? tp : fp;
    return col == 0 ? fn : tn;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Scores whose denominator is zero are absent rather than 0.
struct Scores {
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

inline ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorCode::kLengthMismatch, "predictions and labels differ in length");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] != 0;
    const bool t = truth[i] != 0;
    if (p && t) ++cm.tp;
    else if (p) ++cm.fp;
    else if (t) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

inline Scores scores(const ConfusionMatrix& cm) {
  auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  Scores s;
  s.accuracy = ratio(cm.tp + cm.tn, cm.total());
  s.precision = ratio(cm.tp, cm.tp + cm.fp);
  s.recall = ratio(cm.tp, cm.tp + cm.fn);
  if (s.precision && s.recall && *s.precision + *s.recall > 0.0) {
    s.f1 = 2.0 * *s.precision * *s.recall / (*s.precision + *s.recall);
  }
  return s;
}

/// Unwraps a score, raising UndefinedMetric when it is absent.
inline double require_metric(const std::optional<double>& value, const char* name) {
  if (!value) throw Error(ErrorCode::kUndefinedMetric, std::string(name) + " has a zero denominator");
  return *value;
}

namespace detail {

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const double> scores, std::span<const int> truth) {
  if (scores.size() != truth.size()) throw Error(ErrorCode::kLengthMismatch, "scores and labels differ in length");
  const auto positives = static_cast<std::size_t>(std::count_if(truth.begin(), truth.end(), [](int t) { return t != 0; }));
  const std::size_t negatives = truth.size() - positives;
  if (positives == 0 || negatives == 0) throw Error(ErrorCode::kSingleClass, "ROC needs both classes");
  return {positives, negatives};
}

}  // namespace detail

/// Mann-Whitney U statistic normalised to [0, 1]; tied scores count one half.
inline double roc_auc(std::span<const double> scores, std::span<const int> truth) {
  const auto [positives, negatives] = detail::class_counts(scores, truth);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the mid-rank keeps tie ranks integral.
  long double positive_rank_sum_x2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const auto rank_x2 = static_cast<long double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (truth[order[k]] != 0) positive_rank_sum_x2 += rank_x2;
    }
    i = j;
  }
  const long double p = positives;
  const long double u = positive_rank_sum_x2 / 2 - p * (p + 1) / 2;
  return static_cast<double>(u / (p * static_cast<long double>(negatives)));
}

/// ROC curve from (0,0) to (1,1), one point per distinct score threshold,
/// thresholds descending. A sample counts as positive when score >= threshold.
inline std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> truth) {
  const auto [positives, negatives] = detail::class_counts(scores, truth);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> points{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (truth[order[j]] != 0 ? tp : fp) += 1;
      ++j;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                      static_cast<double>(tp) / static_cast<double>(positives)});
    i = j;
  }
  return points;
}

inline double trapezoid_area(std::span<const RocPoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

struct MetricsReport {
  ConfusionMatrix matrix;
  Scores scores;
  std::optional<double> roc_auc;
  std::vector<RocPoint> roc;
};

/// Full report from scores; labels come from thresholding at `threshold`.
inline MetricsReport evaluate_scores(std::span<const double> probabilities, std::span<const int> truth,
                                     double threshold = 0.5) {
  if (probabilities.size() != truth.size()) {
    throw Error(ErrorCode::kLengthMismatch, "scores and labels differ in length");
  }
  std::vector<int> predicted(probabilities.size());
  for (std::size_t i = 0; i < probabilities.size(); ++i) predicted[i] = probabilities[i] >= threshold ? 1 : 0;
  MetricsReport report;
  report.matrix = confusion(predicted, truth);
  report.scores = scores(report.matrix);
  const bool both = report.matrix.tp + report.matrix.fn > 0 && report.matrix.fp + report.matrix.tn > 0;
  if (both) {
    report.roc_auc = roc_auc(probabilities, truth);
    report.roc = roc_points(probabilities, truth);
  }
  return report;
}

}  // namespace opseq
