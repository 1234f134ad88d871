#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace capsfuse::metrics {

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct PartialAuc {
  double raw = 0.0;           // area over FPR in [0, fpr_max], at most fpr_max
  double standardized = 0.0;  // McClish-standardized, in [0, 1]
};

struct F1Result {
  double f1 = 0.0;
  Confusion confusion;
};

struct MetricReport {
  double auc = 0.0;
  double pauc_raw = 0.0;
  double pauc_standardized = 0.0;
  double fpr_max = 0.1;
  double f1 = 0.0;
  double threshold = 0.0;
  Confusion confusion;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

// Mann-Whitney AUC: fraction of positive/negative pairs ranked correctly,
// ties counting one half. Throws UndefinedMetricError unless both classes occur.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Exact area under the empirical ROC curve for FPR in [0, fpr_max], tied
// scores joined by straight segments, interpolated linearly at the cut.
PartialAuc partial_auc(std::span<const double> scores, std::span<const int> labels, double fpr_max = 0.1);

// McClish standardization 1/2 (1 + (raw - min)/(max - min)) with
// min = fpr_max^2 / 2 and max = fpr_max. Areas below the chance band map
// linearly onto [0, 1/2) so an all-wrong ranking scores exactly 0.
double standardize_pauc(double raw, double fpr_max);

// Predicts positive iff score >= threshold. F1 is 0 when tp == 0.
F1Result f1_at_threshold(std::span<const double> scores, std::span<const int> labels, double threshold);

// Sorted unique scores plus the midpoints between neighbours.
std::vector<double> threshold_grid(std::span<const double> scores);

// Threshold from threshold_grid(scores) maximizing F1; ties go to the larger threshold.
double best_threshold(std::span<const double> scores, std::span<const int> labels);

// Evaluates AUC/pAUC/F1 on test scores using a threshold tuned on validation scores.
MetricReport evaluate_scores(std::span<const double> val_scores, std::span<const int> val_labels,
                             std::span<const double> test_scores, std::span<const int> test_labels,
                             double fpr_max = 0.1);

}  // namespace capsfuse::metrics
