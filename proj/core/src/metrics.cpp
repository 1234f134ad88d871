#include "capsfuse/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>

#include "capsfuse/errors.hpp"

namespace capsfuse::metrics {

namespace {

// 2tp / (2tp + fp + fn): one correctly rounded division of integers, so
// equal ratios compare equal and threshold ties resolve deterministically.
double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp == 0) return 0.0;
  return static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
}

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts count_classes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("metrics: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  ClassCounts c;
  for (int y : labels) {
    if (y == 1) ++c.pos;
    else if (y == 0) ++c.neg;
    else throw ContractError("metrics: labels must be 0 or 1");
  }
  return c;
}

ClassCounts require_both(std::span<const double> scores, std::span<const int> labels) {
  auto c = count_classes(scores, labels);
  if (!c.pos || !c.neg) throw UndefinedMetricError("AUC is undefined unless both classes are present");
  return c;
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const auto counts = require_both(scores, labels);
  const auto idx = order_by_score(scores, false);
  // Twice the Mann-Whitney U, kept integral so ties (worth 1/2) stay exact.
  std::uint64_t twice_u = 0;
  std::uint64_t neg_below = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? pos : neg) += 1;
      ++j;
    }
    twice_u += 2 * neg_below * pos + pos * neg;
    neg_below += neg;
    i = j;
  }
  const double u = static_cast<double>(twice_u) / 2.0;
  return u / (static_cast<double>(counts.pos) * static_cast<double>(counts.neg));
}

double standardize_pauc(double raw, double fpr_max) {
  const double min_area = fpr_max * fpr_max / 2.0;
  const double max_area = fpr_max;
  double s;
  if (max_area == min_area) {
    s = 0.5;
  } else if (raw >= min_area) {
    s = 0.5 * (1.0 + (raw - min_area) / (max_area - min_area));
  } else {
    s = 0.5 * raw / min_area;
  }
  return std::clamp(s, 0.0, 1.0);
}

PartialAuc partial_auc(std::span<const double> scores, std::span<const int> labels, double fpr_max) {
  if (!(fpr_max > 0.0 && fpr_max <= 1.0)) throw ContractError("partial_auc: fpr_max must lie in (0, 1]");
  const auto counts = require_both(scores, labels);
  const auto idx = order_by_score(scores, true);
  const double np = static_cast<double>(counts.pos);
  const double nn = static_cast<double>(counts.neg);

  double area = 0.0;
  double x0 = 0.0, y0 = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    i = j;
    const double x1 = static_cast<double>(fp) / nn;
    const double y1 = static_cast<double>(tp) / np;
    if (x1 <= fpr_max) {
      area += (x1 - x0) * (y0 + y1) / 2.0;
    } else {
      const double y_cut = y0 + (y1 - y0) * (fpr_max - x0) / (x1 - x0);
      area += (fpr_max - x0) * (y0 + y_cut) / 2.0;
      break;
    }
    x0 = x1;
    y0 = y1;
  }
  return {area, standardize_pauc(area, fpr_max)};
}

F1Result f1_at_threshold(std::span<const double> scores, std::span<const int> labels, double threshold) {
  count_classes(scores, labels);
  if (scores.empty()) throw ContractError("f1_at_threshold: empty input");
  F1Result r;
  auto& c = r.confusion;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) (predicted ? c.tp : c.fn) += 1;
    else (predicted ? c.fp : c.tn) += 1;
  }
  r.f1 = f1_from_counts(c.tp, c.fp, c.fn);
  return r;
}

std::vector<double> threshold_grid(std::span<const double> scores) {
  std::vector<double> unique(scores.begin(), scores.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  std::vector<double> grid;
  grid.reserve(unique.size() * 2);
  for (std::size_t i = 0; i < unique.size(); ++i) {
    if (i) grid.push_back(unique[i - 1] + (unique[i] - unique[i - 1]) / 2.0);
    grid.push_back(unique[i]);
  }
  return grid;
}

double best_threshold(std::span<const double> scores, std::span<const int> labels) {
  count_classes(scores, labels);
  if (scores.empty()) throw ContractError("best_threshold: empty input");
  const auto grid = threshold_grid(scores);

  // Sweep from the largest threshold downwards, admitting scores as they pass.
  const auto idx = order_by_score(scores, true);
  std::size_t total_pos = 0;
  for (int y : labels) total_pos += (y == 1);
  std::size_t tp = 0, fp = 0, next = 0;
  double best = grid.back();
  double best_f1 = -1.0;
  for (std::size_t g = grid.size(); g-- > 0;) {
    const double t = grid[g];
    while (next < idx.size() && scores[idx[next]] >= t) {
      (labels[idx[next]] == 1 ? tp : fp) += 1;
      ++next;
    }
    const double f1 = f1_from_counts(tp, fp, total_pos - tp);
    if (f1 > best_f1) {
      best_f1 = f1;
      best = t;
    }
  }
  return best;
}

MetricReport evaluate_scores(std::span<const double> val_scores, std::span<const int> val_labels,
                             std::span<const double> test_scores, std::span<const int> test_labels,
                             double fpr_max) {
  MetricReport r;
  r.fpr_max = fpr_max;
  r.threshold = best_threshold(val_scores, val_labels);
  r.auc = roc_auc(test_scores, test_labels);
  const auto p = partial_auc(test_scores, test_labels, fpr_max);
  r.pauc_raw = p.raw;
  r.pauc_standardized = p.standardized;
  const auto f = f1_at_threshold(test_scores, test_labels, r.threshold);
  r.f1 = f.f1;
  r.confusion = f.confusion;
  r.n_pos = f.confusion.tp + f.confusion.fn;
  r.n_neg = f.confusion.fp + f.confusion.tn;
  return r;
}

}  // namespace capsfuse::metrics
