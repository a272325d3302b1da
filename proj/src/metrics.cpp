#include "tokur/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace tokur::metrics {

namespace {

void check_finite(const std::vector<LabeledScore>& items) {
  if (items.empty()) throw_invalid("metrics: empty input");
  for (const auto& it : items)
    if (!std::isfinite(it.confidence)) throw_invalid("metrics: non-finite confidence");
}

}  // namespace

double auroc(const std::vector<LabeledScore>& items) {
  check_finite(items);
  std::int64_t n_pos = 0, n_neg = 0;
  for (const auto& it : items) (it.correct ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw Error(ErrorKind::undefined_metric, "auroc undefined: single-class input");

  // Rank formulation with midranks for ties.
  std::vector<const LabeledScore*> sorted;
  sorted.reserve(items.size());
  for (const auto& it : items) sorted.push_back(&it);
  std::sort(sorted.begin(), sorted.end(),
            [](const LabeledScore* a, const LabeledScore* b) {
              return a->confidence < b->confidence;
            });

  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j < sorted.size() && sorted[j]->confidence == sorted[i]->confidence) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (size_t k = i; k < j; ++k)
      if (sorted[k]->correct) rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(const std::vector<LabeledScore>& items) {
  check_finite(items);
  std::int64_t n_pos = 0;
  for (const auto& it : items)
    if (it.correct) ++n_pos;
  if (n_pos == 0)
    throw Error(ErrorKind::undefined_metric, "auprc undefined: no positive items");

  std::vector<const LabeledScore*> sorted;
  sorted.reserve(items.size());
  for (const auto& it : items) sorted.push_back(&it);
  std::sort(sorted.begin(), sorted.end(),
            [](const LabeledScore* a, const LabeledScore* b) {
              return a->confidence > b->confidence;
            });

  double ap = 0.0;
  std::int64_t tp = 0, admitted = 0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    std::int64_t block_pos = 0;
    while (j < sorted.size() && sorted[j]->confidence == sorted[i]->confidence) {
      if (sorted[j]->correct) ++block_pos;
      ++j;
    }
    tp += block_pos;
    admitted += static_cast<std::int64_t>(j - i);
    if (block_pos > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(admitted);
      const double delta_recall = static_cast<double>(block_pos) / static_cast<double>(n_pos);
      ap += delta_recall * precision;
    }
    i = j;
  }
  return ap;
}

double top_fraction_accuracy(const std::vector<LabeledScore>& items, double fraction) {
  check_finite(items);
  if (fraction <= 0.0 || fraction > 1.0)
    throw_invalid("top_fraction_accuracy: fraction must be in (0, 1]");
  const int n = static_cast<int>(items.size());
  const int take = static_cast<int>(std::ceil(fraction * n));

  std::vector<const LabeledScore*> sorted;
  sorted.reserve(items.size());
  for (const auto& it : items) sorted.push_back(&it);
  std::sort(sorted.begin(), sorted.end(),
            [](const LabeledScore* a, const LabeledScore* b) {
              if (a->confidence != b->confidence) return a->confidence > b->confidence;
              return a->index < b->index;
            });

  int correct = 0;
  for (int i = 0; i < take; ++i)
    if (sorted[i]->correct) ++correct;
  return static_cast<double>(correct) / take;
}

DetectionReport detection_report(const std::vector<LabeledScore>& items, double fraction) {
  DetectionReport r;
  r.n = static_cast<int>(items.size());
  for (const auto& it : items)
    if (it.correct) ++r.n_correct;
  r.fraction = fraction;
  try {
    r.auroc = auroc(items);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::undefined_metric) throw;
  }
  try {
    r.auprc = auprc(items);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::undefined_metric) throw;
  }
  r.top_fraction_accuracy = top_fraction_accuracy(items, fraction);
  return r;
}

}  // namespace tokur::metrics
