#pragma once

/**
 * Detection metrics for scoring how well a confidence signal separates
 * correct from incorrect responses. Orientation throughout: the positive
 * class is "correct", and confidences are expected to already point the
 * right way (negate uncertainties before calling).
 */

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tokur/errors.hpp"

namespace tokur::metrics {

struct LabeledScore {
  std::string response_id;
  double confidence = 0.0;  // higher = more confident the response is correct
  bool correct = false;
  int index = 0;  // stable input index, used for documented tie-breaks
};

struct DetectionReport {
  std::optional<double> auroc;  // null when undefined (single-class input)
  std::optional<double> auprc;  // null when undefined (no positives)
  double top_fraction_accuracy = 0.0;
  int n = 0;
  int n_correct = 0;
  double fraction = 0.5;
  std::string orientation = "correct=positive; confidence=as-supplied";
};

// Mann-Whitney AUROC: P(confidence of a random correct > random incorrect),
// ties counted 1/2. Throws undefined_metric unless both classes are present.
double auroc(const std::vector<LabeledScore>& items);

// Average precision: thresholds sweep from the highest confidence down, tie
// blocks are admitted whole with the block's precision. Throws
// undefined_metric when there are no positives.
double auprc(const std::vector<LabeledScore>& items);

// Mean correctness of the top ceil(fraction*N) items by confidence; ties at
// the boundary go to the lower stable index.
double top_fraction_accuracy(const std::vector<LabeledScore>& items, double fraction = 0.5);

DetectionReport detection_report(const std::vector<LabeledScore>& items, double fraction = 0.5);

}  // namespace tokur::metrics
