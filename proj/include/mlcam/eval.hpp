#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mlcam/data.hpp"
#include "mlcam/fusion.hpp"

namespace mlcam {

struct SampleEval {
  std::string sample_id;
  Label label = Label::nondiagnostic;
  Label predicted = Label::nondiagnostic;
  double confidence = 0.0;
  FusionResult fusion;
  std::optional<ConfusionCounts> counts;  // present when the sample has a mask
  std::optional<SegScores> scores;
};

struct EvalResult {
  std::vector<SampleEval> samples;
  double accuracy = 0.0;                // classification over all samples
  int masked_count = 0;
  std::optional<SegScores> aggregate;   // confusion pooled over masked samples
};

// One forward pass per image: classification via the network head, masks
// via the fusion pipeline, metrics against ground truth where present.
EvalResult evaluate_dataset(const Network& net, const std::vector<SegSample>& samples,
                            ThresholdMode mode, double custom_t = -1.0);

}  // namespace mlcam
