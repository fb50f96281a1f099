#include "mlcam/eval.hpp"

#include "mlcam/parallel.hpp"

namespace mlcam {

EvalResult evaluate_dataset(const Network& net, const std::vector<SegSample>& samples,
                            ThresholdMode mode, double custom_t) {
  threshold_value(mode, custom_t);  // validate up front
  EvalResult result;
  result.samples.resize(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const SegSample& s = samples[i];
    SampleEval& out = result.samples[i];
    out.sample_id = s.sample_id;
    out.label = s.label;
    const ForwardResult fwd = forward(net, s.image);  // the only forward pass
    const auto [predicted, confidence] = classify(fwd);
    out.predicted = predicted;
    out.confidence = confidence;
    out.fusion = fuse(fwd.taps, s.image.dim(1), s.image.dim(2), mode, custom_t);
    if (s.gt_mask) {
      out.counts = confusion(out.fusion.mask, *s.gt_mask);
      out.scores = metrics(*out.counts);
    }
  });

  int correct = 0;
  ConfusionCounts pooled;
  for (const SampleEval& s : result.samples) {
    if (s.predicted == s.label) ++correct;
    if (s.counts) {
      pooled.accumulate(*s.counts);
      ++result.masked_count;
    }
  }
  result.accuracy = samples.empty()
                        ? 0.0
                        : static_cast<double>(correct) / static_cast<double>(samples.size());
  if (result.masked_count > 0) result.aggregate = metrics(pooled);
  return result;
}

}  // namespace mlcam
