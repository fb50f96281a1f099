#include "mlcam/metrics.hpp"

#include <string>

namespace mlcam {

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw DimensionError("confusion: mask shapes differ, pred " +
                         std::to_string(pred.h) + "x" + std::to_string(pred.w) +
                         " vs gt " + std::to_string(gt.h) + "x" + std::to_string(gt.w));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    c.n[gt.values[i] ? 1 : 0][pred.values[i] ? 1 : 0] += 1;
  }
  return c;
}

SegScores metrics(const ConfusionCounts& counts) {
  if (counts.total() == 0) {
    throw DataError("metrics: empty mask pair");
  }
  SegScores s;
  int present = 0;
  double acc_sum = 0.0, iu_sum = 0.0, fw_sum = 0.0;
  for (int i = 0; i < 2; ++i) {
    const std::uint64_t t_i = counts.true_total(i);
    if (t_i == 0) continue;  // absent classes are excluded from the means
    ++present;
    const double diag = static_cast<double>(counts.n[i][i]);
    acc_sum += diag / static_cast<double>(t_i);
    const std::uint64_t denom = t_i + counts.pred_total(i) - counts.n[i][i];
    const double iu = diag / static_cast<double>(denom);
    iu_sum += iu;
    fw_sum += static_cast<double>(t_i) * iu;
  }
  s.mean_acc = acc_sum / present;
  s.mean_iu = iu_sum / present;
  s.fw_iu = fw_sum / static_cast<double>(counts.total());
  return s;
}

BinaryMask majority_vote(const std::vector<BinaryMask>& masks) {
  if (masks.empty()) throw DataError("majority_vote: no annotator masks");
  const BinaryMask& first = masks.front();
  for (const BinaryMask& m : masks) {
    if (m.h != first.h || m.w != first.w) {
      throw DimensionError("majority_vote: annotator mask shapes differ");
    }
  }
  const std::size_t k = masks.size();
  BinaryMask out(first.h, first.w);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t votes = 0;
    for (const BinaryMask& m : masks) votes += m.values[i] ? 1 : 0;
    out.values[i] = (2 * votes > k) ? 1 : 0;
  }
  return out;
}

}  // namespace mlcam
