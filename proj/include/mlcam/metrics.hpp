#pragma once

#include <cstdint>
#include <vector>

#include "mlcam/error.hpp"

namespace mlcam {

/// Row-major 0/1 mask.
struct BinaryMask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(int h_, int w_)
      : h(h_), w(w_), values(static_cast<std::size_t>(h_) * static_cast<std::size_t>(w_), 0) {}

  std::size_t size() const { return values.size(); }
  std::uint8_t at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + x];
  }
  std::uint8_t& at(int y, int x) {
    return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + x];
  }
  bool any() const {
    for (const auto v : values)
      if (v) return true;
    return false;
  }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.h == b.h && a.w == b.w && a.values == b.values;
  }
};

/// Pixel tallies over classes {background=0, diagnostic=1}:
/// n[i][j] = pixels of true class i predicted as class j.
struct ConfusionCounts {
  std::uint64_t n[2][2] = {{0, 0}, {0, 0}};

  std::uint64_t true_total(int i) const { return n[i][0] + n[i][1]; }
  std::uint64_t pred_total(int j) const { return n[0][j] + n[1][j]; }
  std::uint64_t total() const { return true_total(0) + true_total(1); }

  void accumulate(const ConfusionCounts& other) {
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) n[i][j] += other.n[i][j];
  }
};

struct SegScores {
  double mean_acc = 0.0;
  double mean_iu = 0.0;
  double fw_iu = 0.0;
};

// Exact per-pixel tally; masks must share shape.
ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

// Standard semantic-segmentation metrics. Classes absent from the ground
// truth are excluded from the class means, so a degenerate all-one-class
// perfect match scores 1 rather than NaN.
SegScores metrics(const ConfusionCounts& counts);

// Pixel = 1 iff strictly more than half of the annotators marked it;
// exact ties go to background.
BinaryMask majority_vote(const std::vector<BinaryMask>& masks);

}  // namespace mlcam
