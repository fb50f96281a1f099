#pragma once

#include <string>
#include <vector>

#include "mlcam/data.hpp"
#include "mlcam/fusion.hpp"

namespace mlcam {

// The ten map-generation variants. M2 is the full model (LI + CI); M1 and
// M10 come from alternately-headed networks trained on the same data.
enum class VariantId : int {
  M1 = 1,   // mlgap baseline: summed CAMs, single GAP head
  M2 = 2,   // full fusion (LI + CI)
  M3 = 3,   // CI over primed dfm maps, no LI
  M4 = 4,   // LI of tap 1 alone
  M5 = 5,   // LI of tap 2 alone
  M6 = 6,   // LI of tap 3 alone
  M7 = 7,   // primed dfm of tap 1
  M8 = 8,   // primed dfm of tap 2
  M9 = 9,   // primed dfm of tap 3
  M10 = 10  // classic CAM: deepest tap of a deep-only-trained network
};

std::string variant_name(VariantId id);
VariantId parse_variant(const std::string& name);
std::vector<VariantId> all_variants();

// Forward results per network; only the ones a requested variant needs
// must be present.
struct VariantContext {
  const ForwardResult* main = nullptr;   // M2..M9
  const ForwardResult* mlgap = nullptr;  // M1
  const ForwardResult* deep = nullptr;   // M10
  int input_h = 0;
  int input_w = 0;
};

// Variant map at input resolution; values in [0,1].
NormalizedMap variant_map(VariantId id, const VariantContext& ctx);
// Convenience for the single-network variants M2..M9.
NormalizedMap variant_map(VariantId id, const std::array<LayerMaps, 3>& taps,
                          int input_h, int input_w);

struct AblationNets {
  const Network* main = nullptr;
  const Network* mlgap = nullptr;
  const Network* deep = nullptr;
};

struct AblationSubset {
  std::string name;
  std::vector<SegSample> samples;
};

struct AblationCell {
  VariantId variant;
  ThresholdMode mode;
  std::string subset;
  int n_images = 0;
  SegScores scores;
};

struct AblationReport {
  std::vector<VariantId> variants;
  std::vector<ThresholdMode> modes;
  std::vector<std::string> subsets;
  std::vector<AblationCell> cells;  // complete grid, fixed order

  const AblationCell& cell(VariantId id, ThresholdMode mode,
                           const std::string& subset) const;
  std::string to_csv() const;
  std::string to_grid() const;  // aligned text, columns = variants
};

// Evaluates every requested (variant, mode, subset) cell; scores aggregate
// the pixel confusion over all images of the subset. Every sample needs a
// ground-truth mask.
AblationReport run_ablation(const std::vector<AblationSubset>& subsets,
                            const AblationNets& nets,
                            const std::vector<VariantId>& variants,
                            const std::vector<ThresholdMode>& modes,
                            double custom_t = -1.0);

}  // namespace mlcam
