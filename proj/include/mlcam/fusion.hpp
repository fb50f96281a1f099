#pragma once

#include <array>
#include <filesystem>

#include "mlcam/metrics.hpp"
#include "mlcam/network.hpp"

namespace mlcam {

enum class MapKind { diagnostic, nondiagnostic };

/// Min-max normalized [H,W] map; every value in [0,1]. source_tap 1..3
/// identifies the originating CAM tap, 0 marks a fused map.
struct NormalizedMap {
  Tensor values;
  int source_tap = 0;
  MapKind kind = MapKind::diagnostic;
};

enum class ThresholdMode { intermediate, restrictive, custom };

inline constexpr double kIntermediateThreshold = 0.03;
inline constexpr double kRestrictiveThreshold = 0.2;

double threshold_value(ThresholdMode mode, double custom_t);
std::string threshold_mode_name(ThresholdMode mode);

struct FusionResult {
  NormalizedMap fdfm;                     // at input resolution
  std::array<Tensor, 3> inhibited_maps;   // per-tap LI outputs
  BinaryMask mask;                        // fdfm >= threshold_used
  double threshold_used = 0.0;
};

// (v - min) / (max - min); a constant map normalizes to all zeros.
NormalizedMap normalize_map(const Tensor& raw, int source_tap = 0,
                            MapKind kind = MapKind::diagnostic);

// dfm' * (1 - nfm'): suppresses locations where both maps fire.
Tensor lateral_inhibit(const NormalizedMap& dfm, const NormalizedMap& nfm);

// Sum over unordered tap pairs of elementwise products; raw (unnormalized).
Tensor collateral_integrate(const std::array<Tensor, 3>& inhibited);

// mask = fdfm >= t with t = 0.03 (intermediate), 0.2 (restrictive), or
// custom_t in [0,1].
BinaryMask threshold_mask(const NormalizedMap& fdfm, ThresholdMode mode,
                          double custom_t = -1.0);

// The "primed" map: normalize(upsample(raw)).
NormalizedMap normalize_upsampled(const Tensor& raw_map, int source_tap, MapKind kind,
                                  int input_h, int input_w);

// Fusion pipeline without the thresholding step.
NormalizedMap fuse_fdfm(const std::array<LayerMaps, 3>& taps, int input_h, int input_w,
                        std::array<Tensor, 3>* inhibited_out = nullptr);

// Full pipeline per tap: upsample dfm/nfm to the input size, normalize,
// laterally inhibit; then collaterally integrate, normalize, threshold.
FusionResult fuse(const std::array<LayerMaps, 3>& taps, int input_h, int input_w,
                  ThresholdMode mode, double custom_t = -1.0);

// Heatmap (gray8, round(255*FDFM)), mask (1-bit) and a JSON sidecar
// recording the threshold and tap shapes.
void export_fusion(const FusionResult& fr,
                   const std::array<std::pair<int, int>, 3>& tap_shapes,
                   const std::filesystem::path& heatmap_path,
                   const std::filesystem::path& mask_path,
                   const std::filesystem::path& sidecar_path);

}  // namespace mlcam
