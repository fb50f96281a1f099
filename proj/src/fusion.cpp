#include "mlcam/fusion.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mlcam/image_io.hpp"

namespace mlcam {

std::string threshold_mode_name(ThresholdMode mode) {
  switch (mode) {
    case ThresholdMode::intermediate:
      return "intermediate";
    case ThresholdMode::restrictive:
      return "restrictive";
    default:
      return "custom";
  }
}

double threshold_value(ThresholdMode mode, double custom_t) {
  switch (mode) {
    case ThresholdMode::intermediate:
      return kIntermediateThreshold;
    case ThresholdMode::restrictive:
      return kRestrictiveThreshold;
    case ThresholdMode::custom:
      if (custom_t < 0.0 || custom_t > 1.0) {
        throw ConfigError("threshold: custom value must be in [0,1], got " +
                          std::to_string(custom_t));
      }
      return custom_t;
  }
  throw ConfigError("threshold: unknown mode");
}

NormalizedMap normalize_map(const Tensor& raw, int source_tap, MapKind kind) {
  if (raw.rank() != 2) throw DimensionError("normalize_map: map must be [H,W]");
  if (!raw.all_finite()) throw NumericError("normalize_map: non-finite input");
  double lo = raw[0], hi = raw[0];
  for (std::size_t i = 0; i < raw.size(); ++i) {
    lo = std::min(lo, raw[i]);
    hi = std::max(hi, raw[i]);
  }
  NormalizedMap out{Tensor(raw.shape()), source_tap, kind};
  if (hi > lo) {
    const double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < raw.size(); ++i) out.values[i] = (raw[i] - lo) * inv;
  }
  // constant maps stay all-zero: a featureless map claims no region
  return out;
}

Tensor lateral_inhibit(const NormalizedMap& dfm, const NormalizedMap& nfm) {
  if (dfm.values.shape() != nfm.values.shape()) {
    throw DimensionError("lateral_inhibit: map shapes differ");
  }
  if (dfm.source_tap != nfm.source_tap) {
    throw ContractError("lateral_inhibit: maps come from different taps");
  }
  Tensor out(dfm.values.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = dfm.values[i] * (1.0 - nfm.values[i]);
  }
  return out;
}

Tensor collateral_integrate(const std::array<Tensor, 3>& inhibited) {
  for (int j = 1; j < 3; ++j) {
    if (inhibited[static_cast<std::size_t>(j)].shape() != inhibited[0].shape()) {
      throw DimensionError("collateral_integrate: map shapes differ");
    }
  }
  Tensor out(inhibited[0].shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = inhibited[0][i], b = inhibited[1][i], c = inhibited[2][i];
    out[i] = a * b + a * c + b * c;
  }
  return out;
}

BinaryMask threshold_mask(const NormalizedMap& fdfm, ThresholdMode mode,
                          double custom_t) {
  const double t = threshold_value(mode, custom_t);
  const Tensor& v = fdfm.values;
  BinaryMask mask(v.dim(0), v.dim(1));
  for (std::size_t i = 0; i < v.size(); ++i) mask.values[i] = v[i] >= t ? 1 : 0;
  return mask;
}

NormalizedMap normalize_upsampled(const Tensor& raw_map, int source_tap, MapKind kind,
                                  int input_h, int input_w) {
  return normalize_map(upsample_bilinear(raw_map, input_h, input_w), source_tap, kind);
}

NormalizedMap fuse_fdfm(const std::array<LayerMaps, 3>& taps, int input_h, int input_w,
                        std::array<Tensor, 3>* inhibited_out) {
  std::array<Tensor, 3> inhibited;
  for (int j = 0; j < 3; ++j) {
    const LayerMaps& tap = taps[static_cast<std::size_t>(j)];
    const NormalizedMap dfm_n =
        normalize_upsampled(tap.dfm, tap.tap_id, MapKind::diagnostic, input_h, input_w);
    const NormalizedMap nfm_n =
        normalize_upsampled(tap.nfm, tap.tap_id, MapKind::nondiagnostic, input_h, input_w);
    inhibited[static_cast<std::size_t>(j)] = lateral_inhibit(dfm_n, nfm_n);
  }
  NormalizedMap fdfm =
      normalize_map(collateral_integrate(inhibited), 0, MapKind::diagnostic);
  if (inhibited_out) *inhibited_out = std::move(inhibited);
  return fdfm;
}

FusionResult fuse(const std::array<LayerMaps, 3>& taps, int input_h, int input_w,
                  ThresholdMode mode, double custom_t) {
  FusionResult fr;
  fr.fdfm = fuse_fdfm(taps, input_h, input_w, &fr.inhibited_maps);
  fr.threshold_used = threshold_value(mode, custom_t);
  fr.mask = threshold_mask(fr.fdfm, mode, custom_t);
  return fr;
}

void export_fusion(const FusionResult& fr,
                   const std::array<std::pair<int, int>, 3>& tap_shapes,
                   const std::filesystem::path& heatmap_path,
                   const std::filesystem::path& mask_path,
                   const std::filesystem::path& sidecar_path) {
  const Tensor& v = fr.fdfm.values;
  const int h = v.dim(0), w = v.dim(1);
  std::vector<std::uint8_t> pixels(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v[i]));
  }
  write_png_gray8(heatmap_path, h, w, pixels);
  write_png_gray1(mask_path, fr.mask.h, fr.mask.w, fr.mask.values);

  nlohmann::json meta;
  meta["threshold"] = fr.threshold_used;
  auto shapes = nlohmann::json::array();
  for (const auto& [th, tw] : tap_shapes) shapes.push_back({th, tw});
  meta["tap_shapes"] = shapes;
  std::ofstream os(sidecar_path);
  if (!os) throw DataError("export: cannot write sidecar " + sidecar_path.string());
  os << meta.dump(2) << '\n';
}

}  // namespace mlcam
