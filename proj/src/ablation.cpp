#include "mlcam/ablation.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "mlcam/parallel.hpp"

namespace mlcam {

std::string variant_name(VariantId id) {
  return "M" + std::to_string(static_cast<int>(id));
}

VariantId parse_variant(const std::string& name) {
  for (const VariantId id : all_variants()) {
    if (variant_name(id) == name) return id;
  }
  throw ConfigError("ablation: unknown variant \"" + name + "\"");
}

std::vector<VariantId> all_variants() {
  std::vector<VariantId> v;
  for (int i = 1; i <= 10; ++i) v.push_back(static_cast<VariantId>(i));
  return v;
}

namespace {

NormalizedMap single_tap_inhibited(const std::array<LayerMaps, 3>& taps, int tap_index,
                                   int h, int w) {
  const LayerMaps& tap = taps[static_cast<std::size_t>(tap_index)];
  const NormalizedMap dfm_n =
      normalize_upsampled(tap.dfm, tap.tap_id, MapKind::diagnostic, h, w);
  const NormalizedMap nfm_n =
      normalize_upsampled(tap.nfm, tap.tap_id, MapKind::nondiagnostic, h, w);
  return {lateral_inhibit(dfm_n, nfm_n), tap.tap_id, MapKind::diagnostic};
}

}  // namespace

NormalizedMap variant_map(VariantId id, const std::array<LayerMaps, 3>& taps,
                          int input_h, int input_w) {
  VariantContext ctx;
  ForwardResult fwd;
  fwd.taps = taps;
  ctx.main = &fwd;
  ctx.input_h = input_h;
  ctx.input_w = input_w;
  return variant_map(id, ctx);
}

NormalizedMap variant_map(VariantId id, const VariantContext& ctx) {
  const int h = ctx.input_h, w = ctx.input_w;
  auto need = [&](const ForwardResult* fwd, const char* which) -> const ForwardResult& {
    if (!fwd) {
      throw ConfigError("ablation: variant " + variant_name(id) + " needs the " +
                        which + " network's forward result");
    }
    return *fwd;
  };
  switch (id) {
    case VariantId::M1: {
      const ForwardResult& fwd = need(ctx.mlgap, "mlgap");
      if (fwd.combined_cam.rank() != 3) {
        throw ConfigError("ablation: M1 requires a forward result from an mlgap head");
      }
      const int ch = fwd.combined_cam.dim(1), cw = fwd.combined_cam.dim(2);
      const std::size_t plane = static_cast<std::size_t>(ch) * cw;
      Tensor dfm({ch, cw}, std::vector<double>(fwd.combined_cam.data(),
                                               fwd.combined_cam.data() + plane));
      return normalize_upsampled(dfm, 0, MapKind::diagnostic, h, w);
    }
    case VariantId::M2: {
      const ForwardResult& fwd = need(ctx.main, "main");
      return fuse_fdfm(fwd.taps, h, w);
    }
    case VariantId::M3: {
      const ForwardResult& fwd = need(ctx.main, "main");
      std::array<Tensor, 3> primed;
      for (int j = 0; j < 3; ++j) {
        const LayerMaps& tap = fwd.taps[static_cast<std::size_t>(j)];
        primed[static_cast<std::size_t>(j)] =
            normalize_upsampled(tap.dfm, tap.tap_id, MapKind::diagnostic, h, w).values;
      }
      return normalize_map(collateral_integrate(primed), 0, MapKind::diagnostic);
    }
    case VariantId::M4:
    case VariantId::M5:
    case VariantId::M6: {
      const ForwardResult& fwd = need(ctx.main, "main");
      const int j = static_cast<int>(id) - 4;
      return single_tap_inhibited(fwd.taps, j, h, w);
    }
    case VariantId::M7:
    case VariantId::M8:
    case VariantId::M9: {
      const ForwardResult& fwd = need(ctx.main, "main");
      const int j = static_cast<int>(id) - 7;
      const LayerMaps& tap = fwd.taps[static_cast<std::size_t>(j)];
      return normalize_upsampled(tap.dfm, tap.tap_id, MapKind::diagnostic, h, w);
    }
    case VariantId::M10: {
      const ForwardResult& fwd = need(ctx.deep, "deep-only");
      const LayerMaps& tap = fwd.taps[2];
      return normalize_upsampled(tap.dfm, tap.tap_id, MapKind::diagnostic, h, w);
    }
  }
  throw ConfigError("ablation: unknown variant id");
}

const AblationCell& AblationReport::cell(VariantId id, ThresholdMode mode,
                                         const std::string& subset) const {
  for (const AblationCell& c : cells) {
    if (c.variant == id && c.mode == mode && c.subset == subset) return c;
  }
  throw ConfigError("ablation: no cell for " + variant_name(id) + "/" +
                    threshold_mode_name(mode) + "/" + subset);
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os << "variant,mode,subset,n_images,mean_acc,mean_IU,fw_IU\n";
  os << std::setprecision(6) << std::fixed;
  for (const AblationCell& c : cells) {
    os << variant_name(c.variant) << ',' << threshold_mode_name(c.mode) << ',' << c.subset << ','
       << c.n_images << ',' << c.scores.mean_acc << ',' << c.scores.mean_iu << ','
       << c.scores.fw_iu << '\n';
  }
  return os.str();
}

std::string AblationReport::to_grid() const {
  std::ostringstream os;
  const int label_w = 10, set_w = 16, col_w = 7;
  os << std::left << std::setw(label_w) << "" << std::setw(set_w) << "set";
  for (const VariantId v : variants) os << std::right << std::setw(col_w) << variant_name(v);
  os << '\n';
  const char* metric_names[3] = {"mean_acc", "mean_IU", "fw_IU"};
  for (int m = 0; m < 3; ++m) {
    for (const std::string& subset : subsets) {
      for (const ThresholdMode mode : modes) {
        const std::string row_set =
            subset + "-" + (mode == ThresholdMode::intermediate ? "I"
                            : mode == ThresholdMode::restrictive ? "R"
                                                                 : "C");
        os << std::left << std::setw(label_w) << metric_names[m] << std::setw(set_w)
           << row_set;
        for (const VariantId v : variants) {
          const AblationCell& c = cell(v, mode, subset);
          const double value = (m == 0)   ? c.scores.mean_acc
                               : (m == 1) ? c.scores.mean_iu
                                          : c.scores.fw_iu;
          os << std::right << std::setw(col_w) << std::setprecision(2) << std::fixed
             << value;
        }
        os << '\n';
      }
    }
  }
  return os.str();
}

AblationReport run_ablation(const std::vector<AblationSubset>& subsets,
                            const AblationNets& nets,
                            const std::vector<VariantId>& variants,
                            const std::vector<ThresholdMode>& modes, double custom_t) {
  if (variants.empty() || modes.empty() || subsets.empty()) {
    throw ConfigError("ablation: variants, modes and subsets must be non-empty");
  }
  const bool want_main = std::any_of(variants.begin(), variants.end(), [](VariantId v) {
    return v != VariantId::M1 && v != VariantId::M10;
  });
  const bool want_mlgap = std::count(variants.begin(), variants.end(), VariantId::M1) > 0;
  const bool want_deep = std::count(variants.begin(), variants.end(), VariantId::M10) > 0;
  if (want_main && !nets.main) throw ConfigError("ablation: main network missing");
  if (want_mlgap && !nets.mlgap) throw ConfigError("ablation: mlgap network missing");
  if (want_deep && !nets.deep) throw ConfigError("ablation: deep-only network missing");

  std::string missing;
  for (const AblationSubset& subset : subsets) {
    for (const SegSample& s : subset.samples) {
      if (!s.gt_mask) missing += (missing.empty() ? "" : ", ") + s.sample_id;
    }
  }
  if (!missing.empty()) {
    throw DataError("ablation: samples without ground-truth masks: " + missing);
  }

  AblationReport report;
  report.variants = variants;
  report.modes = modes;

  for (const AblationSubset& subset : subsets) {
    report.subsets.push_back(subset.name);
    const std::size_t n = subset.samples.size();
    // [sample][variant][mode] tallies, reduced in index order.
    std::vector<std::vector<std::vector<ConfusionCounts>>> tallies(
        n, std::vector<std::vector<ConfusionCounts>>(
               variants.size(), std::vector<ConfusionCounts>(modes.size())));
    parallel_for(n, [&](std::size_t i) {
      const SegSample& sample = subset.samples[i];
      const int h = sample.image.dim(1), w = sample.image.dim(2);
      ForwardResult fwd_main, fwd_mlgap, fwd_deep;
      VariantContext ctx;
      ctx.input_h = h;
      ctx.input_w = w;
      if (want_main) {
        fwd_main = forward(*nets.main, sample.image);
        ctx.main = &fwd_main;
      }
      if (want_mlgap) {
        fwd_mlgap = forward(*nets.mlgap, sample.image);
        ctx.mlgap = &fwd_mlgap;
      }
      if (want_deep) {
        fwd_deep = forward(*nets.deep, sample.image);
        ctx.deep = &fwd_deep;
      }
      for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        const NormalizedMap map = variant_map(variants[vi], ctx);
        for (std::size_t mi = 0; mi < modes.size(); ++mi) {
          const BinaryMask mask = threshold_mask(map, modes[mi], custom_t);
          tallies[i][vi][mi] = confusion(mask, *sample.gt_mask);
        }
      }
    });
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        ConfusionCounts total;
        for (std::size_t i = 0; i < n; ++i) total.accumulate(tallies[i][vi][mi]);
        AblationCell cell{variants[vi], modes[mi], subset.name, static_cast<int>(n),
                          metrics(total)};
        report.cells.push_back(cell);
      }
    }
  }
  return report;
}

}  // namespace mlcam
