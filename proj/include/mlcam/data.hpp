#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mlcam/metrics.hpp"
#include "mlcam/network.hpp"
#include "mlcam/tensor.hpp"

namespace mlcam {

/// One grayscale sample with its image-level label; the pixel mask is
/// carried for evaluation only and never enters training.
struct SegSample {
  std::string sample_id;
  std::string group_id;  // synthetic "patient"
  Label label = Label::nondiagnostic;
  Tensor image;  // [1,H,W], values in [0,1]
  std::optional<BinaryMask> gt_mask;
};

enum class FeatureScale { intermediate, restrictive };

struct SynthConfig {
  int image_h = 64;
  int image_w = 64;
  int n_groups = 20;
  int images_per_group = 30;
  FeatureScale feature_scale = FeatureScale::intermediate;
  double texture_noise = 0.08;      // background texture amplitude
  double distractor_density = 1.0;  // scales streak count and speckle
  std::uint64_t seed = 1;

  void validate() const;
  // Blob semi-axis range as a fraction of image width.
  std::pair<double, double> radius_fraction() const;
};

// Synthesizes a balanced dataset: diagnostic images carry 1-3 bright
// textured elliptical blobs (recorded in gt_mask) over noise and
// distractors; nondiagnostic images carry noise and distractors only.
// Deterministic per seed; groups assigned round-robin.
std::vector<SegSample> generate(const SynthConfig& cfg);

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct DatasetSplit {
  std::vector<SegSample> train, val, test;
};

// Whole groups go to exactly one split; no group_id ever appears twice.
DatasetSplit split_by_group(const std::vector<SegSample>& samples,
                            const SplitFractions& fractions, std::uint64_t seed);

// Writes images/, masks/ and manifest.csv
// (header: sample_id,path,label,group_id,mask_path; paths relative).
void export_dataset(const std::vector<SegSample>& samples,
                    const std::filesystem::path& dir);

// Loads a manifest-described dataset: images decoded to grayscale in
// [0,1] and resized (bilinear) to target size; masks resized
// nearest-neighbor. Per-row problems are aggregated into one DataError.
std::vector<SegSample> load_images(const std::filesystem::path& dir,
                                   const std::filesystem::path& manifest,
                                   int target_h, int target_w);
std::vector<SegSample> load_images(const std::filesystem::path& dir, int target_h,
                                   int target_w);

// General-purpose samplers for ingestion (both directions, any size).
Tensor resize_bilinear(const Tensor& map, int target_h, int target_w);
BinaryMask resize_nearest(const BinaryMask& mask, int target_h, int target_w);

}  // namespace mlcam
