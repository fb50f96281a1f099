#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mlcam/ops.hpp"

namespace mlcam {

// Class index doubles as the score-vector index: scores are [s_d, s_n].
enum class Label : int { diagnostic = 0, nondiagnostic = 1 };

// Loss topology. mlcam trains one softmax head per tap (the default);
// mlgap sums the three upsampled CAMs before a single GAP head; deep_only
// trains the deepest head alone.
enum class HeadMode : std::uint8_t { mlcam = 0, mlgap = 1, deep_only = 2 };

struct NetworkConfig {
  int input_h = 64;
  int input_w = 64;
  int input_channels = 1;
  int stem_channels = 8;
  // Output channels of the 1x1/3x3/5x5 branches for each of the 3 blocks.
  std::array<std::array<int, 3>, 3> inception_channels = {
      {{4, 4, 4}, {6, 6, 6}, {8, 8, 8}}};
  // 2x2/2 max-pool between blocks 1-2 and 2-3. The stem always pools once.
  std::array<bool, 2> pool_between = {true, true};
  HeadMode head = HeadMode::mlcam;
  std::uint64_t seed = 1;

  void validate() const;

  int block_input_channels(int block) const;  // 0..2
  int block_output_channels(int block) const;
  // (H, W) of each tap's feature maps under the pooling arithmetic.
  std::array<std::pair<int, int>, 3> tap_shapes() const;
};

struct ConvParams {
  Var kernel;  // [C_out, C_in, kH, kW]
  Var bias;    // [C_out]
};

struct InceptionParams {
  ConvParams conv1x1, conv3x3, conv5x5;
};

/// Per-tap CAM pair with its pooled class scores.
struct LayerMaps {
  int tap_id = 0;  // 1..3
  Tensor dfm;      // [H^z, W^z]
  Tensor nfm;
  double s_d = 0.0;
  double s_n = 0.0;
  std::array<double, 2> probs = {0.5, 0.5};  // (p_D, p_ND)
};

struct LayerScores {
  double s_d = 0.0;
  double s_n = 0.0;
  std::array<double, 2> probs = {0.5, 0.5};
};

/// Backbone + per-tap CAM weights. Parameters are owned Vars; copies are
/// deep (clone) only, so snapshots never alias the live model.
class Network {
 public:
  struct NamedParam {
    std::string name;
    Var var;
  };

  Network(Network&&) = default;
  Network& operator=(Network&&) = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const NetworkConfig& config() const { return cfg_; }
  const std::vector<NamedParam>& params() const { return registry_; }
  std::vector<NamedParam>& params() { return registry_; }

  const ConvParams& stem() const { return stem_; }
  const InceptionParams& block(int i) const { return blocks_[static_cast<std::size_t>(i)]; }
  const Var& cam_kernel(int tap) const { return cam_[static_cast<std::size_t>(tap - 1)]; }

  Network clone() const;

  std::uint64_t forward_passes() const { return forward_counter_->load(); }
  void count_forward() const { forward_counter_->fetch_add(1); }

  friend Network init_network(const NetworkConfig& config);
  friend Network make_skeleton(const NetworkConfig& config);

 private:
  explicit Network(const NetworkConfig& cfg);

  NetworkConfig cfg_;
  ConvParams stem_;
  std::array<InceptionParams, 3> blocks_;
  std::array<Var, 3> cam_;  // [2, C_tap, 1, 1], no bias (pure weighted sum)
  std::vector<NamedParam> registry_;
  std::shared_ptr<std::atomic<std::uint64_t>> forward_counter_;
};

// Fan-in-scaled uniform init, deterministic per config.seed.
Network init_network(const NetworkConfig& config);

// Zero-initialized parameter skeleton (checkpoint loading, cloning).
Network make_skeleton(const NetworkConfig& config);

// Three parallel convolutions (pads 0/1/2), each relu'd, channel-concatenated.
Var inception_block(Graph* g, const Var& x, const InceptionParams& params);

// dfm(x,y) = sum_l w_d[l] f_l(x,y); nfm likewise. Pure weighted sums.
struct CamWeights {
  std::vector<double> diagnostic;
  std::vector<double> nondiagnostic;
};
std::pair<Tensor, Tensor> cam_tap(const Tensor& features, const CamWeights& weights);
CamWeights extract_cam_weights(const Network& net, int tap);

// Spatial means of the two maps plus softmax over [s_d, s_n].
LayerScores layer_scores(const Tensor& dfm, const Tensor& nfm);

struct ForwardResult {
  HeadMode head = HeadMode::mlcam;
  std::array<LayerMaps, 3> taps;
  // Graph handles, defined only when a Graph was supplied to forward().
  std::array<Var, 3> tap_score_vars;  // each [2]
  // mlgap extras: the summed 2-channel CAM at tap-1 resolution.
  Tensor combined_cam;
  std::array<double, 2> mlgap_scores = {0.0, 0.0};
  std::array<double, 2> mlgap_probs = {0.5, 0.5};
  Var mlgap_score_var;
};

ForwardResult forward(const Network& net, const Tensor& image, Graph* g = nullptr);

// Sum of the head losses for the network's mode, recorded on the graph.
Var total_loss(Graph& g, const ForwardResult& fwd, Label label);
// Same value from detached scores; no graph required.
double total_loss_value(const ForwardResult& fwd, Label label);

// Averages the three per-tap probability pairs and takes the argmax;
// an exact 0.5 tie resolves to nondiagnostic.
std::pair<Label, double> classify(const std::array<LayerMaps, 3>& taps);
// Head-aware variant: mlgap/deep_only use their own probability pair.
std::pair<Label, double> classify(const ForwardResult& fwd);

// Checkpoint file: "MLCAM1" magic, the config (incl. RNG seed), a manifest
// of named arrays, then little-endian float64 payloads.
void save_checkpoint(const Network& net, const std::filesystem::path& path,
                     const std::map<std::string, double>& meta = {});

struct LoadedCheckpoint {
  Network net;
  std::map<std::string, double> meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mlcam
