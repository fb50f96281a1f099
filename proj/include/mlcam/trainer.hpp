#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mlcam/data.hpp"
#include "mlcam/network.hpp"

namespace mlcam {

struct TrainConfig {
  double base_lr = 0.001;
  double momentum = 0.9;
  double gamma = 0.9;     // step-decay factor
  int step_size = 500;    // iterations per decay step
  int batch_size = 15;
  int max_iterations = 1000;
  int val_every = 100;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossRecord {
  int iteration;
  double lr;
  double train_loss;  // mean batch loss since the previous record
  double val_loss;
};

struct TrainState {
  int iteration = 0;
  double best_val_loss = 0.0;
  int best_iteration = -1;
  std::vector<LossRecord> history;
  bool aborted = false;
  std::string abort_reason;
};

// base_lr * gamma^floor(iteration / step_size).
double lr_at(int iteration, const TrainConfig& cfg);

// Classical momentum: v <- momentum*v - lr*g; p <- p + v. Velocities are
// parallel to net.params(). Throws NumericError on a non-finite gradient,
// naming the parameter.
void sgd_step(Network& net, std::vector<Tensor>& velocity, double lr, double momentum);

// Mean total loss over a set; forward passes only.
double dataset_loss(const Network& net, const std::vector<SegSample>& samples);

struct TrainResult {
  Network best;       // min-validation-loss snapshot
  TrainState state;
};

// Shuffled mini-batch SGD (no augmentation; the last incomplete batch is
// dropped). Validation runs every val_every iterations and at the final
// one; the min-val-loss snapshot wins, earlier iteration on ties. Fully
// deterministic for a fixed seed. Divergence aborts with the last good
// snapshot and sets state.aborted.
TrainResult train(const Network& net, const std::vector<SegSample>& train_set,
                  const std::vector<SegSample>& val_set, const TrainConfig& cfg);

// loss_history as CSV: iteration,lr,train_loss,val_loss.
void write_loss_history_csv(const std::vector<LossRecord>& history,
                            const std::filesystem::path& path);

}  // namespace mlcam
