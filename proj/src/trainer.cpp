#include "mlcam/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "mlcam/io_util.hpp"
#include "mlcam/parallel.hpp"
#include "mlcam/random.hpp"

namespace mlcam {

void TrainConfig::validate() const {
  if (base_lr <= 0.0) throw ConfigError("train config: base_lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("train config: momentum must be in [0,1)");
  }
  if (gamma <= 0.0 || gamma > 1.0) {
    throw ConfigError("train config: gamma must be in (0,1]");
  }
  if (step_size < 1) throw ConfigError("train config: step_size must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (max_iterations < 1) throw ConfigError("train config: max_iterations must be >= 1");
  if (val_every < 1) throw ConfigError("train config: val_every must be >= 1");
}

double lr_at(int iteration, const TrainConfig& cfg) {
  if (iteration < 0) throw ContractError("lr_at: negative iteration");
  return cfg.base_lr * std::pow(cfg.gamma, iteration / cfg.step_size);
}

void sgd_step(Network& net, std::vector<Tensor>& velocity, double lr, double momentum) {
  auto& params = net.params();
  if (velocity.size() != params.size()) {
    velocity.clear();
    for (const auto& p : params) velocity.emplace_back(p.var.value().shape());
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& g = params[pi].var.grad();
    if (!g.all_finite()) {
      throw NumericError("sgd_step: non-finite gradient in parameter " + params[pi].name);
    }
    Tensor& v = velocity[pi];
    Tensor& p = params[pi].var.value();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] - lr * g[i];
      p[i] += v[i];
    }
  }
}

double dataset_loss(const Network& net, const std::vector<SegSample>& samples) {
  std::vector<double> losses(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const ForwardResult fwd = forward(net, samples[i].image, nullptr);
    losses[i] = total_loss_value(fwd, samples[i].label);
  });
  double sum = 0.0;
  for (const double l : losses) sum += l;  // fixed index order
  return sum / static_cast<double>(samples.size());
}

namespace {

// Per-image gradients on clones, reduced in index order; thread count
// never affects the result.
double batch_gradients(Network& net, const std::vector<SegSample>& train_set,
                       const std::vector<std::size_t>& batch) {
  const std::size_t b = batch.size();
  std::vector<std::vector<Tensor>> grads(b);
  std::vector<double> losses(b);
  parallel_for(b, [&](std::size_t i) {
    Network local = net.clone();
    Graph graph;
    const ForwardResult fwd = forward(local, train_set[batch[i]].image, &graph);
    const Var loss = total_loss(graph, fwd, train_set[batch[i]].label);
    losses[i] = loss.value()[0];
    graph.backward(loss);
    grads[i].reserve(local.params().size());
    for (const auto& p : local.params()) grads[i].push_back(p.var.grad());
  });

  auto& params = net.params();
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& g = params[pi].var.grad();
    g.fill(0.0);
    for (std::size_t i = 0; i < b; ++i) {
      const Tensor& gi = grads[i][pi];
      for (std::size_t e = 0; e < g.size(); ++e) g[e] += gi[e];
    }
    for (std::size_t e = 0; e < g.size(); ++e) g[e] *= inv_b;
  }
  double mean = 0.0;
  for (const double l : losses) mean += l;
  return mean * inv_b;
}

}  // namespace

TrainResult train(const Network& net, const std::vector<SegSample>& train_set,
                  const std::vector<SegSample>& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) {
    throw ConfigError("train: train and validation sets must be non-empty");
  }
  if (static_cast<int>(train_set.size()) < cfg.batch_size) {
    throw ConfigError("train: batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds training set size " + std::to_string(train_set.size()));
  }

  Network model = net.clone();
  TrainResult result{model.clone(), {}};
  TrainState& state = result.state;
  state.best_val_loss = std::numeric_limits<double>::infinity();

  std::vector<Tensor> velocity;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batches_per_epoch = train_set.size() / static_cast<std::size_t>(cfg.batch_size);

  double window_loss = 0.0;
  int window_count = 0;
  int iteration = 0;
  std::size_t batch_in_epoch = batches_per_epoch;  // forces an initial shuffle

  while (iteration < cfg.max_iterations) {
    if (batch_in_epoch == batches_per_epoch) {
      deterministic_shuffle(order, rng);  // drop-last epoch boundary
      batch_in_epoch = 0;
    }
    std::vector<std::size_t> batch(
        order.begin() + static_cast<std::ptrdiff_t>(batch_in_epoch * cfg.batch_size),
        order.begin() + static_cast<std::ptrdiff_t>((batch_in_epoch + 1) * cfg.batch_size));
    ++batch_in_epoch;

    const double lr = lr_at(iteration, cfg);
    double batch_loss = 0.0;
    try {
      batch_loss = batch_gradients(model, train_set, batch);
      if (!std::isfinite(batch_loss)) {
        throw NumericError("train: non-finite batch loss at iteration " +
                           std::to_string(iteration));
      }
      sgd_step(model, velocity, lr, cfg.momentum);
    } catch (const NumericError& e) {
      state.aborted = true;
      state.abort_reason = e.what();
      break;
    }
    ++iteration;
    state.iteration = iteration;
    window_loss += batch_loss;
    ++window_count;

    if (iteration % cfg.val_every == 0 || iteration == cfg.max_iterations) {
      const double val_loss = dataset_loss(model, val_set);
      const double train_loss = window_loss / window_count;
      window_loss = 0.0;
      window_count = 0;
      state.history.push_back({iteration, lr, train_loss, val_loss});
      if (std::isfinite(val_loss) && val_loss < state.best_val_loss) {
        state.best_val_loss = val_loss;
        state.best_iteration = iteration;
        result.best = model.clone();
      }
    }
  }

  if (state.best_iteration < 0) {
    // Aborted before any validation point: fall back to the initial snapshot.
    state.best_val_loss = dataset_loss(result.best, val_set);
    state.best_iteration = 0;
  }
  return result;
}

void write_loss_history_csv(const std::vector<LossRecord>& history,
                            const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("loss history: cannot open " + path.string());
  os << "iteration,lr,train_loss,val_loss\n";
  for (const LossRecord& r : history) {
    os << r.iteration << ',' << format_double(r.lr) << ',' << format_double(r.train_loss)
       << ',' << format_double(r.val_loss) << '\n';
  }
  if (!os) throw DataError("loss history: write failed");
}

}  // namespace mlcam
