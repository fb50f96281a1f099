// mlcam command line: dataset synthesis, training, evaluation, ablation
// benchmarking and heatmap rendering, wired end to end.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mlcam/ablation.hpp"
#include "mlcam/data.hpp"
#include "mlcam/eval.hpp"
#include "mlcam/image_io.hpp"
#include "mlcam/io_util.hpp"
#include "mlcam/trainer.hpp"

namespace fs = std::filesystem;
using namespace mlcam;

namespace {

struct ModeOptions {
  std::string mode = "intermediate";
  double threshold = -1.0;  // >= 0 switches to a custom threshold

  ThresholdMode resolve() const {
    if (threshold >= 0.0) return ThresholdMode::custom;
    if (mode == "intermediate") return ThresholdMode::intermediate;
    if (mode == "restrictive") return ThresholdMode::restrictive;
    throw ConfigError("unknown mode \"" + mode + "\"");
  }
};

void add_mode_options(CLI::App* cmd, ModeOptions& opts) {
  cmd->add_option("--mode", opts.mode, "Threshold mode: intermediate or restrictive")
      ->check(CLI::IsMember({"intermediate", "restrictive"}));
  cmd->add_option("--threshold", opts.threshold,
                  "Custom threshold in [0,1]; overrides --mode");
}

struct NetOptions {
  int input_size = 64;
  int stem_channels = 8;
  std::vector<int> block1 = {4, 4, 4};
  std::vector<int> block2 = {6, 6, 6};
  std::vector<int> block3 = {8, 8, 8};
  std::uint64_t net_seed = 1;
  std::string head = "mlcam";

  NetworkConfig resolve() const {
    NetworkConfig cfg;
    cfg.input_h = cfg.input_w = input_size;
    cfg.stem_channels = stem_channels;
    auto copy3 = [](const std::vector<int>& v, std::array<int, 3>& dst) {
      if (v.size() != 3) throw ConfigError("branch channel lists need 3 entries");
      std::copy(v.begin(), v.end(), dst.begin());
    };
    copy3(block1, cfg.inception_channels[0]);
    copy3(block2, cfg.inception_channels[1]);
    copy3(block3, cfg.inception_channels[2]);
    cfg.seed = net_seed;
    if (head == "mlcam") {
      cfg.head = HeadMode::mlcam;
    } else if (head == "mlgap") {
      cfg.head = HeadMode::mlgap;
    } else if (head == "deep") {
      cfg.head = HeadMode::deep_only;
    } else {
      throw ConfigError("unknown head \"" + head + "\"");
    }
    return cfg;
  }
};

void add_net_options(CLI::App* cmd, NetOptions& opts) {
  cmd->add_option("--input-size", opts.input_size, "Network input size (square)");
  cmd->add_option("--stem-channels", opts.stem_channels, "Stem conv output channels");
  cmd->add_option("--block1-channels", opts.block1, "Block 1 branch channels (1x1,3x3,5x5)")
      ->delimiter(',')
      ->expected(3);
  cmd->add_option("--block2-channels", opts.block2, "Block 2 branch channels")
      ->delimiter(',')
      ->expected(3);
  cmd->add_option("--block3-channels", opts.block3, "Block 3 branch channels")
      ->delimiter(',')
      ->expected(3);
  cmd->add_option("--net-seed", opts.net_seed, "Parameter init seed");
  cmd->add_option("--head", opts.head, "Head topology: mlcam, mlgap or deep")
      ->check(CLI::IsMember({"mlcam", "mlgap", "deep"}));
}

struct TrainOptions {
  TrainConfig cfg;
  double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
  std::uint64_t split_seed = 1;
};

void add_split_options(CLI::App* cmd, TrainOptions& opts) {
  cmd->add_option("--train-frac", opts.train_frac, "Training group fraction");
  cmd->add_option("--val-frac", opts.val_frac, "Validation group fraction");
  cmd->add_option("--test-frac", opts.test_frac, "Test group fraction");
  cmd->add_option("--split-seed", opts.split_seed, "Group split seed");
}

void add_train_options(CLI::App* cmd, TrainOptions& opts) {
  cmd->add_option("--base-lr", opts.cfg.base_lr, "Initial learning rate");
  cmd->add_option("--momentum", opts.cfg.momentum, "SGD momentum");
  cmd->add_option("--gamma", opts.cfg.gamma, "Step decay factor");
  cmd->add_option("--step-size", opts.cfg.step_size, "Iterations per decay step");
  cmd->add_option("--batch-size", opts.cfg.batch_size, "Mini-batch size");
  cmd->add_option("--max-iterations", opts.cfg.max_iterations, "Training iterations");
  cmd->add_option("--val-every", opts.cfg.val_every, "Validation cadence (iterations)");
  cmd->add_option("--seed", opts.cfg.seed, "Shuffle seed");
  add_split_options(cmd, opts);
}

void validate_fractions(const TrainOptions& t) {
  if (std::abs(t.train_frac + t.val_frac + t.test_frac - 1.0) > 1e-9) {
    throw ConfigError("--train-frac, --val-frac and --test-frac must sum to 1");
  }
}

std::string label_name(Label l) { return l == Label::diagnostic ? "D" : "ND"; }

void write_eval_outputs(const EvalResult& er, const Network& net, ThresholdMode mode,
                        const fs::path& out) {
  fs::create_directories(out / "heatmaps");
  fs::create_directories(out / "masks");
  fs::create_directories(out / "meta");

  std::ofstream preds(out / "predictions.csv");
  preds << "sample_id,label,predicted,confidence\n";
  std::ofstream metrics_csv(out / "metrics.csv");
  metrics_csv << "sample_id,variant,mode,mean_acc,mean_IU,fw_IU\n";
  const std::string mode_str = threshold_mode_name(mode);
  for (const SampleEval& s : er.samples) {
    preds << s.sample_id << ',' << label_name(s.label) << ',' << label_name(s.predicted)
          << ',' << format_double(s.confidence) << '\n';
    if (s.scores) {
      metrics_csv << s.sample_id << ",M2," << mode_str << ','
                  << format_double(s.scores->mean_acc) << ','
                  << format_double(s.scores->mean_iu) << ','
                  << format_double(s.scores->fw_iu) << '\n';
    }
    export_fusion(s.fusion, net.config().tap_shapes(),
                  out / "heatmaps" / (s.sample_id + ".png"),
                  out / "masks" / (s.sample_id + ".png"),
                  out / "meta" / (s.sample_id + ".json"));
  }

  std::ofstream summary(out / "summary.csv");
  summary << "n_samples,n_masked,accuracy,mean_acc,mean_IU,fw_IU\n";
  summary << er.samples.size() << ',' << er.masked_count << ','
          << format_double(er.accuracy);
  if (er.aggregate) {
    summary << ',' << format_double(er.aggregate->mean_acc) << ','
            << format_double(er.aggregate->mean_iu) << ','
            << format_double(er.aggregate->fw_iu) << '\n';
  } else {
    summary << ",,,\n";
  }
}

std::vector<SegSample> select_split(std::vector<SegSample> samples,
                                    const std::string& which, const TrainOptions& t) {
  if (which == "all") return samples;
  DatasetSplit split =
      split_by_group(samples, {t.train_frac, t.val_frac, t.test_frac}, t.split_seed);
  if (which == "train") return split.train;
  if (which == "val") return split.val;
  if (which == "test") return split.test;
  throw ConfigError("unknown split \"" + which + "\"");
}

int cmd_synth(const SynthConfig& cfg, const fs::path& out) {
  const auto samples = generate(cfg);
  export_dataset(samples, out);
  std::cout << "wrote " << samples.size() << " samples to " << out.string() << "\n";
  return 0;
}

int cmd_train(const fs::path& data, const fs::path& out, const NetOptions& net_opts,
              const TrainOptions& train_opts) {
  validate_fractions(train_opts);
  const NetworkConfig net_cfg = net_opts.resolve();
  net_cfg.validate();
  const auto samples = load_images(data, net_cfg.input_h, net_cfg.input_w);
  const DatasetSplit split = split_by_group(
      samples, {train_opts.train_frac, train_opts.val_frac, train_opts.test_frac},
      train_opts.split_seed);
  std::cout << "loaded " << samples.size() << " samples (train " << split.train.size()
            << ", val " << split.val.size() << ", test " << split.test.size() << ")\n";

  const Network net = init_network(net_cfg);
  const TrainResult result = train(net, split.train, split.val, train_opts.cfg);

  fs::create_directories(out);
  save_checkpoint(result.best, out / "best.ckpt",
                  {{"best_val_loss", result.state.best_val_loss},
                   {"best_iteration", static_cast<double>(result.state.best_iteration)}});
  write_loss_history_csv(result.state.history, out / "losses.csv");
  std::cout << "best val loss " << format_double(result.state.best_val_loss)
            << " at iteration " << result.state.best_iteration << "\n";
  if (result.state.aborted) {
    std::cerr << "error: training aborted: " << result.state.abort_reason
              << " (last good checkpoint saved)\n";
    return 1;
  }
  return 0;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& data, const fs::path& out,
             const ModeOptions& mode_opts, const std::string& split,
             const TrainOptions& split_opts) {
  if (split != "all") validate_fractions(split_opts);
  const LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const NetworkConfig& cfg = ckpt.net.config();
  const auto samples =
      select_split(load_images(data, cfg.input_h, cfg.input_w), split, split_opts);
  if (samples.empty()) throw DataError("eval: no samples selected");
  const ThresholdMode mode = mode_opts.resolve();
  const EvalResult er = evaluate_dataset(ckpt.net, samples, mode, mode_opts.threshold);
  fs::create_directories(out);
  write_eval_outputs(er, ckpt.net, mode, out);
  std::cout << "evaluated " << er.samples.size() << " samples: accuracy "
            << format_double(er.accuracy);
  if (er.aggregate) {
    std::cout << ", mean_acc " << format_double(er.aggregate->mean_acc) << ", mean_IU "
              << format_double(er.aggregate->mean_iu) << ", fw_IU "
              << format_double(er.aggregate->fw_iu) << " over " << er.masked_count
              << " masked samples";
  }
  std::cout << "\n";
  return 0;
}

int cmd_ablate(const fs::path& data, const fs::path& out,
               const std::vector<std::string>& variant_names,
               const std::vector<std::string>& subset_names, const fs::path& ckpt_path,
               const NetOptions& net_opts, const TrainOptions& train_opts,
               const ModeOptions& mode_opts, bool both_modes) {
  validate_fractions(train_opts);
  std::vector<VariantId> variants;
  for (const std::string& name : variant_names) variants.push_back(parse_variant(name));

  NetworkConfig net_cfg = net_opts.resolve();
  if (!ckpt_path.empty()) {
    net_cfg = load_checkpoint(ckpt_path).net.config();  // sizes must agree
  }
  const auto samples = load_images(data, net_cfg.input_h, net_cfg.input_w);
  const DatasetSplit split = split_by_group(
      samples, {train_opts.train_frac, train_opts.val_frac, train_opts.test_frac},
      train_opts.split_seed);

  const bool want_main = std::any_of(variants.begin(), variants.end(), [](VariantId v) {
    return v != VariantId::M1 && v != VariantId::M10;
  });
  const bool want_mlgap = std::count(variants.begin(), variants.end(), VariantId::M1) > 0;
  const bool want_deep = std::count(variants.begin(), variants.end(), VariantId::M10) > 0;

  // Alternate heads are separate training runs on the same data and seeds.
  auto train_head = [&](HeadMode head) {
    NetworkConfig cfg = net_cfg;
    cfg.head = head;
    cfg.validate();
    const Network net = init_network(cfg);
    TrainResult r = train(net, split.train, split.val, train_opts.cfg);
    if (r.state.aborted) {
      throw NumericError("ablate: training aborted: " + r.state.abort_reason);
    }
    return std::move(r.best);
  };

  std::optional<Network> main_net, mlgap_net, deep_net;
  if (want_main) {
    if (!ckpt_path.empty()) {
      main_net = load_checkpoint(ckpt_path).net;
      std::cout << "loaded main network from " << ckpt_path.string() << "\n";
    } else {
      std::cout << "training main (mlcam) network...\n";
      main_net = train_head(HeadMode::mlcam);
    }
  }
  if (want_mlgap) {
    std::cout << "training mlgap network for M1...\n";
    mlgap_net = train_head(HeadMode::mlgap);
  }
  if (want_deep) {
    std::cout << "training deep-only network for M10...\n";
    deep_net = train_head(HeadMode::deep_only);
  }

  std::vector<AblationSubset> subsets;
  for (const std::string& name : subset_names) {
    if (name == "train") {
      subsets.push_back({"train", split.train});
    } else if (name == "val") {
      subsets.push_back({"val", split.val});
    } else if (name == "test") {
      subsets.push_back({"test", split.test});
    } else if (name == "all") {
      subsets.push_back({"all", samples});
    } else {
      throw ConfigError("unknown subset \"" + name + "\"");
    }
  }

  std::vector<ThresholdMode> modes;
  if (both_modes) {
    modes = {ThresholdMode::intermediate, ThresholdMode::restrictive};
  } else {
    modes = {mode_opts.resolve()};
  }

  const AblationNets nets{main_net ? &*main_net : nullptr,
                          mlgap_net ? &*mlgap_net : nullptr,
                          deep_net ? &*deep_net : nullptr};
  const AblationReport report =
      run_ablation(subsets, nets, variants, modes, mode_opts.threshold);

  fs::create_directories(out);
  {
    std::ofstream csv(out / "report.csv");
    csv << report.to_csv();
    std::ofstream grid(out / "report.txt");
    grid << report.to_grid();
  }
  std::cout << report.to_grid();
  return 0;
}

int cmd_render(const fs::path& ckpt_path, const fs::path& image_path, const fs::path& out,
               const ModeOptions& mode_opts) {
  const LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const NetworkConfig& cfg = ckpt.net.config();

  const ImageU8 raw = to_gray(read_png(image_path));
  Tensor plane({raw.h, raw.w});
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = raw.pixels[i] / 255.0;
  Tensor net_input = plane;
  if (raw.h != cfg.input_h || raw.w != cfg.input_w) {
    net_input = resize_bilinear(plane, cfg.input_h, cfg.input_w);
  }
  const Tensor image({1, cfg.input_h, cfg.input_w},
                     std::vector<double>(net_input.data(),
                                         net_input.data() + net_input.size()));
  const ForwardResult fwd = forward(ckpt.net, image);

  // Fuse at the original resolution when it is at least the tap size.
  const auto shapes = cfg.tap_shapes();
  int render_h = raw.h, render_w = raw.w;
  for (const auto& [th, tw] : shapes) {
    render_h = std::max(render_h, th);
    render_w = std::max(render_w, tw);
  }
  const ThresholdMode mode = mode_opts.resolve();
  const FusionResult fr = fuse(fwd.taps, render_h, render_w, mode, mode_opts.threshold);

  fs::create_directories(out);
  export_fusion(fr, shapes, out / "fdfm.png", out / "mask.png", out / "meta.json");

  // Overlay: red channel lifted by the heatmap over the grayscale image.
  Tensor base = plane;
  if (render_h != raw.h || render_w != raw.w) {
    base = resize_bilinear(plane, render_h, render_w);
  }
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(render_h) * render_w * 3);
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double g = base[i];
    const double heat = fr.fdfm.values[i];
    const double r = std::min(1.0, g * (1.0 - 0.6 * heat) + 0.8 * heat);
    const double gb = g * (1.0 - 0.6 * heat);
    rgb[3 * i] = static_cast<std::uint8_t>(std::lround(255.0 * r));
    rgb[3 * i + 1] = static_cast<std::uint8_t>(std::lround(255.0 * gb));
    rgb[3 * i + 2] = static_cast<std::uint8_t>(std::lround(255.0 * gb));
  }
  write_png_rgb8(out / "overlay.png", render_h, render_w, rgb);
  std::cout << "wrote fdfm.png, mask.png, overlay.png to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly-supervised feature localization: multi-tap CAM network with "
               "lateral inhibition and collateral integration"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Plain-text key = value configuration file");
  app.allow_config_extras(false);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  SynthConfig synth_cfg;
  std::string features = "intermediate";
  fs::path synth_out;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--seed", synth_cfg.seed, "Generation seed");
  synth->add_option("--features", features, "Blob scale: intermediate or restrictive")
      ->check(CLI::IsMember({"intermediate", "restrictive"}));
  synth->add_option("--size", synth_cfg.image_h, "Image size (square)");
  synth->add_option("--groups", synth_cfg.n_groups, "Number of groups (patients)");
  synth->add_option("--per-group", synth_cfg.images_per_group, "Images per group");
  synth->add_option("--noise", synth_cfg.texture_noise, "Background texture amplitude");
  synth->add_option("--distractors", synth_cfg.distractor_density, "Distractor density");

  auto* train_cmd = app.add_subcommand("train", "Train a network on a dataset");
  fs::path train_data, train_out;
  NetOptions train_net;
  TrainOptions train_opts;
  train_cmd->add_option("--data", train_data, "Dataset directory (manifest.csv)")
      ->required();
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  add_net_options(train_cmd, train_net);
  add_train_options(train_cmd, train_opts);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  fs::path eval_ckpt, eval_data, eval_out;
  ModeOptions eval_mode;
  std::string eval_split = "all";
  TrainOptions eval_split_opts;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  eval_cmd->add_option("--out", eval_out, "Output directory")->required();
  add_mode_options(eval_cmd, eval_mode);
  eval_cmd->add_option("--split", eval_split, "Evaluate all, train, val or test")
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  add_split_options(eval_cmd, eval_split_opts);

  auto* ablate_cmd = app.add_subcommand("ablate", "Benchmark the M1..M10 map variants");
  fs::path ablate_data, ablate_out, ablate_ckpt;
  std::vector<std::string> ablate_variants = {"M1", "M2", "M3", "M4", "M5",
                                              "M6", "M7", "M8", "M9", "M10"};
  std::vector<std::string> ablate_subsets = {"test"};
  NetOptions ablate_net;
  TrainOptions ablate_train;
  ModeOptions ablate_mode;
  bool ablate_both_modes = false;
  ablate_cmd->add_option("--data", ablate_data, "Dataset directory")->required();
  ablate_cmd->add_option("--out", ablate_out, "Output directory")->required();
  ablate_cmd->add_option("--variants", ablate_variants, "Comma-separated variant list")
      ->delimiter(',');
  ablate_cmd
      ->add_option("--subsets", ablate_subsets, "Subsets to report: train,val,test,all")
      ->delimiter(',');
  ablate_cmd->add_option("--checkpoint", ablate_ckpt,
                         "Reuse this checkpoint as the main network");
  ablate_cmd->add_flag("--both-modes", ablate_both_modes,
                       "Report intermediate and restrictive thresholds");
  add_net_options(ablate_cmd, ablate_net);
  add_train_options(ablate_cmd, ablate_train);
  add_mode_options(ablate_cmd, ablate_mode);

  auto* render_cmd = app.add_subcommand("render", "Render heatmap, mask and overlay");
  fs::path render_ckpt, render_image, render_out;
  ModeOptions render_mode;
  render_cmd->add_option("--checkpoint", render_ckpt, "Checkpoint file")->required();
  render_cmd->add_option("--image", render_image, "Input PNG image")->required();
  render_cmd->add_option("--out", render_out, "Output directory")->required();
  add_mode_options(render_cmd, render_mode);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      synth_cfg.image_w = synth_cfg.image_h;
      synth_cfg.feature_scale = (features == "restrictive") ? FeatureScale::restrictive
                                                            : FeatureScale::intermediate;
      return cmd_synth(synth_cfg, synth_out);
    }
    if (train_cmd->parsed()) return cmd_train(train_data, train_out, train_net, train_opts);
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_ckpt, eval_data, eval_out, eval_mode, eval_split,
                      eval_split_opts);
    }
    if (ablate_cmd->parsed()) {
      return cmd_ablate(ablate_data, ablate_out, ablate_variants, ablate_subsets,
                        ablate_ckpt, ablate_net, ablate_train, ablate_mode,
                        ablate_both_modes);
    }
    if (render_cmd->parsed()) {
      return cmd_render(render_ckpt, render_image, render_out, render_mode);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
