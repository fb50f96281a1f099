#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mlcam/network.hpp"
#include "oracles.hpp"

using namespace mlcam;

namespace {

NetworkConfig tiny_config(std::uint64_t seed = 1) {
  NetworkConfig cfg;
  cfg.input_h = 16;
  cfg.input_w = 16;
  cfg.stem_channels = 2;
  cfg.inception_channels = {{{2, 2, 2}, {2, 2, 2}, {2, 2, 2}}};
  cfg.pool_between = {false, false};  // 16 -> 8 after the stem, taps all 8x8
  cfg.seed = seed;
  return cfg;
}

// Parameter count from the config arithmetic alone.
std::size_t closed_form_param_count(const NetworkConfig& cfg) {
  auto conv_params = [](int c_out, int c_in, int k) {
    return static_cast<std::size_t>(c_out) * c_in * k * k + static_cast<std::size_t>(c_out);
  };
  std::size_t total = conv_params(cfg.stem_channels, cfg.input_channels, 3);
  int c_in = cfg.stem_channels;
  for (int b = 0; b < 3; ++b) {
    const auto& ch = cfg.inception_channels[static_cast<std::size_t>(b)];
    total += conv_params(ch[0], c_in, 1) + conv_params(ch[1], c_in, 3) +
             conv_params(ch[2], c_in, 5);
    const int c_out = ch[0] + ch[1] + ch[2];
    total += 2u * static_cast<std::size_t>(c_out);  // cam kernel, no bias
    c_in = c_out;
  }
  return total;
}

}  // namespace

TEST_SUITE("init_network") {
  TEST_CASE("same seed reproduces parameters bit-identically") {
    const Network a = init_network(tiny_config(42));
    const Network b = init_network(tiny_config(42));
    REQUIRE(a.params().size() == b.params().size());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      CHECK(a.params()[i].var.value() == b.params()[i].var.value());
    }
  }

  TEST_CASE("different seeds differ somewhere") {
    const Network a = init_network(tiny_config(1));
    const Network b = init_network(tiny_config(2));
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      if (!(a.params()[i].var.value() == b.params()[i].var.value())) any_diff = true;
    }
    CHECK(any_diff);
  }

  TEST_CASE("parameter count matches the shape arithmetic") {
    for (const NetworkConfig& cfg : {NetworkConfig{}, tiny_config()}) {
      const Network net = init_network(cfg);
      std::size_t total = 0;
      for (const auto& p : net.params()) total += p.var.value().size();
      CHECK(total == closed_form_param_count(cfg));
    }
  }

  TEST_CASE("invalid channel counts are config errors") {
    NetworkConfig cfg = tiny_config();
    cfg.stem_channels = 0;
    CHECK_THROWS_AS(init_network(cfg), ConfigError);
    cfg = tiny_config();
    cfg.inception_channels[1][2] = -1;
    CHECK_THROWS_AS(init_network(cfg), ConfigError);
    cfg = tiny_config();
    cfg.input_h = 8;  // taps would fall below 5x5
    cfg.pool_between = {true, true};
    CHECK_THROWS_AS(init_network(cfg), ConfigError);
  }

  TEST_CASE("clone is deep") {
    const Network a = init_network(tiny_config());
    Network b = a.clone();
    b.params()[0].var.value()[0] += 1.0;
    CHECK(a.params()[0].var.value()[0] != b.params()[0].var.value()[0]);
  }
}

TEST_SUITE("inception_block") {
  TEST_CASE("branch channels concatenate") {
    std::mt19937_64 rng(3);
    const Network net = init_network(NetworkConfig{});
    Var x(oracle::random_tensor({8, 16, 16}, rng));
    const Var out = inception_block(nullptr, x, net.block(0));
    CHECK(out.value().shape() == Shape{12, 16, 16});
  }

  TEST_CASE("zero input gives zero output") {
    const Network net = init_network(NetworkConfig{});
    Var x(Tensor({8, 16, 16}));
    const Var out = inception_block(nullptr, x, net.block(0));
    for (std::size_t i = 0; i < out.value().size(); ++i) CHECK(out.value()[i] == 0.0);
  }

  TEST_CASE("equals the manual three-conv composition") {
    std::mt19937_64 rng(5);
    const Network net = init_network(NetworkConfig{});
    const InceptionParams& p = net.block(0);
    Var x(oracle::random_tensor({8, 16, 16}, rng));
    const Var composed = concat_channels(
        nullptr, {relu(nullptr, conv2d(nullptr, x, p.conv1x1.kernel, p.conv1x1.bias, 1, 0)),
                  relu(nullptr, conv2d(nullptr, x, p.conv3x3.kernel, p.conv3x3.bias, 1, 1)),
                  relu(nullptr, conv2d(nullptr, x, p.conv5x5.kernel, p.conv5x5.bias, 1, 2))});
    CHECK(inception_block(nullptr, x, p).value() == composed.value());
  }

  TEST_CASE("small spatial dims are dimension errors") {
    const Network net = init_network(NetworkConfig{});
    Var x(Tensor({8, 4, 4}));
    CHECK_THROWS_AS(inception_block(nullptr, x, net.block(0)), DimensionError);
  }
}

TEST_SUITE("cam_tap") {
  TEST_CASE("one-hot weight selects a feature plane") {
    std::mt19937_64 rng(7);
    const Tensor features = oracle::random_tensor({4, 5, 5}, rng);
    CamWeights w{{0, 0, 1, 0}, {0, 1, 0, 0}};
    const auto [dfm, nfm] = cam_tap(features, w);
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 5; ++x) {
        CHECK(dfm.at(y, x) == features.at(2, y, x));
        CHECK(nfm.at(y, x) == features.at(1, y, x));
      }
    }
  }

  TEST_CASE("zero weights give zero maps") {
    std::mt19937_64 rng(11);
    const Tensor features = oracle::random_tensor({3, 4, 4}, rng);
    CamWeights w{{0, 0, 0}, {0, 0, 0}};
    const auto [dfm, nfm] = cam_tap(features, w);
    for (std::size_t i = 0; i < dfm.size(); ++i) {
      CHECK(dfm[i] == 0.0);
      CHECK(nfm[i] == 0.0);
    }
  }

  TEST_CASE("random weights match the per-pixel dot-product oracle") {
    std::mt19937_64 rng(13);
    const Tensor features = oracle::random_tensor({6, 4, 4}, rng);
    CamWeights w;
    for (int l = 0; l < 6; ++l) {
      w.diagnostic.push_back(uniform(rng, -1, 1));
      w.nondiagnostic.push_back(uniform(rng, -1, 1));
    }
    const auto [dfm, nfm] = cam_tap(features, w);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        double d = 0, n = 0;
        for (int l = 0; l < 6; ++l) {
          d += w.diagnostic[static_cast<std::size_t>(l)] * features.at(l, y, x);
          n += w.nondiagnostic[static_cast<std::size_t>(l)] * features.at(l, y, x);
        }
        CHECK(dfm.at(y, x) == doctest::Approx(d).epsilon(1e-12));
        CHECK(nfm.at(y, x) == doctest::Approx(n).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("weight length mismatch is a dimension error") {
    CHECK_THROWS_AS(cam_tap(Tensor({3, 4, 4}), CamWeights{{1, 2}, {1, 2}}), DimensionError);
  }

  TEST_CASE("homogeneity: doubling weights doubles the map exactly") {
    std::mt19937_64 rng(17);
    const Tensor features = oracle::random_tensor({4, 5, 5}, rng);
    CamWeights w, w2;
    for (int l = 0; l < 4; ++l) {
      const double v = uniform(rng, -1, 1), u = uniform(rng, -1, 1);
      w.diagnostic.push_back(v);
      w.nondiagnostic.push_back(u);
      w2.diagnostic.push_back(2.0 * v);
      w2.nondiagnostic.push_back(2.0 * u);
    }
    const auto [dfm, nfm] = cam_tap(features, w);
    const auto [dfm2, nfm2] = cam_tap(features, w2);
    for (std::size_t i = 0; i < dfm.size(); ++i) {
      CHECK(dfm2[i] == 2.0 * dfm[i]);
      CHECK(nfm2[i] == 2.0 * nfm[i]);
    }
  }
}

TEST_SUITE("layer_scores") {
  TEST_CASE("symmetric maps give even probabilities") {
    const auto s = layer_scores(Tensor::full({3, 3}, 0.7), Tensor::full({3, 3}, 0.7));
    CHECK(s.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.probs[1] == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("unit dfm against zero nfm") {
    const auto s = layer_scores(Tensor::full({4, 4}, 1.0), Tensor({4, 4}));
    CHECK(s.s_d == doctest::Approx(1.0));
    CHECK(s.s_n == doctest::Approx(0.0));
    const double e = std::exp(1.0);
    CHECK(s.probs[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
  }

  TEST_CASE("probabilities sum to one") {
    std::mt19937_64 rng(19);
    const auto s = layer_scores(oracle::random_tensor({5, 5}, rng),
                                oracle::random_tensor({5, 5}, rng));
    CHECK(s.probs[0] + s.probs[1] == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("GAP linearity: mean of weighted sum equals weighted sum of means") {
    std::mt19937_64 rng(23);
    const Tensor features = oracle::random_tensor({6, 7, 7}, rng);
    CamWeights w;
    for (int l = 0; l < 6; ++l) {
      w.diagnostic.push_back(uniform(rng, -1, 1));
      w.nondiagnostic.push_back(uniform(rng, -1, 1));
    }
    const auto [dfm, nfm] = cam_tap(features, w);
    const auto s = layer_scores(dfm, nfm);
    const auto means = oracle::gap_reference(features);
    double sd = 0, sn = 0;
    for (int l = 0; l < 6; ++l) {
      sd += w.diagnostic[static_cast<std::size_t>(l)] * means[static_cast<std::size_t>(l)];
      sn += w.nondiagnostic[static_cast<std::size_t>(l)] * means[static_cast<std::size_t>(l)];
    }
    CHECK(s.s_d == doctest::Approx(sd).epsilon(1e-10));
    CHECK(s.s_n == doctest::Approx(sn).epsilon(1e-10));
  }
}

TEST_SUITE("forward") {
  TEST_CASE("tap shapes follow the pooling arithmetic and never grow with depth") {
    const NetworkConfig cfg;  // default desk config, 64x64
    const Network net = init_network(cfg);
    std::mt19937_64 rng(29);
    const auto fwd = forward(net, oracle::random_tensor({1, 64, 64}, rng, 0, 1));
    const auto shapes = cfg.tap_shapes();
    CHECK(shapes[0] == std::pair{32, 32});
    CHECK(shapes[1] == std::pair{16, 16});
    CHECK(shapes[2] == std::pair{8, 8});
    for (int j = 0; j < 3; ++j) {
      CHECK(fwd.taps[static_cast<std::size_t>(j)].dfm.dim(0) ==
            shapes[static_cast<std::size_t>(j)].first);
      CHECK(fwd.taps[static_cast<std::size_t>(j)].dfm.dim(1) ==
            shapes[static_cast<std::size_t>(j)].second);
      CHECK(fwd.taps[static_cast<std::size_t>(j)].dfm.shape() ==
            fwd.taps[static_cast<std::size_t>(j)].nfm.shape());
    }
    CHECK(fwd.taps[0].dfm.dim(0) >= fwd.taps[1].dfm.dim(0));
    CHECK(fwd.taps[1].dfm.dim(0) >= fwd.taps[2].dfm.dim(0));
  }

  TEST_CASE("deterministic replay") {
    const Network net = init_network(tiny_config());
    std::mt19937_64 rng(31);
    const Tensor img = oracle::random_tensor({1, 16, 16}, rng, 0, 1);
    const auto a = forward(net, img);
    const auto b = forward(net, img);
    for (int j = 0; j < 3; ++j) {
      CHECK(a.taps[static_cast<std::size_t>(j)].dfm == b.taps[static_cast<std::size_t>(j)].dfm);
      CHECK(a.taps[static_cast<std::size_t>(j)].nfm == b.taps[static_cast<std::size_t>(j)].nfm);
      CHECK(a.taps[static_cast<std::size_t>(j)].s_d == b.taps[static_cast<std::size_t>(j)].s_d);
    }
    CHECK(net.forward_passes() == 2);
  }

  TEST_CASE("image size mismatch is a dimension error") {
    const Network net = init_network(tiny_config());
    CHECK_THROWS_AS(forward(net, Tensor({1, 8, 8})), DimensionError);
  }

  TEST_CASE("tap-3 score path equals an independently composed pipeline") {
    const NetworkConfig cfg;
    const Network net = init_network(cfg);
    std::mt19937_64 rng(37);
    const Tensor img = oracle::random_tensor({1, 64, 64}, rng, 0, 1);
    const auto fwd = forward(net, img);

    Var x(img);
    x = max_pool2d(nullptr, relu(nullptr, conv2d(nullptr, x, net.stem().kernel,
                                                 net.stem().bias, 1, 1)),
                   2, 2);
    x = inception_block(nullptr, x, net.block(0));
    x = max_pool2d(nullptr, x, 2, 2);
    x = inception_block(nullptr, x, net.block(1));
    x = max_pool2d(nullptr, x, 2, 2);
    x = inception_block(nullptr, x, net.block(2));
    const Var cam_out = conv2d(nullptr, x, net.cam_kernel(3), 1, 0);
    const Var scores = global_avg_pool(nullptr, cam_out);
    CHECK(fwd.taps[2].s_d == scores.value()[0]);
    CHECK(fwd.taps[2].s_n == scores.value()[1]);
    const auto probs = softmax({scores.value()[0], scores.value()[1]});
    CHECK(fwd.taps[2].probs[0] == probs[0]);

    // and via the cam_tap/layer_scores route (pooling-linearity rearrangement)
    const auto [dfm, nfm] = cam_tap(x.value(), extract_cam_weights(net, 3));
    const auto ls = layer_scores(dfm, nfm);
    CHECK(ls.s_d == doctest::Approx(fwd.taps[2].s_d).epsilon(1e-10));
    CHECK(ls.s_n == doctest::Approx(fwd.taps[2].s_n).epsilon(1e-10));
  }

  TEST_CASE("swapping cam weight rows swaps maps, scores and probs") {
    const NetworkConfig cfg = tiny_config();
    const Network net = init_network(cfg);
    Network swapped = net.clone();
    for (int tap = 1; tap <= 3; ++tap) {
      Var k_var = swapped.cam_kernel(tap);  // handle shares the node
      Tensor& k = k_var.value();
      REQUIRE(k.dim(0) == 2);
      const int c = k.dim(1);
      for (int l = 0; l < c; ++l) std::swap(k.at(0, l, 0, 0), k.at(1, l, 0, 0));
    }
    std::mt19937_64 rng(41);
    const Tensor img = oracle::random_tensor({1, 16, 16}, rng, 0, 1);
    const auto a = forward(net, img);
    const auto b = forward(swapped, img);
    for (int j = 0; j < 3; ++j) {
      const auto& ta = a.taps[static_cast<std::size_t>(j)];
      const auto& tb = b.taps[static_cast<std::size_t>(j)];
      CHECK(ta.dfm == tb.nfm);
      CHECK(ta.nfm == tb.dfm);
      CHECK(ta.s_d == tb.s_n);
      CHECK(ta.s_n == tb.s_d);
      CHECK(ta.probs[0] == doctest::Approx(tb.probs[1]).epsilon(1e-12));
    }
  }
}

TEST_SUITE("total_loss and classify") {
  TEST_CASE("symmetric scores cost 3 ln 2") {
    Network net = init_network(tiny_config());
    for (auto& p : net.params()) {
      if (p.name.starts_with("cam")) p.var.value().fill(0.0);
    }
    std::mt19937_64 rng(43);
    Graph g;
    const auto fwd = forward(net, oracle::random_tensor({1, 16, 16}, rng, 0, 1), &g);
    const Var loss = total_loss(g, fwd, Label::diagnostic);
    CHECK(loss.value()[0] == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(total_loss_value(fwd, Label::diagnostic) ==
          doctest::Approx(loss.value()[0]).epsilon(1e-12));
  }

  TEST_CASE("gradient of the summed loss equals the sum of per-tap gradients") {
    const Network net = init_network(tiny_config(7));
    std::mt19937_64 rng(47);
    const Tensor img = oracle::random_tensor({1, 16, 16}, rng, 0, 1);

    auto tap_grad = [&](int tap) {
      Network local = net.clone();
      Graph g;
      const auto fwd = forward(local, img, &g);
      const Var l = softmax_cross_entropy(
          &g, fwd.tap_score_vars[static_cast<std::size_t>(tap)], 0);
      g.backward(l);
      std::vector<Tensor> grads;
      for (const auto& p : local.params()) grads.push_back(p.var.grad());
      return grads;
    };
    const auto g0 = tap_grad(0), g1 = tap_grad(1), g2 = tap_grad(2);

    Network local = net.clone();
    Graph g;
    const auto fwd = forward(local, img, &g);
    g.backward(total_loss(g, fwd, Label::diagnostic));
    for (std::size_t pi = 0; pi < local.params().size(); ++pi) {
      const Tensor& total = local.params()[pi].var.grad();
      for (std::size_t e = 0; e < total.size(); ++e) {
        const double split = g0[pi][e] + g1[pi][e] + g2[pi][e];
        CHECK(total[e] == doctest::Approx(split).epsilon(1e-10));
      }
    }
  }

  TEST_CASE("full-network gradients match finite differences") {
    Network net = init_network(tiny_config(11));
    std::mt19937_64 rng(53);
    oracle::randomize_params(net, rng);  // generic point, no exact relu kinks
    const Tensor img = oracle::random_tensor({1, 16, 16}, rng, 0, 1);

    auto loss_fn = [&]() {
      const auto fwd = forward(net, img, nullptr);
      return total_loss_value(fwd, Label::diagnostic);
    };
    Graph g;
    const auto fwd = forward(net, img, &g);
    g.backward(total_loss(g, fwd, Label::diagnostic));
    std::vector<Var> params;
    for (const auto& p : net.params()) params.push_back(p.var);
    const auto rep = oracle::fd_check(loss_fn, params);
    CHECK(rep.checked > 100);
    CHECK(rep.max_rel_err < 1e-4);
    CHECK(rep.skipped_kinks <= rep.checked / 20);
  }

  TEST_CASE("classify averages the tap probabilities") {
    std::array<LayerMaps, 3> taps;
    taps[0].probs = {0.9, 0.1};
    taps[1].probs = {0.8, 0.2};
    taps[2].probs = {0.7, 0.3};
    const auto [label, confidence] = classify(taps);
    CHECK(label == Label::diagnostic);
    CHECK(confidence == doctest::Approx(0.8).epsilon(1e-12));
  }

  TEST_CASE("exact tie resolves to nondiagnostic") {
    std::array<LayerMaps, 3> taps;  // all (0.5, 0.5)
    const auto [label, confidence] = classify(taps);
    CHECK(label == Label::nondiagnostic);
    CHECK(confidence == doctest::Approx(0.5));
  }

  TEST_CASE("one flipped tap can still average to diagnostic") {
    std::array<LayerMaps, 3> taps;
    taps[0].probs = {0.9, 0.1};
    taps[1].probs = {0.4, 0.6};
    taps[2].probs = {0.8, 0.2};
    const auto [label, confidence] = classify(taps);
    CHECK(label == Label::diagnostic);
    CHECK(confidence == doctest::Approx(0.7).epsilon(1e-12));
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save then load round-trips parameters, config and meta") {
    const auto path = std::filesystem::temp_directory_path() / "mlcam_test.ckpt";
    NetworkConfig cfg = tiny_config(99);
    cfg.head = HeadMode::mlgap;
    const Network net = init_network(cfg);
    save_checkpoint(net, path, {{"best_val_loss", 0.12345678901234567}, {"best_iteration", 42.0}});
    const LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(loaded.net.config().head == HeadMode::mlgap);
    CHECK(loaded.net.config().seed == 99);
    CHECK(loaded.net.config().input_h == 16);
    REQUIRE(loaded.net.params().size() == net.params().size());
    for (std::size_t i = 0; i < net.params().size(); ++i) {
      CHECK(loaded.net.params()[i].name == net.params()[i].name);
      CHECK(loaded.net.params()[i].var.value() == net.params()[i].var.value());
    }
    CHECK(loaded.meta.at("best_val_loss") == 0.12345678901234567);
    CHECK(loaded.meta.at("best_iteration") == 42.0);
    std::filesystem::remove(path);
  }

  TEST_CASE("bad magic and truncation are data errors") {
    const auto path = std::filesystem::temp_directory_path() / "mlcam_bad.ckpt";
    {
      std::ofstream os(path, std::ios::binary);
      os << "NOTMLCAM";
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    {
      std::ofstream os(path, std::ios::binary);
      os << "MLCAM1";  // magic only, then EOF
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
  }

  TEST_CASE("loaded network reproduces forward outputs bit-exactly") {
    const auto path = std::filesystem::temp_directory_path() / "mlcam_fwd.ckpt";
    const Network net = init_network(tiny_config(5));
    save_checkpoint(net, path);
    const LoadedCheckpoint loaded = load_checkpoint(path);
    std::mt19937_64 rng(59);
    const Tensor img = oracle::random_tensor({1, 16, 16}, rng, 0, 1);
    const auto a = forward(net, img);
    const auto b = forward(loaded.net, img);
    for (int j = 0; j < 3; ++j) {
      CHECK(a.taps[static_cast<std::size_t>(j)].dfm == b.taps[static_cast<std::size_t>(j)].dfm);
    }
    std::filesystem::remove(path);
  }
}
