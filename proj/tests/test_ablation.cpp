#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mlcam/ablation.hpp"
#include "oracles.hpp"

using namespace mlcam;

namespace {

std::array<LayerMaps, 3> random_taps(std::mt19937_64& rng) {
  std::array<LayerMaps, 3> taps;
  const int sizes[3] = {8, 4, 2};
  for (int j = 0; j < 3; ++j) {
    auto& t = taps[static_cast<std::size_t>(j)];
    t.tap_id = j + 1;
    t.dfm = oracle::random_tensor({sizes[j], sizes[j]}, rng, -1.0, 2.0);
    t.nfm = oracle::random_tensor({sizes[j], sizes[j]}, rng, -1.0, 2.0);
  }
  return taps;
}

}  // namespace

TEST_SUITE("variant ids") {
  TEST_CASE("names parse back to ids") {
    CHECK(all_variants().size() == 10);
    for (const VariantId id : all_variants()) {
      CHECK(parse_variant(variant_name(id)) == id);
    }
    CHECK_THROWS_AS(parse_variant("M11"), ConfigError);
    CHECK_THROWS_AS(parse_variant("bogus"), ConfigError);
  }
}

TEST_SUITE("variant_map definitional identities") {
  TEST_CASE("M2 equals the fusion pipeline") {
    std::mt19937_64 rng(3);
    const auto taps = random_taps(rng);
    const NormalizedMap m2 = variant_map(VariantId::M2, taps, 16, 16);
    const FusionResult fr = fuse(taps, 16, 16, ThresholdMode::intermediate);
    CHECK(m2.values == fr.fdfm.values);
  }

  TEST_CASE("M3 equals integration of primed dfm maps") {
    std::mt19937_64 rng(5);
    const auto taps = random_taps(rng);
    const NormalizedMap m3 = variant_map(VariantId::M3, taps, 16, 16);
    std::array<Tensor, 3> primed;
    for (int j = 0; j < 3; ++j) {
      primed[static_cast<std::size_t>(j)] =
          normalize_map(upsample_bilinear(taps[static_cast<std::size_t>(j)].dfm, 16, 16))
              .values;
    }
    const auto expected = normalize_map(collateral_integrate(primed));
    CHECK(m3.values == expected.values);
  }

  TEST_CASE("M4..M6 equal lateral inhibition of single taps") {
    std::mt19937_64 rng(7);
    const auto taps = random_taps(rng);
    for (int j = 0; j < 3; ++j) {
      const auto id = static_cast<VariantId>(4 + j);
      const NormalizedMap m = variant_map(id, taps, 16, 16);
      const auto d = normalize_upsampled(taps[static_cast<std::size_t>(j)].dfm, j + 1,
                                         MapKind::diagnostic, 16, 16);
      const auto n = normalize_upsampled(taps[static_cast<std::size_t>(j)].nfm, j + 1,
                                         MapKind::nondiagnostic, 16, 16);
      CHECK(m.values == lateral_inhibit(d, n));
      CHECK(m.source_tap == j + 1);
    }
  }

  TEST_CASE("M7..M9 equal primed single-tap dfm maps") {
    std::mt19937_64 rng(11);
    const auto taps = random_taps(rng);
    for (int j = 0; j < 3; ++j) {
      const auto id = static_cast<VariantId>(7 + j);
      const NormalizedMap m = variant_map(id, taps, 16, 16);
      const auto expected = normalize_map(
          upsample_bilinear(taps[static_cast<std::size_t>(j)].dfm, 16, 16));
      CHECK(m.values == expected.values);
    }
  }

  TEST_CASE("M2 equals M3 when every nfm is constant") {
    std::mt19937_64 rng(13);
    auto taps = random_taps(rng);
    for (auto& t : taps) t.nfm = Tensor::full(t.nfm.shape(), 0.2);
    const NormalizedMap m2 = variant_map(VariantId::M2, taps, 16, 16);
    const NormalizedMap m3 = variant_map(VariantId::M3, taps, 16, 16);
    for (std::size_t i = 0; i < m2.values.size(); ++i) {
      CHECK(m2.values[i] == doctest::Approx(m3.values[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("all variant outputs are valid normalized maps") {
    std::mt19937_64 rng(17);
    NetworkConfig cfg;
    cfg.input_h = cfg.input_w = 32;
    cfg.stem_channels = 2;
    cfg.inception_channels = {{{2, 2, 2}, {2, 2, 2}, {2, 2, 2}}};
    cfg.pool_between = {true, false};  // taps 16/8/8; both pools would leave 4x4
    NetworkConfig mlgap_cfg = cfg;
    mlgap_cfg.head = HeadMode::mlgap;
    NetworkConfig deep_cfg = cfg;
    deep_cfg.head = HeadMode::deep_only;
    const Network main_net = init_network(cfg);
    const Network mlgap_net = init_network(mlgap_cfg);
    const Network deep_net = init_network(deep_cfg);
    const Tensor img = oracle::random_tensor({1, 32, 32}, rng, 0, 1);
    const ForwardResult fm = forward(main_net, img);
    const ForwardResult fg = forward(mlgap_net, img);
    const ForwardResult fd = forward(deep_net, img);
    VariantContext ctx{&fm, &fg, &fd, 32, 32};
    for (const VariantId id : all_variants()) {
      const NormalizedMap m = variant_map(id, ctx);
      CHECK(m.values.shape() == Shape{32, 32});
      for (std::size_t i = 0; i < m.values.size(); ++i) {
        CHECK(m.values[i] >= 0.0);
        CHECK(m.values[i] <= 1.0);
      }
    }
  }

  TEST_CASE("M1 and M10 without their networks are config errors") {
    std::mt19937_64 rng(19);
    const auto taps = random_taps(rng);
    CHECK_THROWS_AS(variant_map(VariantId::M1, taps, 16, 16), ConfigError);
    CHECK_THROWS_AS(variant_map(VariantId::M10, taps, 16, 16), ConfigError);
  }
}

TEST_SUITE("run_ablation") {
  namespace {
  NetworkConfig tiny(HeadMode head = HeadMode::mlcam) {
    NetworkConfig cfg;
    cfg.input_h = cfg.input_w = 32;
    cfg.stem_channels = 2;
    cfg.inception_channels = {{{2, 2, 2}, {2, 2, 2}, {2, 2, 2}}};
    cfg.pool_between = {true, false};
    cfg.head = head;
    return cfg;
  }

  std::vector<SegSample> tiny_eval_set(int n) {
    SynthConfig s;
    s.image_h = s.image_w = 32;
    s.n_groups = 2;
    s.images_per_group = n;
    s.seed = 5;
    return generate(s);
  }
  }  // namespace

  TEST_CASE("the report grid is complete with no empty cells") {
    const Network main_net = init_network(tiny());
    const Network mlgap_net = init_network(tiny(HeadMode::mlgap));
    const Network deep_net = init_network(tiny(HeadMode::deep_only));
    const auto samples = tiny_eval_set(3);
    const AblationReport report = run_ablation(
        {{"eval", samples}}, {&main_net, &mlgap_net, &deep_net}, all_variants(),
        {ThresholdMode::intermediate, ThresholdMode::restrictive});
    CHECK(report.cells.size() == 10 * 2 * 1);
    for (const VariantId id : all_variants()) {
      for (const ThresholdMode mode :
           {ThresholdMode::intermediate, ThresholdMode::restrictive}) {
        const AblationCell& c = report.cell(id, mode, "eval");
        CHECK(c.n_images == static_cast<int>(samples.size()));
        CHECK(c.scores.mean_acc >= 0.0);
        CHECK(c.scores.mean_acc <= 1.0);
        CHECK(c.scores.mean_iu >= 0.0);
        CHECK(c.scores.mean_iu <= 1.0);
      }
    }
    const std::string csv = report.to_csv();
    CHECK(csv.find("M10,restrictive,eval") != std::string::npos);
    const std::string grid = report.to_grid();
    CHECK(grid.find("M10") != std::string::npos);
    CHECK(grid.find("mean_IU") != std::string::npos);
  }

  TEST_CASE("subset of variants restricts the columns") {
    const Network main_net = init_network(tiny());
    const AblationReport report =
        run_ablation({{"eval", tiny_eval_set(2)}}, {&main_net, nullptr, nullptr},
                     {VariantId::M2, VariantId::M7}, {ThresholdMode::intermediate});
    CHECK(report.cells.size() == 2);
    CHECK_THROWS_AS(report.cell(VariantId::M3, ThresholdMode::intermediate, "eval"),
                    ConfigError);
  }

  TEST_CASE("missing networks or masks are errors") {
    const Network main_net = init_network(tiny());
    auto samples = tiny_eval_set(2);
    CHECK_THROWS_AS(run_ablation({{"eval", samples}}, {&main_net, nullptr, nullptr},
                                 all_variants(), {ThresholdMode::intermediate}),
                    ConfigError);
    samples[0].gt_mask.reset();
    try {
      run_ablation({{"eval", samples}}, {&main_net, nullptr, nullptr}, {VariantId::M2},
                   {ThresholdMode::intermediate});
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(samples[0].sample_id) != std::string::npos);
    }
  }

  TEST_CASE("a ground-truth-valued map scores perfect metrics") {
    // the perfect-prediction sanity row: aggregate confusion of gt vs gt
    const auto samples = tiny_eval_set(4);
    ConfusionCounts total;
    for (const SegSample& s : samples) total.accumulate(confusion(*s.gt_mask, *s.gt_mask));
    const SegScores scores = metrics(total);
    CHECK(scores.mean_acc == 1.0);
    CHECK(scores.mean_iu == 1.0);
    CHECK(scores.fw_iu == 1.0);
  }
}
