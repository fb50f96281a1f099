#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mlcam/data.hpp"
#include "mlcam/image_io.hpp"
#include "oracles.hpp"

using namespace mlcam;
namespace fs = std::filesystem;

namespace {

SynthConfig small_cfg(std::uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.image_h = 32;
  cfg.image_w = 32;
  cfg.n_groups = 6;
  cfg.images_per_group = 4;
  cfg.seed = seed;
  return cfg;
}

double foreground_fraction(const std::vector<SegSample>& samples) {
  std::uint64_t fg = 0, total = 0;
  for (const SegSample& s : samples) {
    if (s.label != Label::diagnostic || !s.gt_mask) continue;
    for (const auto v : s.gt_mask->values) fg += v;
    total += s.gt_mask->size();
  }
  return static_cast<double>(fg) / static_cast<double>(total);
}

}  // namespace

TEST_SUITE("generate") {
  TEST_CASE("label and mask invariants hold for every sample") {
    const auto samples = generate(small_cfg());
    CHECK(samples.size() == 24);
    int diagnostic = 0;
    for (const SegSample& s : samples) {
      REQUIRE(s.gt_mask.has_value());
      if (s.label == Label::diagnostic) {
        ++diagnostic;
        CHECK(s.gt_mask->any());
      } else {
        CHECK(!s.gt_mask->any());
      }
      for (std::size_t i = 0; i < s.image.size(); ++i) {
        CHECK(s.image[i] >= 0.0);
        CHECK(s.image[i] <= 1.0);
      }
    }
    CHECK(diagnostic == 12);  // balanced classes
  }

  TEST_CASE("groups are assigned round-robin and mixed-label") {
    const auto samples = generate(small_cfg());
    std::set<std::string> groups;
    for (const SegSample& s : samples) groups.insert(s.group_id);
    CHECK(groups.size() == 6);
    for (const std::string& g : groups) {
      int d = 0, nd = 0;
      for (const SegSample& s : samples) {
        if (s.group_id != g) continue;
        (s.label == Label::diagnostic ? d : nd) += 1;
      }
      CHECK(d == 2);
      CHECK(nd == 2);
    }
  }

  TEST_CASE("same seed regenerates the dataset byte-identically") {
    const auto a = generate(small_cfg(7));
    const auto b = generate(small_cfg(7));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].sample_id == b[i].sample_id);
      CHECK(a[i].image == b[i].image);
      CHECK(*a[i].gt_mask == *b[i].gt_mask);
    }
  }

  TEST_CASE("restrictive features cover less area than intermediate ones") {
    SynthConfig inter = small_cfg(11);
    inter.image_h = inter.image_w = 64;
    inter.n_groups = 20;
    inter.images_per_group = 10;  // 200 samples
    SynthConfig restr = inter;
    restr.feature_scale = FeatureScale::restrictive;
    CHECK(foreground_fraction(generate(restr)) < foreground_fraction(generate(inter)));
  }

  TEST_CASE("invalid config values are config errors") {
    SynthConfig cfg = small_cfg();
    cfg.image_h = 4;
    CHECK_THROWS_AS(generate(cfg), ConfigError);
    cfg = small_cfg();
    cfg.n_groups = 0;
    CHECK_THROWS_AS(generate(cfg), ConfigError);
    cfg = small_cfg();
    cfg.texture_noise = -1.0;
    CHECK_THROWS_AS(generate(cfg), ConfigError);
  }
}

TEST_SUITE("split_by_group") {
  TEST_CASE("20 groups at (0.6,0.2,0.2) split 12/4/4") {
    SynthConfig cfg = small_cfg(13);
    cfg.n_groups = 20;
    cfg.images_per_group = 2;
    const auto samples = generate(cfg);
    const DatasetSplit split = split_by_group(samples, {0.6, 0.2, 0.2}, 3);
    auto group_count = [](const std::vector<SegSample>& set) {
      std::set<std::string> g;
      for (const SegSample& s : set) g.insert(s.group_id);
      return g;
    };
    const auto tr = group_count(split.train), va = group_count(split.val),
               te = group_count(split.test);
    CHECK(tr.size() == 12);
    CHECK(va.size() == 4);
    CHECK(te.size() == 4);
    for (const std::string& g : va) CHECK(tr.count(g) == 0);
    for (const std::string& g : te) {
      CHECK(tr.count(g) == 0);
      CHECK(va.count(g) == 0);
    }
    CHECK(split.train.size() + split.val.size() + split.test.size() == samples.size());
  }

  TEST_CASE("same seed gives the same assignment") {
    const auto samples = generate(small_cfg(17));
    const DatasetSplit a = split_by_group(samples, {0.5, 0.25, 0.25}, 9);
    const DatasetSplit b = split_by_group(samples, {0.5, 0.25, 0.25}, 9);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
      CHECK(a.train[i].sample_id == b.train[i].sample_id);
    }
  }

  TEST_CASE("config errors: bad fractions, too few groups") {
    const auto samples = generate(small_cfg(19));
    CHECK_THROWS_AS(split_by_group(samples, {0.5, 0.2, 0.2}, 1), ConfigError);
    SynthConfig cfg = small_cfg(23);
    cfg.n_groups = 2;
    cfg.images_per_group = 3;
    CHECK_THROWS_AS(split_by_group(generate(cfg), {0.6, 0.2, 0.2}, 1), ConfigError);
  }
}

TEST_SUITE("export and load") {
  TEST_CASE("round trip reproduces tensors to 8-bit quantization") {
    const auto dir = fs::temp_directory_path() / "mlcam_ds_rt";
    fs::remove_all(dir);
    const auto samples = generate(small_cfg(29));
    export_dataset(samples, dir);
    const auto loaded = load_images(dir, 32, 32);
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      CHECK(loaded[i].sample_id == samples[i].sample_id);
      CHECK(loaded[i].group_id == samples[i].group_id);
      CHECK(loaded[i].label == samples[i].label);
      REQUIRE(loaded[i].gt_mask.has_value());
      CHECK(*loaded[i].gt_mask == *samples[i].gt_mask);  // 1-bit masks are exact
      double max_err = 0.0;
      for (std::size_t p = 0; p < samples[i].image.size(); ++p) {
        max_err = std::max(max_err, std::abs(loaded[i].image[p] - samples[i].image[p]));
      }
      CHECK(max_err <= 0.5 / 255.0 + 1e-12);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("loader resizes to the requested input size") {
    const auto dir = fs::temp_directory_path() / "mlcam_ds_rs";
    fs::remove_all(dir);
    export_dataset(generate(small_cfg(31)), dir);
    const auto loaded = load_images(dir, 64, 48);
    for (const SegSample& s : loaded) {
      CHECK(s.image.shape() == Shape{1, 64, 48});
      REQUIRE(s.gt_mask.has_value());
      CHECK(s.gt_mask->h == 64);
      CHECK(s.gt_mask->w == 48);
      if (s.label == Label::nondiagnostic) CHECK(!s.gt_mask->any());  // emptiness preserved
    }
    fs::remove_all(dir);
  }

  TEST_CASE("bad rows are aggregated data errors naming the row") {
    const auto dir = fs::temp_directory_path() / "mlcam_ds_bad";
    fs::remove_all(dir);
    export_dataset(generate(small_cfg(37)), dir);
    {
      std::ofstream manifest(dir / "manifest.csv", std::ios::app);
      manifest << "sX,images/missing.png,D,g001,\n";
      manifest << "sY,images/s00000.png,X,g001,\n";
    }
    try {
      load_images(dir, 32, 32);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("row 26") != std::string::npos);
      CHECK(msg.find("row 27") != std::string::npos);
      CHECK(msg.find("label") != std::string::npos);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("missing manifest and bad header are data errors") {
    const auto dir = fs::temp_directory_path() / "mlcam_ds_none";
    fs::remove_all(dir);
    CHECK_THROWS_AS(load_images(dir, 32, 32), DataError);
    fs::create_directories(dir);
    {
      std::ofstream manifest(dir / "manifest.csv");
      manifest << "a,b,c\n";
    }
    CHECK_THROWS_AS(load_images(dir, 32, 32), DataError);
    fs::remove_all(dir);
  }
}

TEST_SUITE("resampling") {
  TEST_CASE("bilinear resize works in both directions") {
    std::mt19937_64 rng(41);
    const Tensor m = oracle::random_tensor({8, 8}, rng, 0, 1);
    const Tensor up = resize_bilinear(m, 16, 16);
    CHECK(up.shape() == Shape{16, 16});
    const Tensor down = resize_bilinear(m, 4, 4);
    CHECK(down.shape() == Shape{4, 4});
    CHECK(resize_bilinear(m, 8, 8) == m);
  }

  TEST_CASE("nearest mask resize keeps values binary and zero masks zero") {
    BinaryMask zero(8, 8);
    CHECK(!resize_nearest(zero, 32, 32).any());
    std::mt19937_64 rng(43);
    BinaryMask m(8, 8);
    for (auto& v : m.values) v = uniform01(rng) < 0.5 ? 1 : 0;
    const BinaryMask up = resize_nearest(m, 13, 9);
    for (const auto v : up.values) CHECK((v == 0 || v == 1));
    CHECK(resize_nearest(m, 8, 8) == m);
  }
}

TEST_SUITE("image_io") {
  TEST_CASE("gray8 png round trip is exact") {
    const auto path = fs::temp_directory_path() / "mlcam_g8.png";
    std::mt19937_64 rng(47);
    std::vector<std::uint8_t> pixels(15 * 9);
    for (auto& p : pixels) p = static_cast<std::uint8_t>(rng() % 256);
    write_png_gray8(path, 15, 9, pixels);
    const ImageU8 img = read_png(path);
    CHECK(img.h == 15);
    CHECK(img.w == 9);
    CHECK(img.channels == 1);
    CHECK(img.pixels == pixels);
    fs::remove(path);
  }

  TEST_CASE("gray1 png round trips through 8-bit expansion") {
    const auto path = fs::temp_directory_path() / "mlcam_g1.png";
    std::vector<std::uint8_t> bits = {1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0};
    write_png_gray1(path, 3, 4, bits);
    const ImageU8 img = read_png(path);
    REQUIRE(img.pixels.size() == bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
      CHECK((img.pixels[i] > 0 ? 1 : 0) == bits[i]);
    }
    fs::remove(path);
  }

  TEST_CASE("undecodable file is a data error") {
    const auto path = fs::temp_directory_path() / "mlcam_notpng.png";
    {
      std::ofstream os(path);
      os << "hello";
    }
    CHECK_THROWS_AS(read_png(path), DataError);
    fs::remove(path);
  }
}
