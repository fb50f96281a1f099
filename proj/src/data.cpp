#include "mlcam/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "mlcam/image_io.hpp"
#include "mlcam/parallel.hpp"
#include "mlcam/random.hpp"

namespace mlcam {

namespace {

// Coarse random grid bilinearly interpolated to full resolution; [-1,1].
Tensor smooth_noise(std::mt19937_64& rng, int h, int w, int cell) {
  const int gh = std::max(2, h / cell + 1), gw = std::max(2, w / cell + 1);
  Tensor grid({gh, gw});
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = uniform(rng, -1.0, 1.0);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y) {
    const double fy = (h == 1) ? 0.0 : static_cast<double>(y) * (gh - 1) / (h - 1);
    const int y0 = std::min(static_cast<int>(fy), gh - 2);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = (w == 1) ? 0.0 : static_cast<double>(x) * (gw - 1) / (w - 1);
      const int x0 = std::min(static_cast<int>(fx), gw - 2);
      const double wx = fx - x0;
      out.at(y, x) = (1 - wy) * ((1 - wx) * grid.at(y0, x0) + wx * grid.at(y0, x0 + 1)) +
                     wy * ((1 - wx) * grid.at(y0 + 1, x0) + wx * grid.at(y0 + 1, x0 + 1));
    }
  }
  return out;
}

void draw_streak(std::mt19937_64& rng, Tensor& img) {
  const int h = img.dim(0), w = img.dim(1);
  const double x0 = uniform(rng, 0, w - 1), y0 = uniform(rng, 0, h - 1);
  const double x1 = uniform(rng, 0, w - 1), y1 = uniform(rng, 0, h - 1);
  const double x2 = uniform(rng, 0, w - 1), y2 = uniform(rng, 0, h - 1);
  const double level = uniform(rng, 0.40, 0.60);
  const int steps = 2 * std::max(h, w);
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const double u = 1.0 - t;
    const double x = u * u * x0 + 2 * u * t * x1 + t * t * x2;
    const double y = u * u * y0 + 2 * u * t * y1 + t * t * y2;
    const int xi = static_cast<int>(std::lround(x));
    const int yi = static_cast<int>(std::lround(y));
    if (xi >= 0 && xi < w && yi >= 0 && yi < h) {
      img.at(yi, xi) = std::max(img.at(yi, xi), level);
      if (xi + 1 < w) img.at(yi, xi + 1) = std::max(img.at(yi, xi + 1), level * 0.9);
    }
  }
}

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t;
  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = dx * cos_t + dy * sin_t;
    const double v = -dx * sin_t + dy * cos_t;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

SegSample make_sample(const SynthConfig& cfg, std::size_t index) {
  const int h = cfg.image_h, w = cfg.image_w;
  std::mt19937_64 rng(cfg.seed ^ static_cast<std::uint64_t>(index));

  SegSample s;
  {
    std::ostringstream id;
    id << "s" << std::setw(5) << std::setfill('0') << index;
    s.sample_id = id.str();
  }
  const int group = static_cast<int>(index) % cfg.n_groups;
  {
    std::ostringstream gid;
    gid << "g" << std::setw(3) << std::setfill('0') << group;
    s.group_id = gid.str();
  }
  const int round = static_cast<int>(index) / cfg.n_groups;
  s.label = ((group + round) % 2 == 0) ? Label::diagnostic : Label::nondiagnostic;

  Tensor img({h, w});
  const double base = uniform(rng, 0.15, 0.30);
  const Tensor coarse = smooth_noise(rng, h, w, 8);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(y, x) = base + cfg.texture_noise * coarse.at(y, x) +
                     0.5 * cfg.texture_noise * uniform(rng, -1.0, 1.0);
    }
  }

  const int streaks =
      static_cast<int>(std::lround(cfg.distractor_density * uniform(rng, 2.0, 5.0)));
  for (int i = 0; i < streaks; ++i) draw_streak(rng, img);
  const int speckles =
      static_cast<int>(std::lround(cfg.distractor_density * 0.004 * h * w));
  for (int i = 0; i < speckles; ++i) {
    const int x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(w)));
    const int y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(h)));
    img.at(y, x) = std::max(img.at(y, x), uniform(rng, 0.45, 0.70));
  }

  BinaryMask mask(h, w);
  if (s.label == Label::diagnostic) {
    const auto [rmin, rmax] = cfg.radius_fraction();
    const int n_blobs = 1 + static_cast<int>(uniform_index(rng, 3));
    const Tensor cell_tex = smooth_noise(rng, h, w, 3);
    for (int bi = 0; bi < n_blobs; ++bi) {
      Ellipse e{};
      e.a = uniform(rng, rmin, rmax) * w;
      e.b = uniform(rng, rmin, rmax) * w;
      const double theta = uniform(rng, 0.0, 3.14159265358979323846);
      e.cos_t = std::cos(theta);
      e.sin_t = std::sin(theta);
      const double margin = std::max(e.a, e.b) + 1.0;
      e.cx = uniform(rng, margin, w - margin);
      e.cy = uniform(rng, margin, h - margin);
      const double level = uniform(rng, 0.78, 0.95);
      bool any = false;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!e.contains(x, y)) continue;
          img.at(y, x) = level + 0.12 * cell_tex.at(y, x);
          mask.at(y, x) = 1;
          any = true;
        }
      }
      if (!any) {  // sub-pixel ellipse: keep the label<->mask invariant
        const int cx = std::clamp(static_cast<int>(std::lround(e.cx)), 0, w - 1);
        const int cy = std::clamp(static_cast<int>(std::lround(e.cy)), 0, h - 1);
        img.at(cy, cx) = level;
        mask.at(cy, cx) = 1;
      }
    }
  }

  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
  s.image = Tensor({1, h, w}, std::vector<double>(img.data(), img.data() + img.size()));
  s.gt_mask = std::move(mask);
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (const char c : line) {
    if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(field);
  return fields;
}

}  // namespace

void SynthConfig::validate() const {
  if (image_h < 16 || image_w < 16) {
    throw ConfigError("synth config: image size must be at least 16x16");
  }
  if (n_groups < 1 || images_per_group < 1) {
    throw ConfigError("synth config: n_groups and images_per_group must be >= 1");
  }
  if (texture_noise < 0.0 || distractor_density < 0.0) {
    throw ConfigError("synth config: noise and distractor density must be >= 0");
  }
  const auto [rmin, rmax] = radius_fraction();
  if (rmin <= 0.0 || rmax <= rmin || rmax > 0.4) {
    throw ConfigError("synth config: invalid blob radius range");
  }
}

std::pair<double, double> SynthConfig::radius_fraction() const {
  // Restrictive blobs sit strictly below the intermediate range.
  if (feature_scale == FeatureScale::restrictive) return {0.03, 0.08};
  return {0.10, 0.25};
}

std::vector<SegSample> generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n =
      static_cast<std::size_t>(cfg.n_groups) * static_cast<std::size_t>(cfg.images_per_group);
  std::vector<SegSample> samples(n);
  parallel_for(n, [&](std::size_t i) { samples[i] = make_sample(cfg, i); });
  return samples;
}

DatasetSplit split_by_group(const std::vector<SegSample>& samples,
                            const SplitFractions& fractions, std::uint64_t seed) {
  const double sum = fractions.train + fractions.val + fractions.test;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must sum to 1");
  }
  std::vector<std::string> groups;
  for (const SegSample& s : samples) {
    if (std::find(groups.begin(), groups.end(), s.group_id) == groups.end()) {
      groups.push_back(s.group_id);
    }
  }
  const int g = static_cast<int>(groups.size());
  if (g < 3) throw ConfigError("split: need at least 3 groups, got " + std::to_string(g));

  std::mt19937_64 rng(seed);
  deterministic_shuffle(groups, rng);
  const int n_train = static_cast<int>(fractions.train * g);
  const int n_val = static_cast<int>(fractions.val * g);
  const int n_test = g - n_train - n_val;
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    throw ConfigError("split: every split needs at least one group");
  }

  std::map<std::string, int> assignment;
  for (int i = 0; i < g; ++i) {
    assignment[groups[static_cast<std::size_t>(i)]] = (i < n_train) ? 0 : (i < n_train + n_val) ? 1 : 2;
  }
  DatasetSplit out;
  for (const SegSample& s : samples) {
    switch (assignment.at(s.group_id)) {
      case 0: out.train.push_back(s); break;
      case 1: out.val.push_back(s); break;
      default: out.test.push_back(s); break;
    }
  }
  return out;
}

void export_dataset(const std::vector<SegSample>& samples,
                    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw DataError("export: cannot write manifest in " + dir.string());
  manifest << "sample_id,path,label,group_id,mask_path\n";
  for (const SegSample& s : samples) {
    const int h = s.image.dim(1), w = s.image.dim(2);
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      pixels[i] = static_cast<std::uint8_t>(
          std::lround(std::clamp(s.image[i], 0.0, 1.0) * 255.0));
    }
    const std::string img_rel = "images/" + s.sample_id + ".png";
    write_png_gray8(dir / img_rel, h, w, pixels);
    std::string mask_rel;
    if (s.gt_mask) {
      mask_rel = "masks/" + s.sample_id + ".png";
      write_png_gray1(dir / mask_rel, s.gt_mask->h, s.gt_mask->w, s.gt_mask->values);
    }
    manifest << s.sample_id << ',' << img_rel << ','
             << (s.label == Label::diagnostic ? "D" : "ND") << ',' << s.group_id << ','
             << mask_rel << '\n';
  }
  if (!manifest) throw DataError("export: manifest write failed");
}

Tensor resize_bilinear(const Tensor& map, int target_h, int target_w) {
  const int h = map.dim(0), w = map.dim(1);
  if (target_h < 1 || target_w < 1) {
    throw DimensionError("resize_bilinear: zero target extent");
  }
  Tensor out({target_h, target_w});
  for (int ty = 0; ty < target_h; ++ty) {
    const double fy = (target_h == 1 || h == 1)
                          ? 0.0
                          : static_cast<double>(ty) * (h - 1) / (target_h - 1);
    const int y0 = std::min(static_cast<int>(fy), std::max(0, h - 2));
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int tx = 0; tx < target_w; ++tx) {
      const double fx = (target_w == 1 || w == 1)
                            ? 0.0
                            : static_cast<double>(tx) * (w - 1) / (target_w - 1);
      const int x0 = std::min(static_cast<int>(fx), std::max(0, w - 2));
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double top = map.at(y0, x0) + wx * (map.at(y0, x1) - map.at(y0, x0));
      const double bot = map.at(y1, x0) + wx * (map.at(y1, x1) - map.at(y1, x0));
      out.at(ty, tx) = top + wy * (bot - top);
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) {
    throw DimensionError("resize_nearest: zero target extent");
  }
  BinaryMask out(target_h, target_w);
  for (int ty = 0; ty < target_h; ++ty) {
    const int sy = (target_h == 1)
                       ? 0
                       : static_cast<int>(std::lround(static_cast<double>(ty) *
                                                      (mask.h - 1) / (target_h - 1)));
    for (int tx = 0; tx < target_w; ++tx) {
      const int sx = (target_w == 1)
                         ? 0
                         : static_cast<int>(std::lround(static_cast<double>(tx) *
                                                        (mask.w - 1) / (target_w - 1)));
      out.at(ty, tx) = mask.at(sy, sx);
    }
  }
  return out;
}

std::vector<SegSample> load_images(const std::filesystem::path& dir, int target_h,
                                   int target_w) {
  return load_images(dir, dir / "manifest.csv", target_h, target_w);
}

std::vector<SegSample> load_images(const std::filesystem::path& dir,
                                   const std::filesystem::path& manifest,
                                   int target_h, int target_w) {
  std::ifstream in(manifest);
  if (!in) throw DataError("load: cannot open manifest " + manifest.string());
  std::string header;
  if (!std::getline(in, header)) throw DataError("load: empty manifest");
  if (split_csv_line(header) !=
      std::vector<std::string>{"sample_id", "path", "label", "group_id", "mask_path"}) {
    throw DataError("load: unexpected manifest header: " + header);
  }

  struct Row {
    int number;
    std::vector<std::string> fields;
  };
  std::vector<Row> rows;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    rows.push_back({line_no, split_csv_line(line)});
  }

  std::vector<SegSample> samples(rows.size());
  std::vector<std::string> errors(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const Row& row = rows[i];
    try {
      if (row.fields.size() != 5) {
        throw DataError("expected 5 fields, got " + std::to_string(row.fields.size()));
      }
      SegSample s;
      s.sample_id = row.fields[0];
      s.group_id = row.fields[3];
      if (row.fields[2] == "D") {
        s.label = Label::diagnostic;
      } else if (row.fields[2] == "ND") {
        s.label = Label::nondiagnostic;
      } else {
        throw DataError("unknown label \"" + row.fields[2] + "\"");
      }
      const ImageU8 img = to_gray(read_png(dir / row.fields[1]));
      Tensor plane({img.h, img.w});
      for (std::size_t p = 0; p < plane.size(); ++p) plane[p] = img.pixels[p] / 255.0;
      if (img.h != target_h || img.w != target_w) {
        plane = resize_bilinear(plane, target_h, target_w);
      }
      s.image = Tensor({1, target_h, target_w},
                       std::vector<double>(plane.data(), plane.data() + plane.size()));
      if (!row.fields[4].empty()) {
        const ImageU8 m = to_gray(read_png(dir / row.fields[4]));
        BinaryMask mask(m.h, m.w);
        for (std::size_t p = 0; p < mask.size(); ++p) mask.values[p] = m.pixels[p] > 0 ? 1 : 0;
        if (m.h != target_h || m.w != target_w) {
          mask = resize_nearest(mask, target_h, target_w);
        }
        if (s.label == Label::diagnostic && !mask.any()) {
          throw DataError("diagnostic sample has an empty mask");
        }
        if (s.label == Label::nondiagnostic && mask.any()) {
          throw DataError("nondiagnostic sample has a non-empty mask");
        }
        s.gt_mask = std::move(mask);
      }
      samples[i] = std::move(s);
    } catch (const std::exception& e) {
      errors[i] = "row " + std::to_string(row.number) + ": " + e.what();
    }
  });

  std::string joined;
  for (const std::string& e : errors) {
    if (e.empty()) continue;
    if (!joined.empty()) joined += "; ";
    joined += e;
  }
  if (!joined.empty()) throw DataError("load: " + joined);
  return samples;
}

}  // namespace mlcam
