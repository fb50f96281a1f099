#include "mlcam/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "mlcam/io_util.hpp"
#include "mlcam/random.hpp"

namespace mlcam {

namespace {

int pooled(int extent) { return (extent - 2) / 2 + 1; }

double cross_entropy_2(double s_d, double s_n, Label label) {
  const double m = std::max(s_d, s_n);
  const double lse = std::log(std::exp(s_d - m) + std::exp(s_n - m));
  const double target = (label == Label::diagnostic) ? s_d : s_n;
  return lse - (target - m);
}

}  // namespace

void NetworkConfig::validate() const {
  if (input_h < 1 || input_w < 1) {
    throw ConfigError("network config: input size must be positive");
  }
  if (input_channels < 1) {
    throw ConfigError("network config: input_channels must be >= 1");
  }
  if (stem_channels < 1) {
    throw ConfigError("network config: stem_channels must be >= 1");
  }
  for (int b = 0; b < 3; ++b) {
    for (int br = 0; br < 3; ++br) {
      if (inception_channels[static_cast<std::size_t>(b)][static_cast<std::size_t>(br)] < 1) {
        throw ConfigError("network config: block " + std::to_string(b + 1) +
                          " branch channel counts must be >= 1");
      }
    }
  }
  const auto shapes = tap_shapes();
  for (int b = 0; b < 3; ++b) {
    if (shapes[static_cast<std::size_t>(b)].first < 5 ||
        shapes[static_cast<std::size_t>(b)].second < 5) {
      throw ConfigError("network config: input " + std::to_string(input_h) + "x" +
                        std::to_string(input_w) + " leaves block " +
                        std::to_string(b + 1) + " with spatial dims below 5");
    }
  }
}

int NetworkConfig::block_input_channels(int block) const {
  if (block == 0) return stem_channels;
  return block_output_channels(block - 1);
}

int NetworkConfig::block_output_channels(int block) const {
  const auto& ch = inception_channels[static_cast<std::size_t>(block)];
  return ch[0] + ch[1] + ch[2];
}

std::array<std::pair<int, int>, 3> NetworkConfig::tap_shapes() const {
  int h = pooled(input_h);  // stem conv is 3x3 pad 1; the stem pool halves
  int w = pooled(input_w);
  std::array<std::pair<int, int>, 3> shapes;
  for (int b = 0; b < 3; ++b) {
    if (b > 0 && pool_between[static_cast<std::size_t>(b - 1)]) {
      h = pooled(h);
      w = pooled(w);
    }
    shapes[static_cast<std::size_t>(b)] = {h, w};
  }
  return shapes;
}

Network::Network(const NetworkConfig& cfg)
    : cfg_(cfg), forward_counter_(std::make_shared<std::atomic<std::uint64_t>>(0)) {
  auto conv = [&](const std::string& name, int c_out, int c_in, int k) {
    ConvParams p;
    p.kernel = Var(Tensor({c_out, c_in, k, k}));
    p.bias = Var(Tensor({c_out}));
    registry_.push_back({name + ".kernel", p.kernel});
    registry_.push_back({name + ".bias", p.bias});
    return p;
  };
  stem_ = conv("stem", cfg_.stem_channels, cfg_.input_channels, 3);
  for (int b = 0; b < 3; ++b) {
    const std::string prefix = "block" + std::to_string(b + 1);
    const int c_in = cfg_.block_input_channels(b);
    const auto& ch = cfg_.inception_channels[static_cast<std::size_t>(b)];
    InceptionParams& ip = blocks_[static_cast<std::size_t>(b)];
    ip.conv1x1 = conv(prefix + ".conv1x1", ch[0], c_in, 1);
    ip.conv3x3 = conv(prefix + ".conv3x3", ch[1], c_in, 3);
    ip.conv5x5 = conv(prefix + ".conv5x5", ch[2], c_in, 5);
    const std::string cam_name = "cam" + std::to_string(b + 1);
    cam_[static_cast<std::size_t>(b)] =
        Var(Tensor({2, cfg_.block_output_channels(b), 1, 1}));
    registry_.push_back({cam_name + ".kernel", cam_[static_cast<std::size_t>(b)]});
  }
}

Network make_skeleton(const NetworkConfig& config) {
  config.validate();
  return Network(config);
}

Network init_network(const NetworkConfig& config) {
  Network net = make_skeleton(config);
  std::mt19937_64 rng(config.seed);
  for (auto& p : net.params()) {
    if (!p.name.ends_with(".kernel")) continue;  // biases start at zero
    Tensor& t = p.var.value();
    const int c_in = t.dim(1), kh = t.dim(2), kw = t.dim(3);
    const double bound = std::sqrt(3.0 / (static_cast<double>(c_in) * kh * kw));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(rng, -bound, bound);
  }
  return net;
}

Network Network::clone() const {
  Network copy(cfg_);
  for (std::size_t i = 0; i < registry_.size(); ++i) {
    copy.registry_[i].var.value() = registry_[i].var.value();
  }
  return copy;
}

Var inception_block(Graph* g, const Var& x, const InceptionParams& params) {
  const Tensor& in = x.value();
  if (in.rank() != 3 || in.dim(1) < 5 || in.dim(2) < 5) {
    throw DimensionError("inception_block: spatial dims must be >= 5, got " +
                         std::to_string(in.rank() == 3 ? in.dim(1) : -1) + "x" +
                         std::to_string(in.rank() == 3 ? in.dim(2) : -1));
  }
  Var b1 = relu(g, conv2d(g, x, params.conv1x1.kernel, params.conv1x1.bias, 1, 0));
  Var b3 = relu(g, conv2d(g, x, params.conv3x3.kernel, params.conv3x3.bias, 1, 1));
  Var b5 = relu(g, conv2d(g, x, params.conv5x5.kernel, params.conv5x5.bias, 1, 2));
  return concat_channels(g, {b1, b3, b5});
}

std::pair<Tensor, Tensor> cam_tap(const Tensor& features, const CamWeights& weights) {
  if (features.rank() != 3) {
    throw DimensionError("cam_tap: features must be [C,H,W]");
  }
  const int c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (static_cast<int>(weights.diagnostic.size()) != c ||
      static_cast<int>(weights.nondiagnostic.size()) != c) {
    throw DimensionError("cam_tap: weight length " +
                         std::to_string(weights.diagnostic.size()) +
                         " != channel axis " + std::to_string(c));
  }
  Tensor dfm({h, w}), nfm({h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int l = 0; l < c; ++l) {
    const double wd = weights.diagnostic[static_cast<std::size_t>(l)];
    const double wn = weights.nondiagnostic[static_cast<std::size_t>(l)];
    const double* f = features.data() + static_cast<std::size_t>(l) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      dfm[i] += wd * f[i];
      nfm[i] += wn * f[i];
    }
  }
  return {std::move(dfm), std::move(nfm)};
}

CamWeights extract_cam_weights(const Network& net, int tap) {
  const Tensor& k = net.cam_kernel(tap).value();
  const int c = k.dim(1);
  CamWeights w;
  w.diagnostic.resize(static_cast<std::size_t>(c));
  w.nondiagnostic.resize(static_cast<std::size_t>(c));
  for (int l = 0; l < c; ++l) {
    w.diagnostic[static_cast<std::size_t>(l)] = k.at(0, l, 0, 0);
    w.nondiagnostic[static_cast<std::size_t>(l)] = k.at(1, l, 0, 0);
  }
  return w;
}

LayerScores layer_scores(const Tensor& dfm, const Tensor& nfm) {
  if (dfm.shape() != nfm.shape()) {
    throw DimensionError("layer_scores: dfm and nfm shapes differ");
  }
  double sd = 0.0, sn = 0.0;
  for (std::size_t i = 0; i < dfm.size(); ++i) {
    sd += dfm[i];
    sn += nfm[i];
  }
  sd /= static_cast<double>(dfm.size());
  sn /= static_cast<double>(nfm.size());
  const auto p = softmax({sd, sn});
  return {sd, sn, {p[0], p[1]}};
}

ForwardResult forward(const Network& net, const Tensor& image, Graph* g) {
  const NetworkConfig& cfg = net.config();
  if (image.rank() != 3 || image.dim(0) != cfg.input_channels ||
      image.dim(1) != cfg.input_h || image.dim(2) != cfg.input_w) {
    throw DimensionError("forward: image must be [" +
                         std::to_string(cfg.input_channels) + "," +
                         std::to_string(cfg.input_h) + "," +
                         std::to_string(cfg.input_w) + "]");
  }
  net.count_forward();

  ForwardResult out;
  out.head = cfg.head;

  Var x(image);
  x = conv2d(g, x, net.stem().kernel, net.stem().bias, 1, 1);
  x = relu(g, x);
  x = max_pool2d(g, x, 2, 2);

  std::array<Var, 3> cam_outs;
  for (int b = 0; b < 3; ++b) {
    if (b > 0 && cfg.pool_between[static_cast<std::size_t>(b - 1)]) {
      x = max_pool2d(g, x, 2, 2);
    }
    x = inception_block(g, x, net.block(b));
    Var cam_out = conv2d(g, x, net.cam_kernel(b + 1), 1, 0);  // [2,H,W]
    Var scores = global_avg_pool(g, cam_out);                 // [s_d, s_n]
    cam_outs[static_cast<std::size_t>(b)] = cam_out;
    out.tap_score_vars[static_cast<std::size_t>(b)] = scores;

    LayerMaps& maps = out.taps[static_cast<std::size_t>(b)];
    maps.tap_id = b + 1;
    const Tensor& cam_t = cam_out.value();
    const int h = cam_t.dim(1), w = cam_t.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    maps.dfm = Tensor({h, w}, std::vector<double>(cam_t.data(), cam_t.data() + plane));
    maps.nfm = Tensor({h, w},
                      std::vector<double>(cam_t.data() + plane, cam_t.data() + 2 * plane));
    maps.s_d = scores.value()[0];
    maps.s_n = scores.value()[1];
    const auto p = softmax({maps.s_d, maps.s_n});
    maps.probs = {p[0], p[1]};
  }

  if (cfg.head == HeadMode::mlgap) {
    // Upsample every CAM pair to tap-1 resolution, sum, pool once.
    const int th = out.taps[0].dfm.dim(0), tw = out.taps[0].dfm.dim(1);
    Var combined;
    for (int b = 0; b < 3; ++b) {
      Var cam_out = cam_outs[static_cast<std::size_t>(b)];
      const int h = cam_out.value().dim(1), w = cam_out.value().dim(2);
      std::vector<Var> channels;
      for (int c = 0; c < 2; ++c) {
        Var ch = reshape(g, slice_channels(g, cam_out, c, c + 1), {h, w});
        ch = bilinear_upsample(g, ch, th, tw);
        channels.push_back(reshape(g, ch, {1, th, tw}));
      }
      Var pair = concat_channels(g, channels);
      combined = combined.defined() ? add(g, combined, pair) : pair;
    }
    Var scores = global_avg_pool(g, combined);
    out.combined_cam = combined.detached();
    out.mlgap_score_var = scores;
    out.mlgap_scores = {scores.value()[0], scores.value()[1]};
    const auto p = softmax({out.mlgap_scores[0], out.mlgap_scores[1]});
    out.mlgap_probs = {p[0], p[1]};
  }

  return out;
}

Var total_loss(Graph& g, const ForwardResult& fwd, Label label) {
  const int li = static_cast<int>(label);
  switch (fwd.head) {
    case HeadMode::mlgap:
      return softmax_cross_entropy(&g, fwd.mlgap_score_var, li);
    case HeadMode::deep_only:
      return softmax_cross_entropy(&g, fwd.tap_score_vars[2], li);
    case HeadMode::mlcam:
    default: {
      Var sum = softmax_cross_entropy(&g, fwd.tap_score_vars[0], li);
      sum = add(&g, sum, softmax_cross_entropy(&g, fwd.tap_score_vars[1], li));
      sum = add(&g, sum, softmax_cross_entropy(&g, fwd.tap_score_vars[2], li));
      return sum;
    }
  }
}

double total_loss_value(const ForwardResult& fwd, Label label) {
  switch (fwd.head) {
    case HeadMode::mlgap:
      return cross_entropy_2(fwd.mlgap_scores[0], fwd.mlgap_scores[1], label);
    case HeadMode::deep_only:
      return cross_entropy_2(fwd.taps[2].s_d, fwd.taps[2].s_n, label);
    case HeadMode::mlcam:
    default: {
      double total = 0.0;
      for (const LayerMaps& t : fwd.taps) total += cross_entropy_2(t.s_d, t.s_n, label);
      return total;
    }
  }
}

std::pair<Label, double> classify(const std::array<LayerMaps, 3>& taps) {
  double p_d = 0.0;
  for (const LayerMaps& t : taps) p_d += t.probs[0];
  p_d /= 3.0;
  if (p_d > 0.5) return {Label::diagnostic, p_d};
  return {Label::nondiagnostic, 1.0 - p_d};  // exact ties resolve to ND
}

std::pair<Label, double> classify(const ForwardResult& fwd) {
  if (fwd.head == HeadMode::mlgap) {
    const double p_d = fwd.mlgap_probs[0];
    if (p_d > 0.5) return {Label::diagnostic, p_d};
    return {Label::nondiagnostic, 1.0 - p_d};
  }
  if (fwd.head == HeadMode::deep_only) {
    const double p_d = fwd.taps[2].probs[0];
    if (p_d > 0.5) return {Label::diagnostic, p_d};
    return {Label::nondiagnostic, 1.0 - p_d};
  }
  return classify(fwd.taps);
}

namespace {

constexpr char kMagic[6] = {'M', 'L', 'C', 'A', 'M', '1'};

void write_config(std::ostream& os, const NetworkConfig& cfg) {
  write_u32_le(os, static_cast<std::uint32_t>(cfg.input_h));
  write_u32_le(os, static_cast<std::uint32_t>(cfg.input_w));
  write_u32_le(os, static_cast<std::uint32_t>(cfg.input_channels));
  write_u32_le(os, static_cast<std::uint32_t>(cfg.stem_channels));
  for (const auto& block : cfg.inception_channels) {
    for (const int ch : block) write_u32_le(os, static_cast<std::uint32_t>(ch));
  }
  write_u8(os, cfg.pool_between[0] ? 1 : 0);
  write_u8(os, cfg.pool_between[1] ? 1 : 0);
  write_u8(os, static_cast<std::uint8_t>(cfg.head));
  write_u64_le(os, cfg.seed);
}

NetworkConfig read_config(std::istream& is) {
  NetworkConfig cfg;
  cfg.input_h = static_cast<int>(read_u32_le(is, "config"));
  cfg.input_w = static_cast<int>(read_u32_le(is, "config"));
  cfg.input_channels = static_cast<int>(read_u32_le(is, "config"));
  cfg.stem_channels = static_cast<int>(read_u32_le(is, "config"));
  for (auto& block : cfg.inception_channels) {
    for (int& ch : block) ch = static_cast<int>(read_u32_le(is, "config"));
  }
  cfg.pool_between[0] = read_u8(is, "config") != 0;
  cfg.pool_between[1] = read_u8(is, "config") != 0;
  const std::uint8_t head = read_u8(is, "config");
  if (head > 2) throw DataError("checkpoint: unknown head mode " + std::to_string(head));
  cfg.head = static_cast<HeadMode>(head);
  cfg.seed = read_u64_le(is, "config");
  return cfg;
}

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& path,
                     const std::map<std::string, double>& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_config(os, net.config());

  struct Entry {
    std::string name;
    Shape shape;
    const double* data;
    std::size_t count;
  };
  std::vector<Entry> entries;
  for (const auto& p : net.params()) {
    entries.push_back({p.name, p.var.value().shape(), p.var.value().data(),
                       p.var.value().size()});
  }
  std::vector<double> meta_values;
  meta_values.reserve(meta.size());
  for (const auto& [key, value] : meta) {
    meta_values.push_back(value);
    entries.push_back({"_meta." + key, {1}, &meta_values.back(), 1});
  }

  write_u32_le(os, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const Entry& e : entries) {
    write_u16_le(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_u8(os, static_cast<std::uint8_t>(e.shape.size()));
    for (const int d : e.shape) write_u32_le(os, static_cast<std::uint32_t>(d));
    write_u64_le(os, offset);
    offset += e.count;
  }
  write_u64_le(os, offset);
  for (const Entry& e : entries) {
    for (std::size_t i = 0; i < e.count; ++i) write_f64_le(os, e.data[i]);
  }
  if (!os) throw DataError("checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path.string());
  char magic[6];
  read_exact(is, magic, 6, "magic");
  if (std::memcmp(magic, kMagic, 6) != 0) {
    throw DataError("checkpoint: bad magic in " + path.string());
  }
  const NetworkConfig cfg = read_config(is);

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  const std::uint32_t n = read_u32_le(is, "manifest count");
  std::vector<Entry> entries(n);
  for (Entry& e : entries) {
    const std::uint16_t len = read_u16_le(is, "name length");
    e.name.resize(len);
    read_exact(is, e.name.data(), len, "name");
    const std::uint8_t ndims = read_u8(is, "rank");
    e.shape.resize(ndims);
    for (int& d : e.shape) d = static_cast<int>(read_u32_le(is, "extent"));
    e.offset = read_u64_le(is, "offset");
  }
  const std::uint64_t payload_count = read_u64_le(is, "payload count");
  std::vector<double> payload(payload_count);
  for (double& v : payload) v = read_f64_le(is, "payload");

  LoadedCheckpoint result{make_skeleton(cfg), {}};
  std::size_t matched = 0;
  for (const Entry& e : entries) {
    if (e.name.starts_with("_meta.")) {
      if (e.offset >= payload_count) throw DataError("checkpoint: meta offset out of range");
      result.meta[e.name.substr(6)] = payload[e.offset];
      continue;
    }
    bool found = false;
    for (auto& p : result.net.params()) {
      if (p.name != e.name) continue;
      found = true;
      if (p.var.value().shape() != e.shape) {
        throw DataError("checkpoint: shape mismatch for parameter " + e.name);
      }
      const std::size_t count = p.var.value().size();
      if (e.offset + count > payload_count) {
        throw DataError("checkpoint: payload out of range for parameter " + e.name);
      }
      std::copy(payload.begin() + static_cast<std::ptrdiff_t>(e.offset),
                payload.begin() + static_cast<std::ptrdiff_t>(e.offset + count),
                p.var.value().data());
      ++matched;
      break;
    }
    if (!found) throw DataError("checkpoint: unknown parameter " + e.name);
  }
  if (matched != result.net.params().size()) {
    throw DataError("checkpoint: missing parameters (" + std::to_string(matched) + "/" +
                    std::to_string(result.net.params().size()) + ")");
  }
  return result;
}

}  // namespace mlcam
