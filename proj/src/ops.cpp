#include "mlcam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <utility>

namespace mlcam {

namespace {

void require_rank(const Tensor& t, int rank, const std::string& what) {
  if (t.rank() != rank) {
    throw DimensionError(what + ": expected rank " + std::to_string(rank) +
                         ", got rank " + std::to_string(t.rank()));
  }
}

// Valid output range [lo, hi) for which ox*stride + k_off lands in [0, extent).
std::pair<int, int> valid_out_range(int out_extent, int stride, int k_off, int extent) {
  int lo = 0;
  while (lo < out_extent && lo * stride + k_off < 0) ++lo;
  int hi = out_extent;
  while (hi > lo && (hi - 1) * stride + k_off >= extent) --hi;
  return {lo, hi};
}

}  // namespace

Var conv2d(Graph* g, const Var& input, const Var& kernels, int stride, int pad) {
  return conv2d(g, input, kernels, Var(), stride, pad);
}

Var conv2d(Graph* g, const Var& input, const Var& kernels, const Var& bias,
           int stride, int pad) {
  const Tensor& in = input.value();
  const Tensor& k = kernels.value();
  require_rank(in, 3, "conv2d input");
  require_rank(k, 4, "conv2d kernels");
  const int c_in = in.dim(0), h = in.dim(1), w = in.dim(2);
  const int c_out = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (k.dim(1) != c_in) {
    throw DimensionError("conv2d: channel axis mismatch, input has " +
                         std::to_string(c_in) + " channels but kernels expect " +
                         std::to_string(k.dim(1)));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw DimensionError("conv2d: kernel extents must be odd, got " +
                         std::to_string(kh) + "x" + std::to_string(kw));
  }
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (pad < 0) throw DimensionError("conv2d: pad must be >= 0");
  if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0 ||
      h + 2 * pad < kh || w + 2 * pad < kw) {
    throw DimensionError("conv2d: spatial axes " + std::to_string(h) + "x" +
                         std::to_string(w) + " do not divide exactly under kernel " +
                         std::to_string(kh) + "x" + std::to_string(kw) + ", stride " +
                         std::to_string(stride) + ", pad " + std::to_string(pad));
  }
  if (bias.defined()) {
    require_rank(bias.value(), 1, "conv2d bias");
    if (bias.value().dim(0) != c_out) {
      throw DimensionError("conv2d: bias axis length " +
                           std::to_string(bias.value().dim(0)) +
                           " != output channels " + std::to_string(c_out));
    }
  }
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;

  Tensor out_t({c_out, oh, ow});
  {
    const double* in_p = in.data();
    const double* k_p = k.data();
    double* out_p = out_t.data();
    for (int co = 0; co < c_out; ++co) {
      double* plane = out_p + static_cast<std::size_t>(co) * oh * ow;
      const double b = bias.defined() ? bias.value()[static_cast<std::size_t>(co)] : 0.0;
      for (int i = 0; i < oh * ow; ++i) plane[i] = b;
      for (int ci = 0; ci < c_in; ++ci) {
        const double* in_plane = in_p + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const double wt = k_p[((static_cast<std::size_t>(co) * c_in + ci) * kh + ky) * kw + kx];
            const auto [xlo, xhi] = valid_out_range(ow, stride, kx - pad, w);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              const double* in_row = in_plane + static_cast<std::size_t>(iy) * w;
              double* out_row = plane + static_cast<std::size_t>(oy) * ow;
              if (stride == 1) {
                const int base = kx - pad;
                for (int ox = xlo; ox < xhi; ++ox) out_row[ox] += wt * in_row[ox + base];
              } else {
                for (int ox = xlo; ox < xhi; ++ox) {
                  out_row[ox] += wt * in_row[ox * stride + kx - pad];
                }
              }
            }
          }
        }
      }
    }
  }

  Var out(std::move(out_t));
  if (g) {
    Var in_v = input, k_v = kernels, b_v = bias, out_v = out;
    std::vector<const void*> ids = {input.id(), kernels.id()};
    if (bias.defined()) ids.push_back(bias.id());
    g->add({"conv2d", std::move(ids), out.id(),
            [in_v, k_v, b_v, out_v, stride, pad, c_in, c_out, h, w, kh, kw, oh, ow]() mutable {
              const double* gout = out_v.grad().data();
              const double* in_p = in_v.value().data();
              const double* k_p = k_v.value().data();
              double* gin = in_v.grad().data();
              double* gk = k_v.grad().data();
              for (int co = 0; co < c_out; ++co) {
                const double* gplane = gout + static_cast<std::size_t>(co) * oh * ow;
                if (b_v.defined()) {
                  double acc = 0.0;
                  for (int i = 0; i < oh * ow; ++i) acc += gplane[i];
                  b_v.grad()[static_cast<std::size_t>(co)] += acc;
                }
                for (int ci = 0; ci < c_in; ++ci) {
                  const double* in_plane = in_p + static_cast<std::size_t>(ci) * h * w;
                  double* gin_plane = gin + static_cast<std::size_t>(ci) * h * w;
                  for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                      const std::size_t ki =
                          ((static_cast<std::size_t>(co) * c_in + ci) * kh + ky) * kw + kx;
                      const double wt = k_p[ki];
                      double wacc = 0.0;
                      const auto [xlo, xhi] = valid_out_range(ow, stride, kx - pad, w);
                      for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const double* in_row = in_plane + static_cast<std::size_t>(iy) * w;
                        double* gin_row = gin_plane + static_cast<std::size_t>(iy) * w;
                        const double* grow = gplane + static_cast<std::size_t>(oy) * ow;
                        if (stride == 1) {
                          const int base = kx - pad;
                          for (int ox = xlo; ox < xhi; ++ox) {
                            const double go = grow[ox];
                            wacc += go * in_row[ox + base];
                            gin_row[ox + base] += wt * go;
                          }
                        } else {
                          for (int ox = xlo; ox < xhi; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            const double go = grow[ox];
                            wacc += go * in_row[ix];
                            gin_row[ix] += wt * go;
                          }
                        }
                      }
                      gk[ki] += wacc;
                    }
                  }
                }
              }
            }});
  }
  return out;
}

Var relu(Graph* g, const Var& x) {
  Tensor out_t(x.value().shape());
  const double* xp = x.value().data();
  double* op = out_t.data();
  const std::size_t n = out_t.size();
  for (std::size_t i = 0; i < n; ++i) op[i] = xp[i] > 0.0 ? xp[i] : 0.0;

  Var out(std::move(out_t));
  if (g) {
    Var x_v = x, out_v = out;
    g->add({"relu", {x.id()}, out.id(), [x_v, out_v]() mutable {
              const double* gout = out_v.grad().data();
              const double* xp2 = x_v.value().data();
              double* gin = x_v.grad().data();
              const std::size_t m = x_v.value().size();
              for (std::size_t i = 0; i < m; ++i) {
                if (xp2[i] > 0.0) gin[i] += gout[i];
              }
            }});
  }
  return out;
}

Var max_pool2d(Graph* g, const Var& x, int k, int stride) {
  const Tensor& in = x.value();
  require_rank(in, 3, "max_pool2d input");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  if (k < 1 || stride < 1) throw DimensionError("max_pool2d: k and stride must be >= 1");
  if (k > h || k > w) {
    throw DimensionError("max_pool2d: window " + std::to_string(k) +
                         " exceeds spatial axes " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  const int oh = (h - k) / stride + 1;
  const int ow = (w - k) / stride + 1;

  Tensor out_t({c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out_t.size());
  const double* in_p = in.data();
  double* out_p = out_t.data();
  for (int ci = 0; ci < c; ++ci) {
    const double* plane = in_p + static_cast<std::size_t>(ci) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride + ky;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride + kx;
            const std::size_t ii = static_cast<std::size_t>(iy) * w + ix;
            if (plane[ii] > best) {  // strict: first index wins ties
              best = plane[ii];
              best_i = ii;
            }
          }
        }
        const std::size_t oi =
            (static_cast<std::size_t>(ci) * oh + oy) * ow + ox;
        out_p[oi] = best;
        (*argmax)[oi] = static_cast<std::size_t>(ci) * h * w + best_i;
      }
    }
  }

  Var out(std::move(out_t));
  if (g) {
    Var x_v = x, out_v = out;
    g->add({"max_pool2d", {x.id()}, out.id(), [x_v, out_v, argmax]() mutable {
              const double* gout = out_v.grad().data();
              double* gin = x_v.grad().data();
              const std::size_t n = out_v.value().size();
              for (std::size_t i = 0; i < n; ++i) gin[(*argmax)[i]] += gout[i];
            }});
  }
  return out;
}

Var concat_channels(Graph* g, const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("concat_channels: no operands");
  int total_c = 0;
  const Tensor& first = xs.front().value();
  require_rank(first, 3, "concat_channels operand");
  const int h = first.dim(1), w = first.dim(2);
  for (const Var& x : xs) {
    require_rank(x.value(), 3, "concat_channels operand");
    if (x.value().dim(1) != h || x.value().dim(2) != w) {
      throw DimensionError("concat_channels: spatial axes mismatch, expected " +
                           std::to_string(h) + "x" + std::to_string(w) + ", got " +
                           std::to_string(x.value().dim(1)) + "x" +
                           std::to_string(x.value().dim(2)));
    }
    total_c += x.value().dim(0);
  }
  Tensor out_t({total_c, h, w});
  double* op = out_t.data();
  for (const Var& x : xs) {
    const std::size_t n = x.value().size();
    std::memcpy(op, x.value().data(), n * sizeof(double));
    op += n;
  }

  Var out(std::move(out_t));
  if (g) {
    std::vector<Var> xs_v = xs;
    Var out_v = out;
    std::vector<const void*> ids;
    for (const Var& x : xs) ids.push_back(x.id());
    g->add({"concat_channels", std::move(ids), out.id(), [xs_v, out_v]() mutable {
              const double* gout = out_v.grad().data();
              std::size_t off = 0;
              for (Var& x : xs_v) {
                double* gin = x.grad().data();
                const std::size_t n = x.value().size();
                for (std::size_t i = 0; i < n; ++i) gin[i] += gout[off + i];
                off += n;
              }
            }});
  }
  return out;
}

Var slice_channels(Graph* g, const Var& x, int c0, int c1) {
  const Tensor& in = x.value();
  require_rank(in, 3, "slice_channels input");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  if (c0 < 0 || c1 > c || c0 >= c1) {
    throw DimensionError("slice_channels: range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") invalid for channel axis " +
                         std::to_string(c));
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out_t({c1 - c0, h, w});
  std::memcpy(out_t.data(), in.data() + c0 * plane, out_t.size() * sizeof(double));

  Var out(std::move(out_t));
  if (g) {
    Var x_v = x, out_v = out;
    g->add({"slice_channels", {x.id()}, out.id(), [x_v, out_v, c0, plane]() mutable {
              const double* gout = out_v.grad().data();
              double* gin = x_v.grad().data() + static_cast<std::size_t>(c0) * plane;
              const std::size_t n = out_v.value().size();
              for (std::size_t i = 0; i < n; ++i) gin[i] += gout[i];
            }});
  }
  return out;
}

Var reshape(Graph* g, const Var& x, Shape shape) {
  if (Tensor::element_count(shape) != x.value().size()) {
    throw DimensionError("reshape: element count mismatch");
  }
  Tensor out_t(std::move(shape), std::vector<double>(x.value().data(),
                                                     x.value().data() + x.value().size()));
  Var out(std::move(out_t));
  if (g) {
    Var x_v = x, out_v = out;
    g->add({"reshape", {x.id()}, out.id(), [x_v, out_v]() mutable {
              const double* gout = out_v.grad().data();
              double* gin = x_v.grad().data();
              const std::size_t n = x_v.value().size();
              for (std::size_t i = 0; i < n; ++i) gin[i] += gout[i];
            }});
  }
  return out;
}

Var add(Graph* g, const Var& a, const Var& b) {
  if (a.value().shape() != b.value().shape()) {
    throw DimensionError("add: shape mismatch");
  }
  Tensor out_t(a.value().shape());
  const double* ap = a.value().data();
  const double* bp = b.value().data();
  double* op = out_t.data();
  const std::size_t n = out_t.size();
  for (std::size_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];

  Var out(std::move(out_t));
  if (g) {
    Var a_v = a, b_v = b, out_v = out;
    g->add({"add", {a.id(), b.id()}, out.id(), [a_v, b_v, out_v]() mutable {
              const double* gout = out_v.grad().data();
              double* ga = a_v.grad().data();
              double* gb = b_v.grad().data();
              const std::size_t m = out_v.value().size();
              for (std::size_t i = 0; i < m; ++i) {
                ga[i] += gout[i];
                gb[i] += gout[i];
              }
            }});
  }
  return out;
}

Var global_avg_pool(Graph* g, const Var& x) {
  const Tensor& in = x.value();
  require_rank(in, 3, "global_avg_pool input");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  if (h < 1 || w < 1) throw DimensionError("global_avg_pool: empty spatial axes");
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Tensor out_t({c});
  const double* in_p = in.data();
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    const double* plane = in_p + static_cast<std::size_t>(ci) * h * w;
    for (int i = 0; i < h * w; ++i) acc += plane[i];
    out_t[static_cast<std::size_t>(ci)] = acc * inv;
  }

  Var out(std::move(out_t));
  if (g) {
    Var x_v = x, out_v = out;
    g->add({"global_avg_pool", {x.id()}, out.id(), [x_v, out_v, c, h, w, inv]() mutable {
              const double* gout = out_v.grad().data();
              double* gin = x_v.grad().data();
              for (int ci = 0; ci < c; ++ci) {
                const double gc = gout[ci] * inv;
                double* plane = gin + static_cast<std::size_t>(ci) * h * w;
                for (int i = 0; i < h * w; ++i) plane[i] += gc;
              }
            }});
  }
  return out;
}

std::vector<double> softmax(const std::vector<double>& scores) {
  double m = scores[0];
  for (const double s : scores) m = std::max(m, s);
  std::vector<double> p(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

Var softmax_cross_entropy(Graph* g, const Var& scores, int label) {
  const Tensor& s = scores.value();
  require_rank(s, 1, "softmax_cross_entropy scores");
  const int k = s.dim(0);
  if (k < 2) throw DimensionError("softmax_cross_entropy: need at least 2 classes");
  if (label < 0 || label >= k) {
    throw ContractError("softmax_cross_entropy: label " + std::to_string(label) +
                        " outside [0," + std::to_string(k) + ")");
  }
  if (!s.all_finite()) {
    throw NumericError("softmax_cross_entropy: non-finite score");
  }
  double m = s[0];
  for (int i = 1; i < k; ++i) m = std::max(m, s[static_cast<std::size_t>(i)]);
  double sum = 0.0;
  std::vector<double> p(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(s[static_cast<std::size_t>(i)] - m);
    sum += p[static_cast<std::size_t>(i)];
  }
  for (double& v : p) v /= sum;
  const double loss = std::log(sum) - (s[static_cast<std::size_t>(label)] - m);

  Var out(Tensor::scalar(loss));
  if (g) {
    Var s_v = scores, out_v = out;
    g->add({"softmax_cross_entropy", {scores.id()}, out.id(),
            [s_v, out_v, p, label, k]() mutable {
              const double go = out_v.grad()[0];
              double* gin = s_v.grad().data();
              for (int i = 0; i < k; ++i) {
                const double onehot = (i == label) ? 1.0 : 0.0;
                gin[i] += (p[static_cast<std::size_t>(i)] - onehot) * go;
              }
            }});
  }
  return out;
}

namespace {

struct Lerp {
  int i0, i1;
  double w1;  // weight of i1; weight of i0 is 1-w1
};

Lerp axis_lerp(int t, int target, int source) {
  if (target == 1 || source == 1) return {0, std::min(1, source - 1), 0.0};
  const double f = static_cast<double>(t) * (source - 1) / (target - 1);
  const int i0 = std::min(static_cast<int>(f), source - 2);
  return {i0, i0 + 1, f - i0};
}

}  // namespace

Tensor upsample_bilinear(const Tensor& map, int target_h, int target_w) {
  require_rank(map, 2, "bilinear_upsample map");
  const int h = map.dim(0), w = map.dim(1);
  if (target_h < 1 || target_w < 1) {
    throw DimensionError("bilinear_upsample: zero target extent");
  }
  if (target_h < h || target_w < w) {
    throw DimensionError("bilinear_upsample: target " + std::to_string(target_h) +
                         "x" + std::to_string(target_w) + " smaller than source " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor out({target_h, target_w});
  for (int ty = 0; ty < target_h; ++ty) {
    const Lerp ly = axis_lerp(ty, target_h, h);
    for (int tx = 0; tx < target_w; ++tx) {
      const Lerp lx = axis_lerp(tx, target_w, w);
      const double v00 = map.at(ly.i0, lx.i0), v01 = map.at(ly.i0, lx.i1);
      const double v10 = map.at(ly.i1, lx.i0), v11 = map.at(ly.i1, lx.i1);
      // lerp form: constant maps stay exactly constant
      const double top = v00 + lx.w1 * (v01 - v00);
      const double bot = v10 + lx.w1 * (v11 - v10);
      out.at(ty, tx) = top + ly.w1 * (bot - top);
    }
  }
  return out;
}

Var bilinear_upsample(Graph* g, const Var& map, int target_h, int target_w) {
  Tensor out_t = upsample_bilinear(map.value(), target_h, target_w);
  const int h = map.value().dim(0), w = map.value().dim(1);

  Var out(std::move(out_t));
  if (g) {
    Var m_v = map, out_v = out;
    g->add({"bilinear_upsample", {map.id()}, out.id(),
            [m_v, out_v, h, w, target_h, target_w]() mutable {
              const Tensor& gout = out_v.grad();
              Tensor& gin = m_v.grad();
              for (int ty = 0; ty < target_h; ++ty) {
                const Lerp ly = axis_lerp(ty, target_h, h);
                for (int tx = 0; tx < target_w; ++tx) {
                  const Lerp lx = axis_lerp(tx, target_w, w);
                  const double go = gout.at(ty, tx);
                  gin.at(ly.i0, lx.i0) += (1.0 - ly.w1) * (1.0 - lx.w1) * go;
                  gin.at(ly.i0, lx.i1) += (1.0 - ly.w1) * lx.w1 * go;
                  gin.at(ly.i1, lx.i0) += ly.w1 * (1.0 - lx.w1) * go;
                  gin.at(ly.i1, lx.i1) += ly.w1 * lx.w1 * go;
                }
              }
            }});
  }
  return out;
}

}  // namespace mlcam
