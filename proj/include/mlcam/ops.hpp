#pragma once

#include <vector>

#include "mlcam/tensor.hpp"

namespace mlcam {

// Differentiable primitives. Each op computes its value eagerly; when a
// Graph is supplied it also records the backward step. Pass nullptr for
// inference-only evaluation.

// Cross-correlation of [C_in,H,W] with [C_out,C_in,kH,kW] kernels plus an
// optional [C_out] bias (undefined Var = no bias term). kH,kW odd,
// stride >= 1, pad >= 0; the output extent division must be exact.
Var conv2d(Graph* g, const Var& input, const Var& kernels, const Var& bias,
           int stride, int pad);
Var conv2d(Graph* g, const Var& input, const Var& kernels, int stride, int pad);

Var relu(Graph* g, const Var& x);

// Windowed max over [C,H,W]; gradient routes to the arg-max cell, ties
// broken by first index in row-major scan order.
Var max_pool2d(Graph* g, const Var& x, int k, int stride);

// Channel-axis concatenation of [C_i,H,W] operands sharing H and W.
Var concat_channels(Graph* g, const std::vector<Var>& xs);

// [C,H,W] -> [c1-c0,H,W]; inverse of concat_channels on each operand.
Var slice_channels(Graph* g, const Var& x, int c0, int c1);

// Same data, new shape with identical element count.
Var reshape(Graph* g, const Var& x, Shape shape);

// Elementwise sum of two same-shape tensors.
Var add(Graph* g, const Var& a, const Var& b);

// [C,H,W] -> [C] spatial mean; gradient distributes 1/(H*W) per cell.
Var global_avg_pool(Graph* g, const Var& x);

// -log(softmax(scores)[label]) with max-subtraction; scores is [K], K >= 2.
Var softmax_cross_entropy(Graph* g, const Var& scores, int label);

// Align-corners bilinear interpolation of a [H,W] map up to
// [target_h,target_w]; exact pass-through when the sizes match.
Var bilinear_upsample(Graph* g, const Var& map, int target_h, int target_w);

// Plain-tensor forward paths, shared with the Var ops above. The fusion
// pipeline and the data loader use these directly; no gradients.
Tensor upsample_bilinear(const Tensor& map, int target_h, int target_w);
std::vector<double> softmax(const std::vector<double>& scores);

}  // namespace mlcam
