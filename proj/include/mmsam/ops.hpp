#pragma once

// Differentiable tensor operations. Each op validates shapes, returns a
// meta result when any input is meta, and otherwise records its backward
// closure on the tape.

#include <cstdint>
#include <vector>

#include "mmsam/autograd.hpp"
#include "mmsam/kernels/msda.hpp"

namespace mmsam {

Var constant(Tensor value);

// Elementwise with numpy-style broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);

Var relu(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);
/// Softmax over the last axis.
Var softmax(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
/// Mean over one axis.
Var mean_axis(const Var& x, int64_t axis, bool keepdim);

Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& parts, int64_t axis);
Var slice(const Var& x, int64_t axis, int64_t begin, int64_t end);

/// y = x W^T + b over the last axis; W is (out, in); `bias` may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Normalizes over the last axis.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

/// NHWC convolution with HWIO weight (k, k, cin / groups, cout).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int64_t stride, int64_t pad, int64_t groups = 1);
/// Transposed convolution with kernel == stride (non-overlapping);
/// weight (k, k, cin, cout).
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int64_t stride);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
/// Channel-last batch norm. Training mode normalizes with batch statistics
/// and updates the running estimates in `state`.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training);

/// Bilinear resize of an NHWC map (half-pixel centers, no corner alignment).
Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w);

/// Multi-head dot-product attention, q (B, Tq, D), k/v (B, Tk, D). `bias`
/// (B, heads, Tq, Tk) is added to the scaled logits when defined.
Var attention(const Var& q, const Var& k, const Var& v, int64_t heads, const Var& bias = Var());

/// Decomposed relative-position logit terms for a (h, w) token grid:
/// bias[b, head, (qy, qx), (ky, kx)] = q . (rel_h[qy - ky + h - 1] + rel_w[qx - kx + w - 1]).
/// q (B, h*w, heads*dh), rel_h (2h - 1, dh), rel_w (2w - 1, dh).
Var rel_pos_bias(const Var& q, const Var& rel_h, const Var& rel_w, int64_t h, int64_t w, int64_t heads);

/// Deformable sampling core. value (B, Tk, heads*dh) with levels described
/// by `levels`; offsets (B, Tq, heads, L, P, 2) in pixels of each level;
/// weights (B, Tq, heads, L, P) softmax-normalized; reference (Tq, L, 2)
/// normalized (x, y) in [0, 1]. Returns (B, Tq, heads*dh).
struct MsdaLevels {
  std::vector<int64_t> height, width, start;
};
Var msda_sample(const Var& value, const Var& offsets, const Var& weights, const Tensor& reference,
                const MsdaLevels& levels, int64_t heads);

}  // namespace mmsam
