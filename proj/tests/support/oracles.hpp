#pragma once

// Straightforward loop implementations used as references in tests. They
// share no code with the library kernels.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mmsam/autograd.hpp"
#include "mmsam/data.hpp"
#include "mmsam/kernels/msda.hpp"
#include "mmsam/nn.hpp"
#include "mmsam/tensor.hpp"

namespace mmsam::testing {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);
Var random_param(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

/// Sum over every pixel of each level with tent weights; zero outside the map.
std::vector<double> msda_oracle(const kernels::MsdaGeom& g, const std::vector<double>& value,
                                const std::vector<double>& locations, const std::vector<double>& weights);

/// q (B, Tq, H*dh), k/v (B, Tk, H*dh), bias (B, H, Tq, Tk) or empty.
Tensor attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, int64_t heads, const Tensor& bias = {});

/// NHWC input, HWIO weight.
Tensor conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad,
                     int64_t groups);

/// Bicubic a = -0.75 by explicit 4x4 tap enumeration, half-pixel centers,
/// clamped borders. pos (1, h, w, D).
Tensor bicubic_oracle(const Tensor& pos, int64_t new_h, int64_t new_w);

/// Exact IoU numerators and denominators per class.
struct RationalIou {
  std::vector<int64_t> num, den;
  /// Mean of num/den over classes with den > 0, in long double.
  long double mean() const;
};
RationalIou iou_oracle(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int64_t num_classes,
                       int64_t ignore_index);

/// Adds uniform noise to every parameter so no activation sits exactly on a
/// ReLU kink (zero-initialized biases otherwise produce exact zeros).
void jitter(Module& module, std::mt19937_64& rng, double amount = 0.05);
std::vector<std::pair<std::string, Var>> parameters_of(const Module& module);

struct GradReport {
  double max_rel = 0.0;
  std::string worst;
  int64_t checked = 0;
  /// Entries whose difference quotients at eps and eps / 4 disagree, i.e.
  /// the step crosses a ReLU kink or sampling-cell boundary.
  int64_t skipped = 0;
};

/// Central differences of `loss` against every entry of `params` (at most
/// `max_entries` per tensor, spread evenly), compared with autograd.
/// Relative error per tensor is ||a - n|| / max(||a||, ||n||, floor) over
/// the entries where the numeric derivative is stable.
GradReport gradcheck(const std::function<Var()>& loss, const std::vector<std::pair<std::string, Var>>& params,
                     int64_t max_entries = 64, double eps = 1e-5, double floor = 1e-6);

}  // namespace mmsam::testing
