#include "mmsam/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmsam/error.hpp"

namespace mmsam {

void OhemConfig::validate() const {
  if (!(prob_threshold > 0.0 && prob_threshold < 1.0))
    throw ConfigError("training.ohem.prob_threshold", "must be in (0, 1)");
  if (min_kept < 0) throw ConfigError("training.ohem.min_kept", "must be at least 1 (0 selects crop_area / 16)");
}

namespace {

// Shared core: `select` returns, per image, the pixel indices that enter
// the mean.
template <typename Select>
Var selected_cross_entropy(const Var& logits, const std::vector<LabelMap>& labels, int64_t ignore_index,
                           Select select) {
  const Shape& s = logits.shape();
  if (s.size() != 4) throw ArgumentError("logits must be (B, H, W, K)");
  const int64_t B = s[0], H = s[1], W = s[2], K = s[3];
  if (static_cast<int64_t>(labels.size()) != B) throw ArgumentError("one label map per image is required");
  for (const auto& l : labels)
    if (l.height != H || l.width != W) throw ArgumentError("label map size does not match the logits");
  const Tensor& x = logits.value();
  const int64_t HW = H * W;

  Tensor prob({B, HW, K});
  std::vector<std::vector<int64_t>> chosen(static_cast<size_t>(B));
  double total = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    std::vector<int64_t> valid;
    std::vector<double> true_prob(static_cast<size_t>(HW), 1.0), nll(static_cast<size_t>(HW), 0.0);
    for (int64_t i = 0; i < HW; ++i) {
      const double* z = x.ptr() + (b * HW + i) * K;
      double* p = prob.ptr() + (b * HW + i) * K;
      const double mx = *std::max_element(z, z + K);
      double denom = 0.0;
      for (int64_t k = 0; k < K; ++k) denom += std::exp(z[k] - mx);
      for (int64_t k = 0; k < K; ++k) p[k] = std::exp(z[k] - mx) / denom;
      const int32_t y = labels[static_cast<size_t>(b)].data[static_cast<size_t>(i)];
      if (y == ignore_index) continue;
      if (y < 0 || y >= K) throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
      valid.push_back(i);
      true_prob[static_cast<size_t>(i)] = p[y];
      nll[static_cast<size_t>(i)] = -(z[y] - mx - std::log(denom));
    }
    std::vector<int64_t>& sel = chosen[static_cast<size_t>(b)];
    sel = select(valid, true_prob, nll);
    if (sel.empty()) continue;
    double acc = 0.0;
    for (int64_t i : sel) acc += nll[static_cast<size_t>(i)];
    total += acc / static_cast<double>(sel.size());
  }
  return make_result(Tensor::scalar(total / static_cast<double>(B)), {logits},
                     [logits, labels, chosen, prob = std::move(prob), B, HW, K](const Tensor& g) {
                       Tensor gx(logits.shape());
                       for (int64_t b = 0; b < B; ++b) {
                         const auto& sel = chosen[static_cast<size_t>(b)];
                         if (sel.empty()) continue;
                         const double w = g.item() / static_cast<double>(B) / static_cast<double>(sel.size());
                         for (int64_t i : sel) {
                           const int32_t y = labels[static_cast<size_t>(b)].data[static_cast<size_t>(i)];
                           const double* p = prob.ptr() + (b * HW + i) * K;
                           double* d = gx.ptr() + (b * HW + i) * K;
                           for (int64_t k = 0; k < K; ++k) d[k] = w * (p[k] - (k == y ? 1.0 : 0.0));
                         }
                       }
                       logits.accumulate_grad(std::move(gx));
                     });
}

}  // namespace

Var ohem_cross_entropy(const Var& logits, const std::vector<LabelMap>& labels, const OhemConfig& cfg) {
  if (cfg.min_kept < 1) throw ConfigError("training.ohem.min_kept", "must be resolved to at least 1");
  return selected_cross_entropy(
      logits, labels, cfg.ignore_index,
      [&](const std::vector<int64_t>& valid, const std::vector<double>& true_prob, const std::vector<double>& nll) {
        // Valid pixels from highest to lowest loss; ties keep pixel order.
        std::vector<int64_t> order = valid;
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
          return nll[static_cast<size_t>(a)] > nll[static_cast<size_t>(b)];
        });
        std::vector<int64_t> sel;
        for (size_t r = 0; r < order.size(); ++r) {
          const int64_t i = order[r];
          if (static_cast<int64_t>(r) < cfg.min_kept || true_prob[static_cast<size_t>(i)] < cfg.prob_threshold)
            sel.push_back(i);
        }
        return sel;
      });
}

Var mean_cross_entropy(const Var& logits, const std::vector<LabelMap>& labels, int64_t ignore_index) {
  return selected_cross_entropy(logits, labels, ignore_index,
                                [](const std::vector<int64_t>& valid, const std::vector<double>&,
                                   const std::vector<double>&) { return valid; });
}

}  // namespace mmsam
