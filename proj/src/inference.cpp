#include "mmsam/inference.hpp"

#include "mmsam/augment.hpp"
#include "mmsam/error.hpp"

namespace mmsam {

void NormConfig::validate() const {
  for (double s : rgb_std)
    if (!(s > 0.0)) throw ConfigError("data.rgb_std", "must be positive");
  if (!(aux_max > aux_min)) throw ConfigError("data.aux_range", "max must exceed min");
  if (!(aux_std > 0.0)) throw ConfigError("data.aux_std", "must be positive");
}

std::pair<Var, Var> make_batch(const std::vector<const SampleRecord*>& samples, const NormConfig& norm) {
  if (samples.empty()) throw ArgumentError("empty batch");
  const int64_t B = static_cast<int64_t>(samples.size());
  const int64_t H = samples[0]->height(), W = samples[0]->width(), C = samples[0]->aux.dim(2);
  Tensor rgb({B, H, W, 3}), aux({B, H, W, C});
  for (int64_t b = 0; b < B; ++b) {
    const SampleRecord& s = *samples[static_cast<size_t>(b)];
    if (s.height() != H || s.width() != W || s.aux.dim(2) != C)
      throw ArgumentError("batch samples must share size and aux channels");
    for (int64_t p = 0; p < H * W; ++p) {
      for (int c = 0; c < 3; ++c)
        rgb[(b * H * W + p) * 3 + c] = (s.rgb[p * 3 + c] - norm.rgb_mean[c]) / norm.rgb_std[c];
      for (int64_t c = 0; c < C; ++c) {
        const double unit = (s.aux[p * C + c] - norm.aux_min) / (norm.aux_max - norm.aux_min);
        aux[(b * H * W + p) * C + c] = (unit - norm.aux_mean) / norm.aux_std;
      }
    }
  }
  return {Var(std::move(rgb)), Var(std::move(aux))};
}

LabelMap predict_labels(MMSamModel& model, const SampleRecord& sample, const NormConfig& norm) {
  NoGradGuard no_grad;
  const int64_t S = model.config().backbone.image_size;
  SampleRecord resized;
  const SampleRecord* input = &sample;
  if (sample.height() != S || sample.width() != S) {
    resized.rgb = resize_raster(sample.rgb, S, S);
    resized.aux = resize_raster(sample.aux, S, S);
    resized.label = LabelMap(S, S);
    input = &resized;
  }
  const auto [rgb, aux] = make_batch({input}, norm);
  const bool was_training = model.training();
  model.set_training(false);
  Var logits = model.forward(rgb, aux);
  model.set_training(was_training);
  if (sample.height() != S || sample.width() != S) logits = resize_bilinear(logits, sample.height(), sample.width());
  const Tensor& z = logits.value();
  const int64_t K = z.dim(3);
  LabelMap out(sample.height(), sample.width());
  for (int64_t p = 0; p < out.height * out.width; ++p) {
    const double* row = z.ptr() + p * K;
    out.data[static_cast<size_t>(p)] = static_cast<int32_t>(std::max_element(row, row + K) - row);
  }
  return out;
}

}  // namespace mmsam
