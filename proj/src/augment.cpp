#include "mmsam/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "mmsam/error.hpp"

namespace mmsam {

void AugmentConfig::validate() const {
  if (!(resize_low > 0.0 && resize_low < resize_high))
    throw ConfigError("training.augment.resize_range", "needs 0 < low < high");
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ConfigError("training.augment.hflip_prob", "must be in [0, 1]");
  if (!(blur_prob >= 0.0 && blur_prob <= 1.0)) throw ConfigError("training.augment.blur_prob", "must be in [0, 1]");
  if (crop_size < 1) throw ConfigError("training.augment.crop_size", "must be positive");
}

uint64_t sample_seed(uint64_t global_seed, int64_t epoch, int64_t index) {
  uint64_t z = global_seed;
  for (uint64_t v : {static_cast<uint64_t>(epoch), static_cast<uint64_t>(index)}) {
    z += 0x9E3779B97F4A7C15ULL + v * 0xD1B54A32D192ED03ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
  }
  return z;
}

Tensor resize_raster(const Tensor& image, int64_t out_h, int64_t out_w) {
  const int64_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  if (H == out_h && W == out_w) return image;
  Tensor out({out_h, out_w, C});
  const double sy = static_cast<double>(H) / out_h, sx = static_cast<double>(W) / out_w;
  for (int64_t y = 0; y < out_h; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(fy), H - 1), y1 = std::min<int64_t>(y0 + 1, H - 1);
    const double ty = fy - y0;
    for (int64_t x = 0; x < out_w; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(fx), W - 1), x1 = std::min<int64_t>(x0 + 1, W - 1);
      const double tx = fx - x0;
      for (int64_t c = 0; c < C; ++c) {
        const double a = image[(y0 * W + x0) * C + c], b = image[(y0 * W + x1) * C + c];
        const double d = image[(y1 * W + x0) * C + c], e = image[(y1 * W + x1) * C + c];
        out[(y * out_w + x) * C + c] = (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * d + tx * e);
      }
    }
  }
  return out;
}

LabelMap resize_labels_nearest(const LabelMap& labels, int64_t out_h, int64_t out_w) {
  if (labels.height == out_h && labels.width == out_w) return labels;
  LabelMap out(out_h, out_w);
  for (int64_t y = 0; y < out_h; ++y) {
    const int64_t sy = std::min<int64_t>(labels.height - 1, (2 * y + 1) * labels.height / (2 * out_h));
    for (int64_t x = 0; x < out_w; ++x) {
      const int64_t sx = std::min<int64_t>(labels.width - 1, (2 * x + 1) * labels.width / (2 * out_w));
      out.at(y, x) = labels.at(sy, sx);
    }
  }
  return out;
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0;
  if (d == 0) {
    h = 0;
  } else if (mx == r) {
    h = 60.0 * std::fmod((g - b) / d + 6.0, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / d + 2.0);
  } else {
    h = 60.0 * ((r - g) / d + 4.0);
  }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1)), m = v - c;
  double rr, gg, bb;
  switch (static_cast<int>(h / 60.0)) {
    case 0: rr = c, gg = x, bb = 0; break;
    case 1: rr = x, gg = c, bb = 0; break;
    case 2: rr = 0, gg = c, bb = x; break;
    case 3: rr = 0, gg = x, bb = c; break;
    case 4: rr = x, gg = 0, bb = c; break;
    default: rr = c, gg = 0, bb = x; break;
  }
  r = rr + m, g = gg + m, b = bb + m;
}

void photometric(Tensor& rgb, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto coin = [&] { return u(rng) < 0.5; };
  auto clamp_all = [&] {
    for (double& v : rgb.data()) v = std::clamp(v, 0.0, 255.0);
  };
  if (coin()) {
    const double delta = -32.0 + 64.0 * u(rng);
    for (double& v : rgb.data()) v += delta;
    clamp_all();
  }
  const bool contrast_first = coin();
  auto contrast = [&] {
    if (!coin()) return;
    const double alpha = 0.5 + u(rng);
    for (double& v : rgb.data()) v *= alpha;
    clamp_all();
  };
  if (contrast_first) contrast();
  const bool do_sat = coin();
  const double sat = 0.5 + u(rng);
  const bool do_hue = coin();
  const double hue = -18.0 + 36.0 * u(rng);
  if (do_sat || do_hue) {
    for (int64_t p = 0; p < rgb.numel() / 3; ++p) {
      double h, s, v;
      rgb_to_hsv(rgb[3 * p], rgb[3 * p + 1], rgb[3 * p + 2], h, s, v);
      if (do_sat) s = std::clamp(s * sat, 0.0, 1.0);
      if (do_hue) h += hue;
      hsv_to_rgb(h, s, v, rgb[3 * p], rgb[3 * p + 1], rgb[3 * p + 2]);
    }
    clamp_all();
  }
  if (!contrast_first) contrast();
}

int64_t reflect101(int64_t i, int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

void gaussian_blur(Tensor& rgb, double sigma) {
  std::array<double, 5> k{};
  double norm = 0.0;
  for (int i = 0; i < 5; ++i) norm += k[i] = std::exp(-0.5 * (i - 2) * (i - 2) / (sigma * sigma));
  for (double& v : k) v /= norm;
  const int64_t H = rgb.dim(0), W = rgb.dim(1);
  Tensor tmp(rgb.shape());
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int i = 0; i < 5; ++i) s += k[i] * rgb[(y * W + reflect101(x + i - 2, W)) * 3 + c];
        tmp[(y * W + x) * 3 + c] = s;
      }
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int i = 0; i < 5; ++i) s += k[i] * tmp[(reflect101(y + i - 2, H) * W + x) * 3 + c];
        rgb[(y * W + x) * 3 + c] = s;
      }
}

Tensor crop_pad(const Tensor& img, int64_t top, int64_t left, int64_t size, double fill) {
  const int64_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
  Tensor out({size, size, C}, fill);
  for (int64_t y = 0; y < size; ++y) {
    const int64_t sy = top + y;
    if (sy >= H) break;
    for (int64_t x = 0; x < size; ++x) {
      const int64_t sx = left + x;
      if (sx >= W) break;
      for (int64_t c = 0; c < C; ++c) out[(y * size + x) * C + c] = img[(sy * W + sx) * C + c];
    }
  }
  return out;
}

}  // namespace

SampleRecord augment(const SampleRecord& sample, const AugmentConfig& cfg, uint64_t seed, int64_t ignore_index) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SampleRecord out;
  out.id = sample.id;
  out.condition = sample.condition;

  const double ratio = cfg.resize_low + (cfg.resize_high - cfg.resize_low) * u(rng);
  const int64_t h = std::max<int64_t>(1, std::llround(sample.height() * ratio));
  const int64_t w = std::max<int64_t>(1, std::llround(sample.width() * ratio));
  Tensor rgb = resize_raster(sample.rgb, h, w);
  Tensor aux = resize_raster(sample.aux, h, w);
  LabelMap label = resize_labels_nearest(sample.label, h, w);

  // Pad to at least the crop size, then crop.
  const int64_t S = cfg.crop_size;
  const int64_t top = h > S ? static_cast<int64_t>(u(rng) * static_cast<double>(h - S + 1)) : 0;
  const int64_t left = w > S ? static_cast<int64_t>(u(rng) * static_cast<double>(w - S + 1)) : 0;
  if (top + S > std::max(h, S) || left + S > std::max(w, S)) throw InternalError("crop exceeds the padded image");
  rgb = crop_pad(rgb, top, left, S, 0.0);
  aux = crop_pad(aux, top, left, S, 0.0);
  LabelMap lab(S, S, static_cast<int32_t>(ignore_index));
  for (int64_t y = 0; y < S && top + y < h; ++y)
    for (int64_t x = 0; x < S && left + x < w; ++x) lab.at(y, x) = label.at(top + y, left + x);

  if (u(rng) < cfg.hflip_prob) {
    auto flip = [S](Tensor& t) {
      const int64_t C = t.dim(2);
      for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S / 2; ++x)
          for (int64_t c = 0; c < C; ++c) std::swap(t[(y * S + x) * C + c], t[(y * S + S - 1 - x) * C + c]);
    };
    flip(rgb);
    flip(aux);
    for (int64_t y = 0; y < S; ++y) std::reverse(lab.data.begin() + y * S, lab.data.begin() + (y + 1) * S);
  }
  if (cfg.photometric) photometric(rgb, rng);
  if (u(rng) < cfg.blur_prob) gaussian_blur(rgb, 0.1 + 1.9 * u(rng));

  out.rgb = std::move(rgb);
  out.aux = std::move(aux);
  out.label = std::move(lab);
  return out;
}

}  // namespace mmsam
