// OpenMP kernels. Work is split over output rows so every thread owns a
// disjoint slice of the result; no atomics, results do not depend on the
// thread count.

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "mmsam/kernels/kernels.hpp"

namespace mmsam::kernels::parallel {

void gemm_nt(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      int64_t p = 0;
      for (; p + 3 < k; p += 4) {
        s0 += ai[p] * bj[p];
        s1 += ai[p + 1] * bj[p + 1];
        s2 += ai[p + 2] * bj[p + 2];
        s3 += ai[p + 3] * bj[p + 3];
      }
      for (; p < k; ++p) s0 += ai[p] * bj[p];
      const double s = (s0 + s1) + (s2 + s3);
      ci[j] = accumulate ? ci[j] + s : s;
    }
  }
}

void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_tn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

namespace {

bool is_depthwise(const ConvGeom& g) { return g.groups == g.in_c && g.groups == g.out_c; }

}  // namespace

void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y) {
  const int64_t cig = g.in_per_group(), cog = g.out_per_group();
  const bool dw = is_depthwise(g);
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < g.batch * g.out_h; ++row) {
    const int64_t b = row / g.out_h, oy = row % g.out_h;
    for (int64_t ox = 0; ox < g.out_w; ++ox) {
      double* yo = y + ((b * g.out_h + oy) * g.out_w + ox) * g.out_c;
      if (bias)
        std::copy(bias, bias + g.out_c, yo);
      else
        std::fill(yo, yo + g.out_c, 0.0);
      for (int64_t ky = 0; ky < g.kernel_h; ++ky) {
        const int64_t iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.in_h) continue;
        for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
          const int64_t ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.in_w) continue;
          const double* xi = x + ((b * g.in_h + iy) * g.in_w + ix) * g.in_c;
          const double* wk = w + (ky * g.kernel_w + kx) * cig * g.out_c;
          if (dw) {
            for (int64_t c = 0; c < g.out_c; ++c) yo[c] += xi[c] * wk[c];
            continue;
          }
          for (int64_t grp = 0; grp < g.groups; ++grp)
            for (int64_t cl = 0; cl < cig; ++cl) {
              const double xv = xi[grp * cig + cl];
              const double* wr = wk + cl * g.out_c + grp * cog;
              double* yg = yo + grp * cog;
              for (int64_t co = 0; co < cog; ++co) yg[co] += xv * wr[co];
            }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeom& g, const double* dy, const double* w, double* dx) {
  const int64_t cig = g.in_per_group(), cog = g.out_per_group();
  const bool dw = is_depthwise(g);
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < g.batch * g.in_h; ++row) {
    const int64_t b = row / g.in_h, iy = row % g.in_h;
    for (int64_t ix = 0; ix < g.in_w; ++ix) {
      double* dxi = dx + ((b * g.in_h + iy) * g.in_w + ix) * g.in_c;
      std::fill(dxi, dxi + g.in_c, 0.0);
      for (int64_t ky = 0; ky < g.kernel_h; ++ky) {
        const int64_t ty = iy + g.pad - ky;
        if (ty < 0 || ty % g.stride != 0) continue;
        const int64_t oy = ty / g.stride;
        if (oy >= g.out_h) continue;
        for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
          const int64_t tx = ix + g.pad - kx;
          if (tx < 0 || tx % g.stride != 0) continue;
          const int64_t ox = tx / g.stride;
          if (ox >= g.out_w) continue;
          const double* dyo = dy + ((b * g.out_h + oy) * g.out_w + ox) * g.out_c;
          const double* wk = w + (ky * g.kernel_w + kx) * cig * g.out_c;
          if (dw) {
            for (int64_t c = 0; c < g.in_c; ++c) dxi[c] += dyo[c] * wk[c];
            continue;
          }
          for (int64_t grp = 0; grp < g.groups; ++grp)
            for (int64_t cl = 0; cl < cig; ++cl) {
              const double* wr = wk + cl * g.out_c + grp * cog;
              const double* dg = dyo + grp * cog;
              double s = 0.0;
              for (int64_t co = 0; co < cog; ++co) s += dg[co] * wr[co];
              dxi[grp * cig + cl] += s;
            }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeom& g, const double* x, const double* dy, double* dw, double* dbias) {
  const int64_t cig = g.in_per_group(), cog = g.out_per_group();
  const bool depthwise = is_depthwise(g);
  const int64_t taps = g.kernel_h * g.kernel_w;
#pragma omp parallel for schedule(static)
  for (int64_t tap = 0; tap < taps; ++tap) {
    const int64_t ky = tap / g.kernel_w, kx = tap % g.kernel_w;
    double* wk = dw + tap * cig * g.out_c;
    std::fill(wk, wk + cig * g.out_c, 0.0);
    for (int64_t b = 0; b < g.batch; ++b)
      for (int64_t oy = 0; oy < g.out_h; ++oy) {
        const int64_t iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.in_h) continue;
        for (int64_t ox = 0; ox < g.out_w; ++ox) {
          const int64_t ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.in_w) continue;
          const double* xi = x + ((b * g.in_h + iy) * g.in_w + ix) * g.in_c;
          const double* dyo = dy + ((b * g.out_h + oy) * g.out_w + ox) * g.out_c;
          if (depthwise) {
            for (int64_t c = 0; c < g.out_c; ++c) wk[c] += xi[c] * dyo[c];
            continue;
          }
          for (int64_t grp = 0; grp < g.groups; ++grp)
            for (int64_t cl = 0; cl < cig; ++cl) {
              const double xv = xi[grp * cig + cl];
              if (xv == 0.0) continue;
              double* wr = wk + cl * g.out_c + grp * cog;
              const double* dg = dyo + grp * cog;
              for (int64_t co = 0; co < cog; ++co) wr[co] += xv * dg[co];
            }
        }
      }
  }
  if (dbias) {
    std::fill(dbias, dbias + g.out_c, 0.0);
    const int64_t rows = g.batch * g.out_h * g.out_w;
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < g.out_c; ++c) dbias[c] += dy[r * g.out_c + c];
  }
}

void attention_forward(const AttnGeom& g, const double* q, const double* k, const double* v, const double* bias,
                       double* out, double* probs) {
  const int64_t width = g.width();
#pragma omp parallel
  {
    std::vector<double> acc(static_cast<size_t>(g.head_dim));
#pragma omp for schedule(static) collapse(2)
    for (int64_t b = 0; b < g.batch; ++b)
      for (int64_t h = 0; h < g.heads; ++h) {
        for (int64_t i = 0; i < g.q_len; ++i) {
          const double* qi = q + (b * g.q_len + i) * width + h * g.head_dim;
          double* p = probs + ((b * g.heads + h) * g.q_len + i) * g.kv_len;
          double mx = -INFINITY;
          for (int64_t j = 0; j < g.kv_len; ++j) {
            const double* kj = k + (b * g.kv_len + j) * width + h * g.head_dim;
            double s = 0.0;
            for (int64_t d = 0; d < g.head_dim; ++d) s += qi[d] * kj[d];
            p[j] = s * g.scale;
            if (bias) p[j] += bias[((b * g.heads + h) * g.q_len + i) * g.kv_len + j];
            mx = std::max(mx, p[j]);
          }
          double z = 0.0;
          for (int64_t j = 0; j < g.kv_len; ++j) z += (p[j] = std::exp(p[j] - mx));
          const double inv = 1.0 / z;
          std::fill(acc.begin(), acc.end(), 0.0);
          for (int64_t j = 0; j < g.kv_len; ++j) {
            p[j] *= inv;
            const double* vj = v + (b * g.kv_len + j) * width + h * g.head_dim;
            for (int64_t d = 0; d < g.head_dim; ++d) acc[d] += p[j] * vj[d];
          }
          std::copy(acc.begin(), acc.end(), out + (b * g.q_len + i) * width + h * g.head_dim);
        }
      }
  }
}

void attention_backward(const AttnGeom& g, const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk, double* dv, double* dbias) {
  const int64_t width = g.width();
  std::fill(dq, dq + g.batch * g.q_len * width, 0.0);
  std::fill(dk, dk + g.batch * g.kv_len * width, 0.0);
  std::fill(dv, dv + g.batch * g.kv_len * width, 0.0);
#pragma omp parallel
  {
    std::vector<double> dp(static_cast<size_t>(g.kv_len));
#pragma omp for schedule(static) collapse(2)
    for (int64_t b = 0; b < g.batch; ++b)
      for (int64_t h = 0; h < g.heads; ++h) {
        for (int64_t i = 0; i < g.q_len; ++i) {
          const double* p = probs + ((b * g.heads + h) * g.q_len + i) * g.kv_len;
          const double* go = dout + (b * g.q_len + i) * width + h * g.head_dim;
          double dot = 0.0;
          for (int64_t j = 0; j < g.kv_len; ++j) {
            const double* vj = v + (b * g.kv_len + j) * width + h * g.head_dim;
            double* dvj = dv + (b * g.kv_len + j) * width + h * g.head_dim;
            double s = 0.0;
            const double pj = p[j];
            for (int64_t d = 0; d < g.head_dim; ++d) {
              s += go[d] * vj[d];
              dvj[d] += pj * go[d];
            }
            dp[j] = s;
            dot += s * pj;
          }
          const double* qi = q + (b * g.q_len + i) * width + h * g.head_dim;
          double* dqi = dq + (b * g.q_len + i) * width + h * g.head_dim;
          for (int64_t j = 0; j < g.kv_len; ++j) {
            const double raw = p[j] * (dp[j] - dot);
            if (dbias) dbias[((b * g.heads + h) * g.q_len + i) * g.kv_len + j] = raw;
            const double ds = raw * g.scale;
            if (ds == 0.0) continue;
            const double* kj = k + (b * g.kv_len + j) * width + h * g.head_dim;
            double* dkj = dk + (b * g.kv_len + j) * width + h * g.head_dim;
            for (int64_t d = 0; d < g.head_dim; ++d) {
              dqi[d] += ds * kj[d];
              dkj[d] += ds * qi[d];
            }
          }
        }
      }
  }
}

}  // namespace mmsam::kernels::parallel
