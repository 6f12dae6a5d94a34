// Reference kernels: direct loops, no blocking, no threading.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "mmsam/kernels/kernels.hpp"

namespace mmsam::kernels::serial {

void gemm_nt(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool accumulate) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool accumulate) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void gemm_tn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool accumulate) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y) {
  const int64_t cig = g.in_per_group(), cog = g.out_per_group();
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t oy = 0; oy < g.out_h; ++oy)
      for (int64_t ox = 0; ox < g.out_w; ++ox)
        for (int64_t co = 0; co < g.out_c; ++co) {
          const int64_t grp = co / cog;
          double s = bias ? bias[co] : 0.0;
          for (int64_t ky = 0; ky < g.kernel_h; ++ky)
            for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
              const int64_t iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              for (int64_t cl = 0; cl < cig; ++cl) {
                const int64_t ci = grp * cig + cl;
                s += x[((b * g.in_h + iy) * g.in_w + ix) * g.in_c + ci] *
                     w[((ky * g.kernel_w + kx) * cig + cl) * g.out_c + co];
              }
            }
          y[((b * g.out_h + oy) * g.out_w + ox) * g.out_c + co] = s;
        }
}

void conv2d_backward_input(const ConvGeom& g, const double* dy, const double* w, double* dx) {
  const int64_t cig = g.in_per_group(), cog = g.out_per_group();
  std::fill(dx, dx + g.batch * g.in_h * g.in_w * g.in_c, 0.0);
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t oy = 0; oy < g.out_h; ++oy)
      for (int64_t ox = 0; ox < g.out_w; ++ox)
        for (int64_t co = 0; co < g.out_c; ++co) {
          const int64_t grp = co / cog;
          const double d = dy[((b * g.out_h + oy) * g.out_w + ox) * g.out_c + co];
          for (int64_t ky = 0; ky < g.kernel_h; ++ky)
            for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
              const int64_t iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              for (int64_t cl = 0; cl < cig; ++cl) {
                const int64_t ci = grp * cig + cl;
                dx[((b * g.in_h + iy) * g.in_w + ix) * g.in_c + ci] +=
                    d * w[((ky * g.kernel_w + kx) * cig + cl) * g.out_c + co];
              }
            }
        }
}

void conv2d_backward_weight(const ConvGeom& g, const double* x, const double* dy, double* dw, double* dbias) {
  const int64_t cig = g.in_per_group(), cog = g.out_per_group();
  std::fill(dw, dw + g.kernel_h * g.kernel_w * cig * g.out_c, 0.0);
  if (dbias) std::fill(dbias, dbias + g.out_c, 0.0);
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t oy = 0; oy < g.out_h; ++oy)
      for (int64_t ox = 0; ox < g.out_w; ++ox)
        for (int64_t co = 0; co < g.out_c; ++co) {
          const int64_t grp = co / cog;
          const double d = dy[((b * g.out_h + oy) * g.out_w + ox) * g.out_c + co];
          if (dbias) dbias[co] += d;
          for (int64_t ky = 0; ky < g.kernel_h; ++ky)
            for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
              const int64_t iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              for (int64_t cl = 0; cl < cig; ++cl) {
                const int64_t ci = grp * cig + cl;
                dw[((ky * g.kernel_w + kx) * cig + cl) * g.out_c + co] +=
                    d * x[((b * g.in_h + iy) * g.in_w + ix) * g.in_c + ci];
              }
            }
        }
}

void attention_forward(const AttnGeom& g, const double* q, const double* k, const double* v, const double* bias,
                       double* out, double* probs) {
  const int64_t width = g.width();
  std::vector<double> row(static_cast<size_t>(g.kv_len));
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t h = 0; h < g.heads; ++h)
      for (int64_t i = 0; i < g.q_len; ++i) {
        const double* qi = q + (b * g.q_len + i) * width + h * g.head_dim;
        double mx = -INFINITY;
        for (int64_t j = 0; j < g.kv_len; ++j) {
          const double* kj = k + (b * g.kv_len + j) * width + h * g.head_dim;
          double s = 0.0;
          for (int64_t d = 0; d < g.head_dim; ++d) s += qi[d] * kj[d];
          row[j] = s * g.scale;
          if (bias) row[j] += bias[((b * g.heads + h) * g.q_len + i) * g.kv_len + j];
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (int64_t j = 0; j < g.kv_len; ++j) z += (row[j] = std::exp(row[j] - mx));
        double* p = probs + ((b * g.heads + h) * g.q_len + i) * g.kv_len;
        for (int64_t j = 0; j < g.kv_len; ++j) p[j] = row[j] / z;
        double* o = out + (b * g.q_len + i) * width + h * g.head_dim;
        for (int64_t d = 0; d < g.head_dim; ++d) {
          double s = 0.0;
          for (int64_t j = 0; j < g.kv_len; ++j) s += p[j] * v[(b * g.kv_len + j) * width + h * g.head_dim + d];
          o[d] = s;
        }
      }
}

void attention_backward(const AttnGeom& g, const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk, double* dv, double* dbias) {
  const int64_t width = g.width();
  std::fill(dq, dq + g.batch * g.q_len * width, 0.0);
  std::fill(dk, dk + g.batch * g.kv_len * width, 0.0);
  std::fill(dv, dv + g.batch * g.kv_len * width, 0.0);
  std::vector<double> dp(static_cast<size_t>(g.kv_len));
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t h = 0; h < g.heads; ++h)
      for (int64_t i = 0; i < g.q_len; ++i) {
        const double* p = probs + ((b * g.heads + h) * g.q_len + i) * g.kv_len;
        const double* go = dout + (b * g.q_len + i) * width + h * g.head_dim;
        double dot = 0.0;
        for (int64_t j = 0; j < g.kv_len; ++j) {
          const double* vj = v + (b * g.kv_len + j) * width + h * g.head_dim;
          double* dvj = dv + (b * g.kv_len + j) * width + h * g.head_dim;
          double s = 0.0;
          for (int64_t d = 0; d < g.head_dim; ++d) {
            s += go[d] * vj[d];
            dvj[d] += p[j] * go[d];
          }
          dp[j] = s;
          dot += s * p[j];
        }
        const double* qi = q + (b * g.q_len + i) * width + h * g.head_dim;
        double* dqi = dq + (b * g.q_len + i) * width + h * g.head_dim;
        for (int64_t j = 0; j < g.kv_len; ++j) {
          const double raw = p[j] * (dp[j] - dot);
          if (dbias) dbias[((b * g.heads + h) * g.q_len + i) * g.kv_len + j] = raw;
          const double ds = raw * g.scale;
          const double* kj = k + (b * g.kv_len + j) * width + h * g.head_dim;
          double* dkj = dk + (b * g.kv_len + j) * width + h * g.head_dim;
          for (int64_t d = 0; d < g.head_dim; ++d) {
            dqi[d] += ds * kj[d];
            dkj[d] += ds * qi[d];
          }
        }
      }
}

}  // namespace mmsam::kernels::serial
