#include "mmsam/kernels/msda.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

#include "mmsam/kernels/kernels.hpp"

namespace mmsam::kernels {

namespace {

// Corner indices and weights of one bilinear tap; index -1 marks a corner
// that falls outside the map.
template <typename T>
struct Tap {
  int64_t idx[4];
  T w[4];
  // d(sample)/d(pixel y) and d(sample)/d(pixel x) factors per corner.
  T dy[4];
  T dx[4];
  bool valid;
};

template <typename T>
Tap<T> make_tap(T loc_x, T loc_y, int64_t h, int64_t w) {
  Tap<T> t{};
  const T py = loc_y * static_cast<T>(h) - T(0.5);
  const T px = loc_x * static_cast<T>(w) - T(0.5);
  t.valid = py > T(-1) && px > T(-1) && py < static_cast<T>(h) && px < static_cast<T>(w);
  if (!t.valid) return t;
  const int64_t y0 = static_cast<int64_t>(std::floor(py)), x0 = static_cast<int64_t>(std::floor(px));
  const int64_t y1 = y0 + 1, x1 = x0 + 1;
  const T ly = py - static_cast<T>(y0), lx = px - static_cast<T>(x0);
  const T hy = T(1) - ly, hx = T(1) - lx;
  const bool in_y0 = y0 >= 0, in_y1 = y1 <= h - 1, in_x0 = x0 >= 0, in_x1 = x1 <= w - 1;
  t.idx[0] = (in_y0 && in_x0) ? y0 * w + x0 : -1;
  t.idx[1] = (in_y0 && in_x1) ? y0 * w + x1 : -1;
  t.idx[2] = (in_y1 && in_x0) ? y1 * w + x0 : -1;
  t.idx[3] = (in_y1 && in_x1) ? y1 * w + x1 : -1;
  t.w[0] = hy * hx;
  t.w[1] = hy * lx;
  t.w[2] = ly * hx;
  t.w[3] = ly * lx;
  t.dy[0] = -hx;
  t.dy[1] = -lx;
  t.dy[2] = hx;
  t.dy[3] = lx;
  t.dx[0] = -hy;
  t.dx[1] = hy;
  t.dx[2] = -ly;
  t.dx[3] = ly;
  return t;
}

template <typename T>
void forward_query(const MsdaGeom& g, const T* value, const T* locations, const T* weights, T* out, int64_t b,
                   int64_t q) {
  const int64_t L = g.levels(), P = g.points, D = g.head_dim, H = g.heads;
  for (int64_t h = 0; h < H; ++h) {
    T* o = out + ((b * g.q_len + q) * H + h) * D;
    std::fill(o, o + D, T(0));
    for (int64_t l = 0; l < L; ++l)
      for (int64_t p = 0; p < P; ++p) {
        const int64_t slot = (((b * g.q_len + q) * H + h) * L + l) * P + p;
        const Tap<T> t = make_tap(locations[2 * slot], locations[2 * slot + 1], g.level_h[l], g.level_w[l]);
        if (!t.valid) continue;
        const T a = weights[slot];
        for (int c = 0; c < 4; ++c) {
          if (t.idx[c] < 0) continue;
          const T* v = value + ((b * g.kv_len + g.level_start[l] + t.idx[c]) * H + h) * D;
          const T s = a * t.w[c];
          for (int64_t d = 0; d < D; ++d) o[d] += s * v[d];
        }
      }
  }
}

// Writes dlocations/dweights for query q and scatters into dvalue.
template <typename T>
void backward_query(const MsdaGeom& g, const T* value, const T* locations, const T* weights, const T* dout,
                    T* dvalue, T* dlocations, T* dweights, int64_t b, int64_t q) {
  const int64_t L = g.levels(), P = g.points, D = g.head_dim, H = g.heads;
  for (int64_t h = 0; h < H; ++h) {
    const T* go = dout + ((b * g.q_len + q) * H + h) * D;
    for (int64_t l = 0; l < L; ++l)
      for (int64_t p = 0; p < P; ++p) {
        const int64_t slot = (((b * g.q_len + q) * H + h) * L + l) * P + p;
        dlocations[2 * slot] = T(0);
        dlocations[2 * slot + 1] = T(0);
        dweights[slot] = T(0);
        const Tap<T> t = make_tap(locations[2 * slot], locations[2 * slot + 1], g.level_h[l], g.level_w[l]);
        if (!t.valid) continue;
        const T a = weights[slot];
        T gw = T(0), gy = T(0), gx = T(0);
        for (int c = 0; c < 4; ++c) {
          if (t.idx[c] < 0) continue;
          const int64_t row = ((b * g.kv_len + g.level_start[l] + t.idx[c]) * H + h) * D;
          const T* v = value + row;
          T* dv = dvalue + row;
          T dot = T(0);
          const T s = a * t.w[c];
          for (int64_t d = 0; d < D; ++d) {
            dot += go[d] * v[d];
            dv[d] += s * go[d];
          }
          gw += t.w[c] * dot;
          gy += t.dy[c] * dot;
          gx += t.dx[c] * dot;
        }
        dweights[slot] = gw;
        dlocations[2 * slot] = a * gx * static_cast<T>(g.level_w[l]);
        dlocations[2 * slot + 1] = a * gy * static_cast<T>(g.level_h[l]);
      }
  }
}

}  // namespace

namespace serial {

template <typename T>
void msda_forward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, T* out) {
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t q = 0; q < g.q_len; ++q) forward_query(g, value, locations, weights, out, b, q);
}

template <typename T>
void msda_backward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, const T* dout, T* dvalue,
                   T* dlocations, T* dweights) {
  std::fill(dvalue, dvalue + g.batch * g.kv_len * g.heads * g.head_dim, T(0));
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t q = 0; q < g.q_len; ++q)
      backward_query(g, value, locations, weights, dout, dvalue, dlocations, dweights, b, q);
}

}  // namespace serial

namespace parallel {

template <typename T>
void msda_forward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, T* out) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < g.batch * g.q_len; ++i)
    forward_query(g, value, locations, weights, out, i / g.q_len, i % g.q_len);
}

// The value gradient is a scatter; each thread accumulates into a private
// buffer and the buffers are summed in thread order.
template <typename T>
void msda_backward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, const T* dout, T* dvalue,
                   T* dlocations, T* dweights) {
  const int64_t vsize = g.batch * g.kv_len * g.heads * g.head_dim;
  std::fill(dvalue, dvalue + vsize, T(0));
  const int threads = omp_get_max_threads();
  if (threads == 1) {
    for (int64_t i = 0; i < g.batch * g.q_len; ++i)
      backward_query(g, value, locations, weights, dout, dvalue, dlocations, dweights, i / g.q_len, i % g.q_len);
    return;
  }
  std::vector<std::vector<T>> partial(static_cast<size_t>(threads));
#pragma omp parallel num_threads(threads)
  {
    const int tid = omp_get_thread_num();
    std::vector<T>& buf = partial[static_cast<size_t>(tid)];
    buf.assign(static_cast<size_t>(vsize), T(0));
#pragma omp for schedule(static)
    for (int64_t i = 0; i < g.batch * g.q_len; ++i)
      backward_query(g, value, locations, weights, dout, buf.data(), dlocations, dweights, i / g.q_len,
                     i % g.q_len);
  }
  for (const auto& buf : partial)
    if (!buf.empty())
      for (int64_t j = 0; j < vsize; ++j) dvalue[j] += buf[static_cast<size_t>(j)];
}

}  // namespace parallel

template <typename T>
void msda_forward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, T* out) {
  if (backend() == Backend::serial) return serial::msda_forward(g, value, locations, weights, out);
  return parallel::msda_forward(g, value, locations, weights, out);
}

template <typename T>
void msda_backward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, const T* dout, T* dvalue,
                   T* dlocations, T* dweights) {
  if (backend() == Backend::serial)
    return serial::msda_backward(g, value, locations, weights, dout, dvalue, dlocations, dweights);
  return parallel::msda_backward(g, value, locations, weights, dout, dvalue, dlocations, dweights);
}

#define MMSAM_INSTANTIATE(T)                                                                                        \
  template void serial::msda_forward<T>(const MsdaGeom&, const T*, const T*, const T*, T*);                        \
  template void serial::msda_backward<T>(const MsdaGeom&, const T*, const T*, const T*, const T*, T*, T*, T*);     \
  template void parallel::msda_forward<T>(const MsdaGeom&, const T*, const T*, const T*, T*);                      \
  template void parallel::msda_backward<T>(const MsdaGeom&, const T*, const T*, const T*, const T*, T*, T*, T*);   \
  template void msda_forward<T>(const MsdaGeom&, const T*, const T*, const T*, T*);                                \
  template void msda_backward<T>(const MsdaGeom&, const T*, const T*, const T*, const T*, T*, T*, T*);

MMSAM_INSTANTIATE(float)
MMSAM_INSTANTIATE(double)

#undef MMSAM_INSTANTIATE

}  // namespace mmsam::kernels
