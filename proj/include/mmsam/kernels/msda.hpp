#pragma once

// Multi-scale deformable attention sampling core.
//
// value     (B, Tk, heads, head_dim)   levels stacked row-wise at level_start
// locations (B, Tq, heads, L, P, 2)    normalized (x, y); pixel = loc * size - 0.5
// weights   (B, Tq, heads, L, P)       already softmax-normalized
// out       (B, Tq, heads, head_dim)
//
// Bilinear sampling with zero padding outside the map. Instantiated for
// float and double.

#include <cstdint>
#include <vector>

namespace mmsam::kernels {

struct MsdaGeom {
  int64_t batch = 1, q_len = 0, kv_len = 0, heads = 1, head_dim = 0, points = 1;
  std::vector<int64_t> level_h, level_w, level_start;
  int64_t levels() const { return static_cast<int64_t>(level_h.size()); }
};

namespace serial {
template <typename T>
void msda_forward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, T* out);
/// Gradients are overwritten.
template <typename T>
void msda_backward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, const T* dout, T* dvalue,
                   T* dlocations, T* dweights);
}  // namespace serial

namespace parallel {
template <typename T>
void msda_forward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, T* out);
template <typename T>
void msda_backward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, const T* dout, T* dvalue,
                   T* dlocations, T* dweights);
}  // namespace parallel

template <typename T>
void msda_forward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, T* out);
template <typename T>
void msda_backward(const MsdaGeom& g, const T* value, const T* locations, const T* weights, const T* dout, T* dvalue,
                   T* dlocations, T* dweights);

}  // namespace mmsam::kernels
