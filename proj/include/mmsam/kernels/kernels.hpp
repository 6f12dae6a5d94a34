#pragma once

// Hot loops of the network. Every kernel exists twice: a plain serial
// reference in `serial::` (kept simple so tests can trust it) and an
// OpenMP version in `parallel::`. The unqualified functions in `kernels::`
// dispatch on the active backend.

#include <cstdint>
#include <span>
#include <vector>

namespace mmsam::kernels {

enum class Backend { serial, parallel };

Backend backend() noexcept;
void set_backend(Backend b) noexcept;
int max_threads() noexcept;
void set_num_threads(int n);

class BackendGuard {
 public:
  explicit BackendGuard(Backend b) : previous_(backend()) { set_backend(b); }
  ~BackendGuard() { set_backend(previous_); }
  BackendGuard(const BackendGuard&) = delete;
  BackendGuard& operator=(const BackendGuard&) = delete;

 private:
  Backend previous_;
};

/// Convolution geometry, NHWC activations and HWIO weights
/// (kh, kw, cin / groups, cout).
struct ConvGeom {
  int64_t batch = 1, in_h = 0, in_w = 0, in_c = 0;
  int64_t out_h = 0, out_w = 0, out_c = 0;
  int64_t kernel_h = 1, kernel_w = 1, stride = 1, pad = 0, groups = 1;

  static ConvGeom make(int64_t batch, int64_t in_h, int64_t in_w, int64_t in_c, int64_t out_c, int64_t kernel,
                       int64_t stride, int64_t pad, int64_t groups);
  int64_t in_per_group() const { return in_c / groups; }
  int64_t out_per_group() const { return out_c / groups; }
};

struct AttnGeom {
  int64_t batch = 1, heads = 1, q_len = 0, kv_len = 0, head_dim = 0;
  double scale = 1.0;
  int64_t width() const { return heads * head_dim; }
};

#define MMSAM_KERNEL_DECLS                                                                                         \
  /* C (+)= A * B^T with A (m x k), B (n x k). */                                                                  \
  void gemm_nt(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool accumulate);     \
  /* C (+)= A * B with A (m x k), B (k x n). */                                                                    \
  void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool accumulate);     \
  /* C (+)= A^T * B with A (k x m), B (k x n). */                                                                  \
  void gemm_tn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool accumulate);     \
  void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y);          \
  /* dx is overwritten. */                                                                                         \
  void conv2d_backward_input(const ConvGeom& g, const double* dy, const double* w, double* dx);                    \
  /* dw and dbias are overwritten; dbias may be null. */                                                           \
  void conv2d_backward_weight(const ConvGeom& g, const double* x, const double* dy, double* dw, double* dbias);      \
  /* q (B, Tq, heads*dh), k/v (B, Tk, heads*dh); optional additive logit bias (B, heads, Tq, Tk);        */      \
  /* probs (B, heads, Tq, Tk) is written for backward.                                                   */      \
  void attention_forward(const AttnGeom& g, const double* q, const double* k, const double* v,                     \
                         const double* bias, double* out, double* probs);                                          \
  /* dq, dk, dv and (if non-null) dbias are overwritten. */                                                        \
  void attention_backward(const AttnGeom& g, const double* q, const double* k, const double* v,                    \
                          const double* probs, const double* dout, double* dq, double* dk, double* dv,             \
                          double* dbias);

namespace serial {
MMSAM_KERNEL_DECLS
}
namespace parallel {
MMSAM_KERNEL_DECLS
}
MMSAM_KERNEL_DECLS

#undef MMSAM_KERNEL_DECLS

}  // namespace mmsam::kernels
