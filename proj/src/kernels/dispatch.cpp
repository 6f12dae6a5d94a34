#include <omp.h>

#include <algorithm>

#include "mmsam/error.hpp"
#include "mmsam/kernels/kernels.hpp"

namespace mmsam::kernels {

namespace {
Backend g_backend = Backend::parallel;
}

Backend backend() noexcept { return g_backend; }
void set_backend(Backend b) noexcept { g_backend = b; }
int max_threads() noexcept { return omp_get_max_threads(); }

void set_num_threads(int n) {
  if (n < 1) throw ArgumentError("thread count must be >= 1");
  omp_set_num_threads(n);
}

ConvGeom ConvGeom::make(int64_t batch, int64_t in_h, int64_t in_w, int64_t in_c, int64_t out_c, int64_t kernel,
                        int64_t stride, int64_t pad, int64_t groups) {
  if (groups < 1 || in_c % groups != 0 || out_c % groups != 0)
    throw ArgumentError("conv groups must divide input and output channels");
  if (stride < 1 || kernel < 1 || pad < 0) throw ArgumentError("invalid conv kernel/stride/pad");
  ConvGeom g;
  g.batch = batch;
  g.in_h = in_h;
  g.in_w = in_w;
  g.in_c = in_c;
  g.out_c = out_c;
  g.kernel_h = g.kernel_w = kernel;
  g.stride = stride;
  g.pad = pad;
  g.groups = groups;
  g.out_h = (in_h + 2 * pad - kernel) / stride + 1;
  g.out_w = (in_w + 2 * pad - kernel) / stride + 1;
  if (in_h + 2 * pad < kernel || in_w + 2 * pad < kernel) throw ArgumentError("conv input smaller than kernel");
  return g;
}

#define MMSAM_DISPATCH(name, params, args)                 \
  void name params {                                        \
    if (g_backend == Backend::serial) return serial::name args; \
    return parallel::name args;                             \
  }

MMSAM_DISPATCH(gemm_nt, (int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool acc),
               (m, n, k, a, b, c, acc))
MMSAM_DISPATCH(gemm_nn, (int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool acc),
               (m, n, k, a, b, c, acc))
MMSAM_DISPATCH(gemm_tn, (int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c, bool acc),
               (m, n, k, a, b, c, acc))
MMSAM_DISPATCH(conv2d_forward, (const ConvGeom& g, const double* x, const double* w, const double* bias, double* y),
               (g, x, w, bias, y))
MMSAM_DISPATCH(conv2d_backward_input, (const ConvGeom& g, const double* dy, const double* w, double* dx),
               (g, dy, w, dx))
MMSAM_DISPATCH(conv2d_backward_weight,
               (const ConvGeom& g, const double* x, const double* dy, double* dw, double* dbias),
               (g, x, dy, dw, dbias))
MMSAM_DISPATCH(attention_forward,
               (const AttnGeom& g, const double* q, const double* k, const double* v, const double* bias, double* out,
                double* probs),
               (g, q, k, v, bias, out, probs))
MMSAM_DISPATCH(attention_backward,
               (const AttnGeom& g, const double* q, const double* k, const double* v, const double* probs,
                const double* dout, double* dq, double* dk, double* dv, double* dbias),
               (g, q, k, v, probs, dout, dq, dk, dv, dbias))

#undef MMSAM_DISPATCH

}  // namespace mmsam::kernels
