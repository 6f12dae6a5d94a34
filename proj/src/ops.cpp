#include "mmsam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmsam/error.hpp"
#include "mmsam/kernels/kernels.hpp"

namespace mmsam {

namespace {

bool any_meta(std::initializer_list<const Var*> vars) {
  for (const Var* v : vars)
    if (v->defined() && v->is_meta()) return true;
  return false;
}

Var meta_result(Shape shape) { return Var(Tensor::meta(std::move(shape))); }

int64_t normalize_axis(int64_t axis, int64_t rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ArgumentError("axis out of range");
  return axis;
}

// Right-aligned broadcasting plan with per-operand strides (0 on
// broadcast axes).
struct Broadcast {
  Shape out;
  std::vector<int64_t> stride_a, stride_b;
};

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  Broadcast bc;
  bc.out.resize(r);
  for (size_t i = 0; i < r; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1)
      bc.out[i] = pa[i];
    else if (pa[i] == 1)
      bc.out[i] = pb[i];
    else
      throw ArgumentError("cannot broadcast " + to_string(a) + " with " + to_string(b));
  }
  auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
  for (size_t i = 0; i < r; ++i) {
    if (pa[i] == 1 && bc.out[i] != 1) sa[i] = 0;
    if (pb[i] == 1 && bc.out[i] != 1) sb[i] = 0;
  }
  bc.stride_a = std::move(sa);
  bc.stride_b = std::move(sb);
  return bc;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const int64_t r = static_cast<int64_t>(bc.out.size());
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const int64_t total = numel(bc.out);
  if (total == 0) return;
  const int64_t inner = bc.out[r - 1], ia = bc.stride_a[r - 1], ib = bc.stride_b[r - 1];
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t oi = 0, ai = 0, bi = 0;
  while (oi < total) {
    for (int64_t k = 0; k < inner; ++k) f(oi + k, ai + k * ia, bi + k * ib);
    oi += inner;
    for (int64_t ax = r - 2; ax >= 0; --ax) {
      ai += bc.stride_a[ax];
      bi += bc.stride_b[ax];
      if (++idx[ax] < bc.out[ax]) break;
      ai -= bc.stride_a[ax] * bc.out[ax];
      bi -= bc.stride_b[ax] * bc.out[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinOp { add, sub, mul };

Var binary(const Var& a, const Var& b, BinOp op) {
  const bool same = a.shape() == b.shape();
  Broadcast bc;
  if (!same) bc = plan_broadcast(a.shape(), b.shape());
  const Shape out_shape = same ? a.shape() : bc.out;
  if (any_meta({&a, &b})) return meta_result(out_shape);

  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(out_shape);
  auto apply = [op](double x, double y) {
    switch (op) {
      case BinOp::add:
        return x + y;
      case BinOp::sub:
        return x - y;
      case BinOp::mul:
        return x * y;
    }
    return 0.0;
  };
  if (same) {
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(bc, [&](int64_t o, int64_t i, int64_t j) { out[o] = apply(av[i], bv[j]); });
  }
  return make_result(std::move(out), {a, b}, [a, b, op, same, bc](const Tensor& g) {
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    Tensor ga = need_a ? Tensor(a.shape()) : Tensor();
    Tensor gb = need_b ? Tensor(b.shape()) : Tensor();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    auto step = [&](int64_t o, int64_t i, int64_t j) {
      switch (op) {
        case BinOp::add:
          if (need_a) ga[i] += g[o];
          if (need_b) gb[j] += g[o];
          break;
        case BinOp::sub:
          if (need_a) ga[i] += g[o];
          if (need_b) gb[j] -= g[o];
          break;
        case BinOp::mul:
          if (need_a) ga[i] += g[o] * bv[j];
          if (need_b) gb[j] += g[o] * av[i];
          break;
      }
    };
    if (same)
      for (int64_t i = 0; i < g.numel(); ++i) step(i, i, i);
    else
      for_each_broadcast(bc, step);
    if (need_a) a.accumulate_grad(std::move(ga));
    if (need_b) b.accumulate_grad(std::move(gb));
  });
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  if (x.is_meta()) return meta_result(x.shape());
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(xv[i]);
  return make_result(std::move(out), {x}, [x, deriv](const Tensor& g) {
    const Tensor& xv = x.value();
    Tensor gx(xv.shape());
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] = g[i] * deriv(xv[i]);
    x.accumulate_grad(std::move(gx));
  });
}

// outer x axis x inner decomposition of a shape around one axis.
struct AxisSplit {
  int64_t outer = 1, size = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int64_t axis) {
  AxisSplit r;
  for (int64_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.size = s[axis];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::add); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::sub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::mul); }

Var scale(const Var& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v); });
}

Var sigmoid(const Var& x) {
  auto s = [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
  return unary(x, s, [s](double v) {
    const double y = s(v);
    return y * (1.0 - y);
  });
}

Var softmax(const Var& x) {
  if (x.value().rank() < 1) throw ArgumentError("softmax needs rank >= 1");
  if (x.is_meta()) return meta_result(x.shape());
  const Tensor& xv = x.value();
  const int64_t n = xv.dim(-1), rows = xv.numel() / std::max<int64_t>(n, 1);
  Tensor out(xv.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* xi = xv.ptr() + r * n;
    double* yi = out.ptr() + r * n;
    const double mx = *std::max_element(xi, xi + n);
    double z = 0.0;
    for (int64_t j = 0; j < n; ++j) z += (yi[j] = std::exp(xi[j] - mx));
    for (int64_t j = 0; j < n; ++j) yi[j] /= z;
  }
  Tensor saved = out;
  return make_result(std::move(out), {x}, [x, y = std::move(saved), n, rows](const Tensor& g) {
    Tensor gx(y.shape());
    for (int64_t r = 0; r < rows; ++r) {
      const double* yi = y.ptr() + r * n;
      const double* gi = g.ptr() + r * n;
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
      for (int64_t j = 0; j < n; ++j) gx[r * n + j] = yi[j] * (gi[j] - dot);
    }
    x.accumulate_grad(std::move(gx));
  });
}

Var sum(const Var& x) {
  if (x.is_meta()) return meta_result({});
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_result(Tensor::scalar(s), {x},
                     [x](const Tensor& g) { x.accumulate_grad(Tensor(x.shape(), g.item())); });
}

Var mean(const Var& x) {
  const int64_t n = x.value().numel();
  if (n == 0) throw ArgumentError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var mean_axis(const Var& x, int64_t axis, bool keepdim) {
  axis = normalize_axis(axis, x.value().rank());
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[axis] = 1;
  else
    out_shape.erase(out_shape.begin() + axis);
  if (x.is_meta()) return meta_result(out_shape);
  const Tensor& xv = x.value();
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(sp.size);
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t k = 0; k < sp.size; ++k)
      for (int64_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xv[(o * sp.size + k) * sp.inner + i] * inv;
  return make_result(std::move(out), {x}, [x, sp, inv](const Tensor& g) {
    Tensor gx(x.shape());
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t k = 0; k < sp.size; ++k)
        for (int64_t i = 0; i < sp.inner; ++i) gx[(o * sp.size + k) * sp.inner + i] = g[o * sp.inner + i] * inv;
    x.accumulate_grad(std::move(gx));
  });
}

Var reshape(const Var& x, Shape shape) {
  if (numel(shape) != numel(x.shape()))
    throw ArgumentError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  if (x.is_meta()) return meta_result(std::move(shape));
  Tensor out = x.value().reshaped(shape);
  return make_result(std::move(out), {x},
                     [x](const Tensor& g) { x.accumulate_grad(g.reshaped(x.shape())); });
}

Var concat(const std::vector<Var>& parts, int64_t axis) {
  if (parts.empty()) throw ArgumentError("concat of zero tensors");
  const int64_t rank = parts[0].value().rank();
  axis = normalize_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  bool meta = false;
  for (const Var& p : parts) {
    if (p.value().rank() != rank) throw ArgumentError("concat rank mismatch");
    for (int64_t i = 0; i < rank; ++i)
      if (i != axis && p.shape()[i] != parts[0].shape()[i])
        throw ArgumentError("concat shape mismatch: " + to_string(p.shape()) + " vs " +
                            to_string(parts[0].shape()));
    out_shape[axis] += p.shape()[axis];
    meta = meta || p.is_meta();
  }
  if (meta) return meta_result(out_shape);
  const AxisSplit sp = split_at(out_shape, axis);
  Tensor out(out_shape);
  int64_t offset = 0;
  std::vector<int64_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(offset);
    const int64_t len = p.shape()[axis];
    const Tensor& pv = p.value();
    for (int64_t o = 0; o < sp.outer; ++o)
      std::copy(pv.ptr() + o * len * sp.inner, pv.ptr() + (o + 1) * len * sp.inner,
                out.ptr() + (o * sp.size + offset) * sp.inner);
    offset += len;
  }
  return make_result(std::move(out), parts, [parts, offsets, sp, axis](const Tensor& g) {
    for (size_t n = 0; n < parts.size(); ++n) {
      const Var& p = parts[n];
      if (!p.requires_grad()) continue;
      const int64_t len = p.shape()[axis];
      Tensor gp(p.shape());
      for (int64_t o = 0; o < sp.outer; ++o)
        std::copy(g.ptr() + (o * sp.size + offsets[n]) * sp.inner,
                  g.ptr() + (o * sp.size + offsets[n] + len) * sp.inner, gp.ptr() + o * len * sp.inner);
      p.accumulate_grad(std::move(gp));
    }
  });
}

Var slice(const Var& x, int64_t axis, int64_t begin, int64_t end) {
  axis = normalize_axis(axis, x.value().rank());
  const int64_t size = x.shape()[axis];
  if (begin < 0 || end > size || begin > end)
    throw ArgumentError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                        to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  if (x.is_meta()) return meta_result(out_shape);
  const AxisSplit sp = split_at(x.shape(), axis);
  const int64_t len = end - begin;
  Tensor out(out_shape);
  const Tensor& xv = x.value();
  for (int64_t o = 0; o < sp.outer; ++o)
    std::copy(xv.ptr() + (o * sp.size + begin) * sp.inner, xv.ptr() + (o * sp.size + end) * sp.inner,
              out.ptr() + o * len * sp.inner);
  return make_result(std::move(out), {x}, [x, sp, begin, len](const Tensor& g) {
    Tensor gx(x.shape());
    for (int64_t o = 0; o < sp.outer; ++o)
      std::copy(g.ptr() + o * len * sp.inner, g.ptr() + (o + 1) * len * sp.inner,
                gx.ptr() + (o * sp.size + begin) * sp.inner);
    x.accumulate_grad(std::move(gx));
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (weight.value().rank() != 2) throw ArgumentError("linear weight must be (out, in)");
  const int64_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (x.value().rank() < 1 || x.dim(-1) != in_f)
    throw ArgumentError("linear input " + to_string(x.shape()) + " does not match weight " +
                        to_string(weight.shape()));
  if (bias.defined() && (bias.value().rank() != 1 || bias.dim(0) != out_f))
    throw ArgumentError("linear bias shape mismatch");
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  if (any_meta({&x, &weight, &bias})) return meta_result(out_shape);

  const int64_t rows = x.value().numel() / in_f;
  Tensor out(out_shape);
  kernels::gemm_nt(rows, out_f, in_f, x.value().ptr(), weight.value().ptr(), out.ptr(), false);
  if (bias.defined())
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t o = 0; o < out_f; ++o) out[r * out_f + o] += bias.value()[o];
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), inputs, [x, weight, bias, rows, in_f, out_f](const Tensor& g) {
    if (x.requires_grad()) {
      Tensor gx(x.shape());
      kernels::gemm_nn(rows, in_f, out_f, g.ptr(), weight.value().ptr(), gx.ptr(), false);
      x.accumulate_grad(std::move(gx));
    }
    if (weight.requires_grad()) {
      Tensor gw(weight.shape());
      kernels::gemm_tn(out_f, in_f, rows, g.ptr(), x.value().ptr(), gw.ptr(), false);
      weight.accumulate_grad(std::move(gw));
    }
    if (bias.defined() && bias.requires_grad()) {
      Tensor gb(bias.shape());
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t o = 0; o < out_f; ++o) gb[o] += g[r * out_f + o];
      bias.accumulate_grad(std::move(gb));
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int64_t n = x.dim(-1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
    throw ArgumentError("layer_norm affine parameters must have shape (" + std::to_string(n) + ")");
  if (any_meta({&x, &gamma, &beta})) return meta_result(x.shape());
  const Tensor& xv = x.value();
  const int64_t rows = xv.numel() / n;
  Tensor out(xv.shape()), xhat(xv.shape()), inv_std(Shape{rows});
  for (int64_t r = 0; r < rows; ++r) {
    const double* xi = xv.ptr() + r * n;
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t j = 0; j < n; ++j) {
      const double h = (xi[j] - mu) * is;
      xhat[r * n + j] = h;
      out[r * n + j] = h * gamma.value()[j] + beta.value()[j];
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, rows](const Tensor& g) {
                       Tensor gx = x.requires_grad() ? Tensor(x.shape()) : Tensor();
                       Tensor gg(gamma.shape()), gb(beta.shape());
                       const Tensor& gam = gamma.value();
                       for (int64_t r = 0; r < rows; ++r) {
                         const double* gi = g.ptr() + r * n;
                         const double* hi = xhat.ptr() + r * n;
                         double m1 = 0.0, m2 = 0.0;
                         for (int64_t j = 0; j < n; ++j) {
                           gg[j] += gi[j] * hi[j];
                           gb[j] += gi[j];
                           const double dh = gi[j] * gam[j];
                           m1 += dh;
                           m2 += dh * hi[j];
                         }
                         if (!x.requires_grad()) continue;
                         m1 /= static_cast<double>(n);
                         m2 /= static_cast<double>(n);
                         for (int64_t j = 0; j < n; ++j)
                           gx[r * n + j] = inv_std[r] * (gi[j] * gam[j] - m1 - hi[j] * m2);
                       }
                       if (x.requires_grad()) x.accumulate_grad(std::move(gx));
                       gamma.accumulate_grad(std::move(gg));
                       beta.accumulate_grad(std::move(gb));
                     });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int64_t stride, int64_t pad, int64_t groups) {
  if (x.value().rank() != 4) throw ArgumentError("conv2d input must be NHWC, got " + to_string(x.shape()));
  if (weight.value().rank() != 4 || weight.dim(0) != weight.dim(1))
    throw ArgumentError("conv2d weight must be (k, k, cin/groups, cout)");
  const int64_t k = weight.dim(0), cout = weight.dim(3);
  if (x.dim(3) != weight.dim(2) * groups)
    throw ArgumentError("conv2d channel mismatch: input " + to_string(x.shape()) + " weight " +
                        to_string(weight.shape()));
  if (bias.defined() && bias.shape() != Shape{cout}) throw ArgumentError("conv2d bias shape mismatch");
  const kernels::ConvGeom geom =
      kernels::ConvGeom::make(x.dim(0), x.dim(1), x.dim(2), x.dim(3), cout, k, stride, pad, groups);
  const Shape out_shape{geom.batch, geom.out_h, geom.out_w, cout};
  if (any_meta({&x, &weight, &bias})) return meta_result(out_shape);

  Tensor out(out_shape);
  kernels::conv2d_forward(geom, x.value().ptr(), weight.value().ptr(), bias.defined() ? bias.value().ptr() : nullptr,
                          out.ptr());
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), inputs, [x, weight, bias, geom](const Tensor& g) {
    if (x.requires_grad()) {
      Tensor gx(x.shape());
      kernels::conv2d_backward_input(geom, g.ptr(), weight.value().ptr(), gx.ptr());
      x.accumulate_grad(std::move(gx));
    }
    const bool need_b = bias.defined() && bias.requires_grad();
    if (weight.requires_grad() || need_b) {
      Tensor gw(weight.shape());
      Tensor gb = need_b ? Tensor(bias.shape()) : Tensor();
      kernels::conv2d_backward_weight(geom, x.value().ptr(), g.ptr(), gw.ptr(), need_b ? gb.ptr() : nullptr);
      weight.accumulate_grad(std::move(gw));
      if (need_b) bias.accumulate_grad(std::move(gb));
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int64_t stride) {
  if (x.value().rank() != 4) throw ArgumentError("conv_transpose2d input must be NHWC");
  if (weight.value().rank() != 4 || weight.dim(0) != stride || weight.dim(1) != stride)
    throw ArgumentError("conv_transpose2d weight must be (stride, stride, cin, cout)");
  if (weight.dim(2) != x.dim(3)) throw ArgumentError("conv_transpose2d channel mismatch");
  const int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3), cout = weight.dim(3);
  if (bias.defined() && bias.shape() != Shape{cout}) throw ArgumentError("conv_transpose2d bias shape mismatch");
  const Shape out_shape{B, H * stride, W * stride, cout};
  if (any_meta({&x, &weight, &bias})) return meta_result(out_shape);

  const int64_t rows = B * H * W, taps = stride * stride;
  Tensor out(out_shape);
  std::vector<double> tmp(static_cast<size_t>(rows * cout));
  for (int64_t t = 0; t < taps; ++t) {
    const int64_t a = t / stride, c = t % stride;
    kernels::gemm_nn(rows, cout, cin, x.value().ptr(), weight.value().ptr() + t * cin * cout, tmp.data(), false);
    for (int64_t r = 0; r < rows; ++r) {
      const int64_t b = r / (H * W), i = (r / W) % H, j = r % W;
      double* o = out.ptr() + ((b * H * stride + i * stride + a) * W * stride + j * stride + c) * cout;
      for (int64_t co = 0; co < cout; ++co) o[co] = tmp[r * cout + co] + (bias.defined() ? bias.value()[co] : 0.0);
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), inputs, [x, weight, bias, B, H, W, cin, cout, stride](const Tensor& g) {
    const int64_t rows = B * H * W, taps = stride * stride;
    std::vector<double> gtap(static_cast<size_t>(rows * cout));
    Tensor gx = x.requires_grad() ? Tensor(x.shape()) : Tensor();
    Tensor gw = weight.requires_grad() ? Tensor(weight.shape()) : Tensor();
    for (int64_t t = 0; t < taps; ++t) {
      const int64_t a = t / stride, c = t % stride;
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t b = r / (H * W), i = (r / W) % H, j = r % W;
        const double* go = g.ptr() + ((b * H * stride + i * stride + a) * W * stride + j * stride + c) * cout;
        std::copy(go, go + cout, gtap.data() + r * cout);
      }
      if (x.requires_grad())
        kernels::gemm_nt(rows, cin, cout, gtap.data(), weight.value().ptr() + t * cin * cout, gx.ptr(), true);
      if (weight.requires_grad())
        kernels::gemm_tn(cin, cout, rows, x.value().ptr(), gtap.data(), gw.ptr() + t * cin * cout, false);
    }
    if (x.requires_grad()) x.accumulate_grad(std::move(gx));
    if (weight.requires_grad()) weight.accumulate_grad(std::move(gw));
    if (bias.defined() && bias.requires_grad()) {
      Tensor gb(bias.shape());
      const int64_t n = g.numel() / cout;
      for (int64_t r = 0; r < n; ++r)
        for (int64_t co = 0; co < cout; ++co) gb[co] += g[r * cout + co];
      bias.accumulate_grad(std::move(gb));
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training) {
  const int64_t c = x.dim(-1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) throw ArgumentError("batch_norm parameter mismatch");
  if (any_meta({&x, &gamma, &beta})) return meta_result(x.shape());
  const Tensor& xv = x.value();
  const int64_t rows = xv.numel() / c;
  if (training && rows < 2) throw ArgumentError("batch_norm in training mode needs more than one value per channel");
  std::vector<double> mu(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
  if (training) {
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
    for (int64_t j = 0; j < c; ++j) mu[j] /= static_cast<double>(rows);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < c; ++j) var[j] += (xv[r * c + j] - mu[j]) * (xv[r * c + j] - mu[j]);
    for (int64_t j = 0; j < c; ++j) var[j] /= static_cast<double>(rows);
    const double m = state.momentum;
    const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
    for (int64_t j = 0; j < c; ++j) {
      state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mu[j];
      state.running_var[j] = (1.0 - m) * state.running_var[j] + m * var[j] * unbias;
    }
  } else {
    for (int64_t j = 0; j < c; ++j) {
      mu[j] = state.running_mean[j];
      var[j] = state.running_var[j];
    }
  }
  Tensor out(xv.shape()), xhat(xv.shape());
  std::vector<double> inv_std(static_cast<size_t>(c));
  for (int64_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) {
      const double h = (xv[r * c + j] - mu[j]) * inv_std[j];
      xhat[r * c + j] = h;
      out[r * c + j] = h * gamma.value()[j] + beta.value()[j];
    }
  return make_result(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat = std::move(xhat), inv_std, rows, c, training](const Tensor& g) {
                       Tensor gg(gamma.shape()), gb(beta.shape());
                       for (int64_t r = 0; r < rows; ++r)
                         for (int64_t j = 0; j < c; ++j) {
                           gg[j] += g[r * c + j] * xhat[r * c + j];
                           gb[j] += g[r * c + j];
                         }
                       if (x.requires_grad()) {
                         Tensor gx(x.shape());
                         const Tensor& gam = gamma.value();
                         const double n = static_cast<double>(rows);
                         for (int64_t r = 0; r < rows; ++r)
                           for (int64_t j = 0; j < c; ++j) {
                             const double dh = g[r * c + j] * gam[j];
                             gx[r * c + j] = training ? inv_std[j] * (dh - gam[j] * gb[j] / n -
                                                                      xhat[r * c + j] * gam[j] * gg[j] / n)
                                                      : inv_std[j] * dh;
                           }
                         x.accumulate_grad(std::move(gx));
                       }
                       gamma.accumulate_grad(std::move(gg));
                       beta.accumulate_grad(std::move(gb));
                     });
}

namespace {

struct LinearTaps {
  std::vector<int64_t> i0, i1;
  std::vector<double> l1;
};

// Source taps for half-pixel bilinear interpolation along one axis.
LinearTaps linear_taps(int64_t in, int64_t out) {
  LinearTaps t;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int64_t i0 = static_cast<int64_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int64_t i1 = i0 < in - 1 ? i0 + 1 : i0;
    t.i0.push_back(i0);
    t.i1.push_back(i1);
    t.l1.push_back(src - static_cast<double>(i0));
  }
  return t;
}

}  // namespace

Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w) {
  if (x.value().rank() != 4) throw ArgumentError("resize_bilinear input must be NHWC");
  if (out_h < 1 || out_w < 1) throw ArgumentError("resize_bilinear target must be positive");
  const int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (x.is_meta()) return meta_result({B, out_h, out_w, C});
  if (H == out_h && W == out_w) return reshape(x, x.shape());
  const LinearTaps ty = linear_taps(H, out_h), tx = linear_taps(W, out_w);
  Tensor out({B, out_h, out_w, C});
  const Tensor& xv = x.value();
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < B * out_h; ++row) {
    const int64_t b = row / out_h, oy = row % out_h;
    const double ly = ty.l1[oy], hy = 1.0 - ly;
    for (int64_t ox = 0; ox < out_w; ++ox) {
      const double lx = tx.l1[ox], hx = 1.0 - lx;
      const double* p00 = xv.ptr() + ((b * H + ty.i0[oy]) * W + tx.i0[ox]) * C;
      const double* p01 = xv.ptr() + ((b * H + ty.i0[oy]) * W + tx.i1[ox]) * C;
      const double* p10 = xv.ptr() + ((b * H + ty.i1[oy]) * W + tx.i0[ox]) * C;
      const double* p11 = xv.ptr() + ((b * H + ty.i1[oy]) * W + tx.i1[ox]) * C;
      double* o = out.ptr() + ((b * out_h + oy) * out_w + ox) * C;
      for (int64_t c = 0; c < C; ++c)
        o[c] = hy * (hx * p00[c] + lx * p01[c]) + ly * (hx * p10[c] + lx * p11[c]);
    }
  }
  return make_result(std::move(out), {x}, [x, ty, tx, B, H, W, C, out_h, out_w](const Tensor& g) {
    Tensor gx(x.shape());
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t oy = 0; oy < out_h; ++oy) {
        const double ly = ty.l1[oy], hy = 1.0 - ly;
        for (int64_t ox = 0; ox < out_w; ++ox) {
          const double lx = tx.l1[ox], hx = 1.0 - lx;
          const double* go = g.ptr() + ((b * out_h + oy) * out_w + ox) * C;
          double* p00 = gx.ptr() + ((b * H + ty.i0[oy]) * W + tx.i0[ox]) * C;
          double* p01 = gx.ptr() + ((b * H + ty.i0[oy]) * W + tx.i1[ox]) * C;
          double* p10 = gx.ptr() + ((b * H + ty.i1[oy]) * W + tx.i0[ox]) * C;
          double* p11 = gx.ptr() + ((b * H + ty.i1[oy]) * W + tx.i1[ox]) * C;
          for (int64_t c = 0; c < C; ++c) {
            p00[c] += hy * hx * go[c];
            p01[c] += hy * lx * go[c];
            p10[c] += ly * hx * go[c];
            p11[c] += ly * lx * go[c];
          }
        }
      }
    x.accumulate_grad(std::move(gx));
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int64_t heads, const Var& bias) {
  if (q.value().rank() != 3 || k.value().rank() != 3 || v.value().rank() != 3)
    throw ArgumentError("attention inputs must be (B, T, D)");
  const int64_t B = q.dim(0), Tq = q.dim(1), D = q.dim(2), Tk = k.dim(1);
  if (k.shape() != v.shape() || k.dim(0) != B || k.dim(2) != D)
    throw ArgumentError("attention shape mismatch: q " + to_string(q.shape()) + " k " + to_string(k.shape()) +
                        " v " + to_string(v.shape()));
  if (heads < 1 || D % heads != 0) throw ArgumentError("attention heads must divide the width");
  if (bias.defined() && bias.shape() != Shape{B, heads, Tq, Tk})
    throw ArgumentError("attention bias must be (B, heads, Tq, Tk), got " + to_string(bias.shape()));
  if (any_meta({&q, &k, &v, &bias})) return meta_result(q.shape());
  kernels::AttnGeom geom;
  geom.batch = B;
  geom.heads = heads;
  geom.q_len = Tq;
  geom.kv_len = Tk;
  geom.head_dim = D / heads;
  geom.scale = 1.0 / std::sqrt(static_cast<double>(geom.head_dim));
  Tensor out(q.shape());
  Tensor probs({B, heads, Tq, Tk});
  kernels::attention_forward(geom, q.value().ptr(), k.value().ptr(), v.value().ptr(),
                             bias.defined() ? bias.value().ptr() : nullptr, out.ptr(), probs.ptr());
  std::vector<Var> inputs{q, k, v};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), inputs, [q, k, v, bias, geom, probs = std::move(probs)](const Tensor& g) {
    Tensor gq(q.shape()), gk(k.shape()), gv(v.shape());
    const bool need_bias = bias.defined() && bias.requires_grad();
    Tensor gb = need_bias ? Tensor(bias.shape()) : Tensor();
    kernels::attention_backward(geom, q.value().ptr(), k.value().ptr(), v.value().ptr(), probs.ptr(), g.ptr(),
                                gq.ptr(), gk.ptr(), gv.ptr(), need_bias ? gb.ptr() : nullptr);
    q.accumulate_grad(std::move(gq));
    k.accumulate_grad(std::move(gk));
    v.accumulate_grad(std::move(gv));
    if (need_bias) bias.accumulate_grad(std::move(gb));
  });
}

Var rel_pos_bias(const Var& q, const Var& rel_h, const Var& rel_w, int64_t h, int64_t w, int64_t heads) {
  if (q.value().rank() != 3 || q.dim(1) != h * w) throw ArgumentError("rel_pos_bias query must be (B, h*w, D)");
  const int64_t B = q.dim(0), D = q.dim(2);
  if (heads < 1 || D % heads != 0) throw ArgumentError("rel_pos_bias heads must divide the width");
  const int64_t dh = D / heads;
  if (rel_h.shape() != Shape{2 * h - 1, dh} || rel_w.shape() != Shape{2 * w - 1, dh})
    throw ArgumentError("relative position tables must be (2h-1, dh) and (2w-1, dh)");
  const int64_t T = h * w;
  const Shape out_shape{B, heads, T, T};
  if (any_meta({&q, &rel_h, &rel_w})) return meta_result(out_shape);

  // Per query: projections onto every key row (h values) and column (w values).
  const Tensor& qv = q.value();
  const Tensor& rh = rel_h.value();
  const Tensor& rw = rel_w.value();
  Tensor out(out_shape);
  std::vector<double> row_terms(static_cast<size_t>(h)), col_terms(static_cast<size_t>(w));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t hd = 0; hd < heads; ++hd)
      for (int64_t t = 0; t < T; ++t) {
        const int64_t qy = t / w, qx = t % w;
        const double* qi = qv.ptr() + (b * T + t) * D + hd * dh;
        for (int64_t ky = 0; ky < h; ++ky) {
          const double* r = rh.ptr() + (qy - ky + h - 1) * dh;
          double s = 0.0;
          for (int64_t d = 0; d < dh; ++d) s += qi[d] * r[d];
          row_terms[ky] = s;
        }
        for (int64_t kx = 0; kx < w; ++kx) {
          const double* r = rw.ptr() + (qx - kx + w - 1) * dh;
          double s = 0.0;
          for (int64_t d = 0; d < dh; ++d) s += qi[d] * r[d];
          col_terms[kx] = s;
        }
        double* o = out.ptr() + ((b * heads + hd) * T + t) * T;
        for (int64_t ky = 0; ky < h; ++ky)
          for (int64_t kx = 0; kx < w; ++kx) o[ky * w + kx] = row_terms[ky] + col_terms[kx];
      }
  return make_result(std::move(out), {q, rel_h, rel_w}, [q, rel_h, rel_w, h, w, heads, B, D, dh, T](const Tensor& g) {
    const Tensor& qv = q.value();
    const Tensor& rh = rel_h.value();
    const Tensor& rw = rel_w.value();
    Tensor gq(q.shape()), grh(rel_h.shape()), grw(rel_w.shape());
    std::vector<double> g_row(static_cast<size_t>(h)), g_col(static_cast<size_t>(w));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t hd = 0; hd < heads; ++hd)
        for (int64_t t = 0; t < T; ++t) {
          const int64_t qy = t / w, qx = t % w;
          const double* go = g.ptr() + ((b * heads + hd) * T + t) * T;
          std::fill(g_row.begin(), g_row.end(), 0.0);
          std::fill(g_col.begin(), g_col.end(), 0.0);
          for (int64_t ky = 0; ky < h; ++ky)
            for (int64_t kx = 0; kx < w; ++kx) {
              g_row[ky] += go[ky * w + kx];
              g_col[kx] += go[ky * w + kx];
            }
          const double* qi = qv.ptr() + (b * T + t) * D + hd * dh;
          double* gqi = gq.ptr() + (b * T + t) * D + hd * dh;
          for (int64_t ky = 0; ky < h; ++ky) {
            const int64_t idx = (qy - ky + h - 1) * dh;
            for (int64_t d = 0; d < dh; ++d) {
              gqi[d] += g_row[ky] * rh[idx + d];
              grh[idx + d] += g_row[ky] * qi[d];
            }
          }
          for (int64_t kx = 0; kx < w; ++kx) {
            const int64_t idx = (qx - kx + w - 1) * dh;
            for (int64_t d = 0; d < dh; ++d) {
              gqi[d] += g_col[kx] * rw[idx + d];
              grw[idx + d] += g_col[kx] * qi[d];
            }
          }
        }
    q.accumulate_grad(std::move(gq));
    rel_h.accumulate_grad(std::move(grh));
    rel_w.accumulate_grad(std::move(grw));
  });
}

Var msda_sample(const Var& value, const Var& offsets, const Var& weights, const Tensor& reference,
                const MsdaLevels& levels, int64_t heads) {
  const int64_t L = static_cast<int64_t>(levels.height.size());
  if (L == 0 || levels.width.size() != levels.height.size() || levels.start.size() != levels.height.size())
    throw ArgumentError("msda: key/value tokens carry no scale metadata");
  if (value.value().rank() != 3) throw ArgumentError("msda value must be (B, Tk, D)");
  const int64_t B = value.dim(0), Tk = value.dim(1), D = value.dim(2);
  if (heads < 1 || D % heads != 0) throw ArgumentError("msda heads must divide the width");
  int64_t covered = 0;
  for (int64_t l = 0; l < L; ++l) {
    if (levels.start[l] != covered) throw ArgumentError("msda level offsets are not contiguous");
    covered += levels.height[l] * levels.width[l];
  }
  if (covered != Tk) throw ArgumentError("msda level shapes do not cover the key/value tokens");
  if (offsets.value().rank() != 6 || offsets.dim(0) != B || offsets.dim(2) != heads || offsets.dim(3) != L ||
      offsets.dim(5) != 2)
    throw ArgumentError("msda offsets must be (B, Tq, heads, L, P, 2), got " + to_string(offsets.shape()));
  const int64_t Tq = offsets.dim(1), P = offsets.dim(4);
  if (weights.shape() != Shape{B, Tq, heads, L, P})
    throw ArgumentError("msda weights must be (B, Tq, heads, L, P), got " + to_string(weights.shape()));
  if (reference.shape() != Shape{Tq, L, 2})
    throw ArgumentError("msda reference points must be (Tq, L, 2), got " + to_string(reference.shape()));
  for (int64_t i = 0; i < reference.numel(); ++i)
    if (!(reference[i] >= 0.0 && reference[i] <= 1.0))
      throw ArgumentError("msda reference points must lie in [0, 1]");
  if (any_meta({&value, &offsets, &weights})) return meta_result({B, Tq, D});

  kernels::MsdaGeom geom;
  geom.batch = B;
  geom.q_len = Tq;
  geom.kv_len = Tk;
  geom.heads = heads;
  geom.head_dim = D / heads;
  geom.points = P;
  geom.level_h = levels.height;
  geom.level_w = levels.width;
  geom.level_start = levels.start;

  // Sampling location = reference + offset / level size.
  Tensor loc(offsets.shape());
  const Tensor& off = offsets.value();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t q = 0; q < Tq; ++q)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t l = 0; l < L; ++l)
          for (int64_t p = 0; p < P; ++p) {
            const int64_t i = ((((b * Tq + q) * heads + h) * L + l) * P + p) * 2;
            loc[i] = reference[(q * L + l) * 2] + off[i] / static_cast<double>(levels.width[l]);
            loc[i + 1] = reference[(q * L + l) * 2 + 1] + off[i + 1] / static_cast<double>(levels.height[l]);
          }
  Tensor out({B, Tq, D});
  kernels::msda_forward<double>(geom, value.value().ptr(), loc.ptr(), weights.value().ptr(), out.ptr());
  return make_result(std::move(out), {value, offsets, weights},
                     [value, offsets, weights, geom, loc = std::move(loc)](const Tensor& g) {
                       Tensor gv(value.shape()), gl(loc.shape()), gw(weights.shape());
                       kernels::msda_backward<double>(geom, value.value().ptr(), loc.ptr(), weights.value().ptr(),
                                                      g.ptr(), gv.ptr(), gl.ptr(), gw.ptr());
                       if (offsets.requires_grad()) {
                         const int64_t L = geom.levels(), P = geom.points;
                         for (int64_t i = 0; i < gl.numel() / 2; ++i) {
                           const int64_t l = (i / P) % L;
                           gl[2 * i] /= static_cast<double>(geom.level_w[l]);
                           gl[2 * i + 1] /= static_cast<double>(geom.level_h[l]);
                         }
                         offsets.accumulate_grad(std::move(gl));
                       }
                       value.accumulate_grad(std::move(gv));
                       weights.accumulate_grad(std::move(gw));
                     });
}

}  // namespace mmsam
