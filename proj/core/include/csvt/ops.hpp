#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <vector>

#include "csvt/tensor.hpp"

// Forward ops with reverse-mode closures. FLOP conventions per output
// element, shared with the analytic cost model in bench.hpp:
//   matmul 2k | elementwise 1 | relu 1 | gelu 10 | log 1 | softmax 5
//   log_softmax 5 | layer_norm 8 | batch_norm 8 | l2_normalize 3
//   dw conv3x3 18 | reductions 1 | blur 4(2r+1) | resize 8

namespace csvt {

namespace detail {

// C += A * B ; A[m x k], B[k x n]
template <class T>
void gemm_accum(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T ; A[m x n], B[k x n], C[m x k]
template <class T>
void gemm_abt_accum(const T* a, const T* b, T* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * n;
    T* crow = c + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T* brow = b + static_cast<size_t>(p) * n;
      T acc = T(0);
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C += A^T * B ; A[m x k], B[m x n], C[k x n]
template <class T>
void gemm_atb_accum(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    const T* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
inline std::shared_ptr<std::vector<T>> grad_sink(const Tensor<T>& t) {
  return t.requires_grad() ? t.grad_ptr() : std::shared_ptr<std::vector<T>>();
}

template <class T>
inline bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (!active_tape<T>()) return false;
  for (const Tensor<T>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <class T>
inline void mark_recorded(Tensor<T>& out) {
  out.set_requires_grad(true);
  out.attach_to_tape(active_tape<T>());
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

template <class T>
void assert_all_finite(const Tensor<T>& t, const std::string& what) {
  for (T v : t.values())
    if (!std::isfinite(static_cast<double>(v)))
      throw std::runtime_error("non-finite value in " + what);
}

// ---------------------------------------------------------------- matmul

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  detail::gemm_accum(a.values().data(), b.values().data(), c.values_mut().data(), m, k, n);
  trace_op(OpKind::kMatmul, 2ull * m * k * n, c.numel());
  if (detail::tracking<T>({&a, &b})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto ga = detail::grad_sink(a), gb = detail::grad_sink(b);
    auto av = a.data_ptr(), bv = b.data_ptr();
    active_tape<T>()->record([og, ga, gb, av, bv, m, k, n] {
      if (ga) detail::gemm_abt_accum(og->data(), bv->data(), ga->data(), m, n, k);
      if (gb) detail::gemm_atb_accum(av->data(), og->data(), gb->data(), m, k, n);
    });
  }
  return c;
}

// ------------------------------------------------------------ elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> c(a.shape());
  auto& out = c.values_mut();
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  trace_op(OpKind::kAdd, c.numel(), c.numel());
  if (detail::tracking<T>({&a, &b})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto ga = detail::grad_sink(a), gb = detail::grad_sink(b);
    active_tape<T>()->record([og, ga, gb] {
      if (ga)
        for (size_t i = 0; i < og->size(); ++i) (*ga)[i] += (*og)[i];
      if (gb)
        for (size_t i = 0; i < og->size(); ++i) (*gb)[i] += (*og)[i];
    });
  }
  return c;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> c(a.shape());
  auto& out = c.values_mut();
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  trace_op(OpKind::kAdd, c.numel(), c.numel());
  if (detail::tracking<T>({&a, &b})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto ga = detail::grad_sink(a), gb = detail::grad_sink(b);
    active_tape<T>()->record([og, ga, gb] {
      if (ga)
        for (size_t i = 0; i < og->size(); ++i) (*ga)[i] += (*og)[i];
      if (gb)
        for (size_t i = 0; i < og->size(); ++i) (*gb)[i] -= (*og)[i];
    });
  }
  return c;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> c(a.shape());
  auto& out = c.values_mut();
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  trace_op(OpKind::kMul, c.numel(), c.numel());
  if (detail::tracking<T>({&a, &b})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto ga = detail::grad_sink(a), gb = detail::grad_sink(b);
    auto av = a.data_ptr(), bv = b.data_ptr();
    active_tape<T>()->record([og, ga, gb, av, bv] {
      if (ga)
        for (size_t i = 0; i < og->size(); ++i) (*ga)[i] += (*og)[i] * (*bv)[i];
      if (gb)
        for (size_t i = 0; i < og->size(); ++i) (*gb)[i] += (*og)[i] * (*av)[i];
    });
  }
  return c;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> c(a.shape());
  auto& out = c.values_mut();
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  trace_op(OpKind::kScale, c.numel(), c.numel());
  if (detail::tracking<T>({&a})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto ga = detail::grad_sink(a);
    active_tape<T>()->record([og, ga, factor] {
      if (ga)
        for (size_t i = 0; i < og->size(); ++i) (*ga)[i] += (*og)[i] * factor;
    });
  }
  return c;
}

// y = x * exp(-t[idx]); the per-head learnable temperature path.
template <class T>
Tensor<T> scale_by_exp_neg(const Tensor<T>& x, const Tensor<T>& t, int idx) {
  detail::check(idx >= 0 && static_cast<size_t>(idx) < t.numel(), "scale_by_exp_neg: index out of range");
  const T f = std::exp(-t[static_cast<size_t>(idx)]);
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] * f;
  trace_op(OpKind::kScale, c.numel(), c.numel());
  if (detail::tracking<T>({&x, &t})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x), gt = detail::grad_sink(t);
    auto cv = c.data_ptr();
    active_tape<T>()->record([og, gx, gt, cv, f, idx] {
      if (gx)
        for (size_t i = 0; i < og->size(); ++i) (*gx)[i] += (*og)[i] * f;
      if (gt) {
        T acc = T(0);
        for (size_t i = 0; i < og->size(); ++i) acc += (*og)[i] * (*cv)[i];
        (*gt)[static_cast<size_t>(idx)] -= acc;
      }
    });
  }
  return c;
}

// x[n x d] + b[d] broadcast over rows.
template <class T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& b) {
  detail::check(x.rank() == 2 && b.rank() == 1 && b.dim(0) == x.dim(1),
                "add_row_bias: shapes " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const int n = x.dim(0), d = x.dim(1);
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] = x[static_cast<size_t>(i) * d + j] + b[j];
  trace_op(OpKind::kBias, c.numel(), c.numel());
  if (detail::tracking<T>({&x, &b})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x), gb = detail::grad_sink(b);
    active_tape<T>()->record([og, gx, gb, n, d] {
      if (gx)
        for (size_t i = 0; i < og->size(); ++i) (*gx)[i] += (*og)[i];
      if (gb)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) (*gb)[j] += (*og)[static_cast<size_t>(i) * d + j];
    });
  }
  return c;
}

// ------------------------------------------------------- shape movement

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::check(x.rank() == 2, "transpose: rank-2 tensor required");
  const int m = x.dim(0), n = x.dim(1);
  Tensor<T> c({n, m});
  auto& out = c.values_mut();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = x[static_cast<size_t>(i) * n + j];
  trace_op(OpKind::kTranspose, 0, c.numel());
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    active_tape<T>()->record([og, gx, m, n] {
      if (gx)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) (*gx)[static_cast<size_t>(i) * n + j] += (*og)[static_cast<size_t>(j) * m + i];
    });
  }
  return c;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::check(shape_numel(shape) == x.numel(),
                "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> c(std::move(shape), x.values());
  trace_op(OpKind::kReshape, 0, 0);
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    active_tape<T>()->record([og, gx] {
      if (gx)
        for (size_t i = 0; i < og->size(); ++i) (*gx)[i] += (*og)[i];
    });
  }
  return c;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1) {
  detail::check(x.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= x.dim(1), "slice_cols: bad range");
  const int n = x.dim(0), d = x.dim(1), w = c1 - c0;
  Tensor<T> c({n, w});
  auto& out = c.values_mut();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) out[static_cast<size_t>(i) * w + j] = x[static_cast<size_t>(i) * d + c0 + j];
  trace_op(OpKind::kSliceConcat, 0, c.numel());
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    active_tape<T>()->record([og, gx, n, d, w, c0] {
      if (gx)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < w; ++j) (*gx)[static_cast<size_t>(i) * d + c0 + j] += (*og)[static_cast<size_t>(i) * w + j];
    });
  }
  return c;
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, int r0, int r1) {
  detail::check(x.rank() == 2 && 0 <= r0 && r0 < r1 && r1 <= x.dim(0), "slice_rows: bad range");
  const int d = x.dim(1), h = r1 - r0;
  Tensor<T> c({h, d});
  auto& out = c.values_mut();
  std::copy(x.values().begin() + static_cast<size_t>(r0) * d, x.values().begin() + static_cast<size_t>(r1) * d,
            out.begin());
  trace_op(OpKind::kSliceConcat, 0, c.numel());
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    active_tape<T>()->record([og, gx, r0, d, h] {
      if (gx)
        for (size_t i = 0; i < static_cast<size_t>(h) * d; ++i) (*gx)[static_cast<size_t>(r0) * d + i] += (*og)[i];
    });
  }
  return c;
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  detail::check(!parts.empty(), "concat_cols: empty input");
  const int n = parts[0].dim(0);
  int d = 0;
  for (const auto& p : parts) {
    detail::check(p.rank() == 2 && p.dim(0) == n, "concat_cols: row mismatch");
    d += p.dim(1);
  }
  Tensor<T> c({n, d});
  auto& out = c.values_mut();
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j) out[static_cast<size_t>(i) * d + off + j] = p[static_cast<size_t>(i) * w + j];
    off += w;
  }
  trace_op(OpKind::kSliceConcat, 0, c.numel());
  bool track = false;
  if (active_tape<T>())
    for (const auto& p : parts)
      if (p.requires_grad()) track = true;
  if (track) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    std::vector<std::shared_ptr<std::vector<T>>> sinks;
    std::vector<int> widths;
    for (const auto& p : parts) {
      sinks.push_back(detail::grad_sink(p));
      widths.push_back(p.dim(1));
    }
    active_tape<T>()->record([og, sinks, widths, n, d] {
      int off = 0;
      for (size_t k = 0; k < sinks.size(); ++k) {
        const int w = widths[k];
        if (sinks[k])
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
              (*sinks[k])[static_cast<size_t>(i) * w + j] += (*og)[static_cast<size_t>(i) * d + off + j];
        off += w;
      }
    });
  }
  return c;
}

template <class T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1), "concat_rows: column mismatch");
  const int d = a.dim(1), ra = a.dim(0), rb = b.dim(0);
  Tensor<T> c({ra + rb, d});
  auto& out = c.values_mut();
  std::copy(a.values().begin(), a.values().end(), out.begin());
  std::copy(b.values().begin(), b.values().end(), out.begin() + a.numel());
  trace_op(OpKind::kSliceConcat, 0, c.numel());
  if (detail::tracking<T>({&a, &b})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto ga = detail::grad_sink(a), gb = detail::grad_sink(b);
    const size_t na = a.numel();
    active_tape<T>()->record([og, ga, gb, na] {
      if (ga)
        for (size_t i = 0; i < na; ++i) (*ga)[i] += (*og)[i];
      if (gb)
        for (size_t i = na; i < og->size(); ++i) (*gb)[i - na] += (*og)[i];
    });
  }
  return c;
}

// ------------------------------------------------------------ activations

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  trace_op(OpKind::kRelu, c.numel(), c.numel());
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    auto xv = x.data_ptr();
    active_tape<T>()->record([og, gx, xv] {
      if (gx)
        for (size_t i = 0; i < og->size(); ++i)
          if ((*xv)[i] > T(0)) (*gx)[i] += (*og)[i];
    });
  }
  return c;
}

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  for (size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))));
  }
  trace_op(OpKind::kGelu, 10ull * c.numel(), c.numel());
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    auto xv = x.data_ptr();
    active_tape<T>()->record([og, gx, xv] {
      if (!gx) return;
      for (size_t i = 0; i < og->size(); ++i) {
        const double v = static_cast<double>((*xv)[i]);
        const double th = std::tanh(kC * (v + kA * v * v * v));
        const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
        (*gx)[i] += (*og)[i] * static_cast<T>(d);
      }
    });
  }
  return c;
}

template <class T>
Tensor<T> log_elem(const Tensor<T>& x) {
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  for (size_t i = 0; i < out.size(); ++i) {
    detail::check(x[i] > T(0), "log: non-positive input");
    out[i] = std::log(x[i]);
  }
  trace_op(OpKind::kLog, c.numel(), c.numel());
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    auto xv = x.data_ptr();
    active_tape<T>()->record([og, gx, xv] {
      if (gx)
        for (size_t i = 0; i < og->size(); ++i) (*gx)[i] += (*og)[i] / (*xv)[i];
    });
  }
  return c;
}

// ---------------------------------------------------------- row softmax

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  detail::check(x.rank() == 2, "softmax_rows: rank-2 tensor required");
  const int r = x.dim(0), cdim = x.dim(1);
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  for (int i = 0; i < r; ++i) {
    const T* row = x.values().data() + static_cast<size_t>(i) * cdim;
    T* orow = out.data() + static_cast<size_t>(i) * cdim;
    T mx = row[0];
    for (int j = 1; j < cdim; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int j = 0; j < cdim; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < cdim; ++j) orow[j] /= sum;
  }
  trace_op(OpKind::kSoftmax, 5ull * c.numel(), c.numel());
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    auto cv = c.data_ptr();
    active_tape<T>()->record([og, gx, cv, r, cdim] {
      if (!gx) return;
      for (int i = 0; i < r; ++i) {
        const size_t base = static_cast<size_t>(i) * cdim;
        T dot = T(0);
        for (int j = 0; j < cdim; ++j) dot += (*og)[base + j] * (*cv)[base + j];
        for (int j = 0; j < cdim; ++j) (*gx)[base + j] += (*cv)[base + j] * ((*og)[base + j] - dot);
      }
    });
  }
  return c;
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  detail::check(x.rank() == 2, "log_softmax_rows: rank-2 tensor required");
  const int r = x.dim(0), cdim = x.dim(1);
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  for (int i = 0; i < r; ++i) {
    const T* row = x.values().data() + static_cast<size_t>(i) * cdim;
    T* orow = out.data() + static_cast<size_t>(i) * cdim;
    T mx = row[0];
    for (int j = 1; j < cdim; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int j = 0; j < cdim; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    for (int j = 0; j < cdim; ++j) orow[j] = row[j] - lse;
  }
  trace_op(OpKind::kSoftmax, 5ull * c.numel(), c.numel());
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    auto cv = c.data_ptr();
    active_tape<T>()->record([og, gx, cv, r, cdim] {
      if (!gx) return;
      for (int i = 0; i < r; ++i) {
        const size_t base = static_cast<size_t>(i) * cdim;
        T gsum = T(0);
        for (int j = 0; j < cdim; ++j) gsum += (*og)[base + j];
        for (int j = 0; j < cdim; ++j) (*gx)[base + j] += (*og)[base + j] - std::exp((*cv)[base + j]) * gsum;
      }
    });
  }
  return c;
}

// -------------------------------------------------------- normalizations

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  detail::check(x.rank() == 2 && gamma.rank() == 1 && beta.rank() == 1 && gamma.dim(0) == x.dim(1) &&
                    beta.dim(0) == x.dim(1),
                "layer_norm: shapes " + shape_str(x.shape()) + ", " + shape_str(gamma.shape()));
  const int n = x.dim(0), d = x.dim(1);
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  std::vector<T> rstd(static_cast<size_t>(n)), xhat(x.numel());
  for (int i = 0; i < n; ++i) {
    const T* row = x.values().data() + static_cast<size_t>(i) * d;
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[static_cast<size_t>(i)] = rs;
    for (int j = 0; j < d; ++j) {
      const size_t k = static_cast<size_t>(i) * d + j;
      xhat[k] = (row[j] - mean) * rs;
      out[k] = gamma[j] * xhat[k] + beta[j];
    }
  }
  trace_op(OpKind::kLayerNorm, 8ull * c.numel(), c.numel());
  if (detail::tracking<T>({&x, &gamma, &beta})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    auto gg = detail::grad_sink(gamma), gb = detail::grad_sink(beta);
    auto gv = gamma.data_ptr();
    auto xh = std::make_shared<std::vector<T>>(std::move(xhat));
    auto rs = std::make_shared<std::vector<T>>(std::move(rstd));
    active_tape<T>()->record([og, gx, gg, gb, gv, xh, rs, n, d] {
      for (int i = 0; i < n; ++i) {
        const size_t base = static_cast<size_t>(i) * d;
        if (gx) {
          T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
          for (int j = 0; j < d; ++j) {
            const T dxh = (*og)[base + j] * (*gv)[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * (*xh)[base + j];
          }
          mean_dxhat /= static_cast<T>(d);
          mean_dxhat_xhat /= static_cast<T>(d);
          for (int j = 0; j < d; ++j) {
            const T dxh = (*og)[base + j] * (*gv)[j];
            (*gx)[base + j] += (*rs)[static_cast<size_t>(i)] * (dxh - mean_dxhat - (*xh)[base + j] * mean_dxhat_xhat);
          }
        }
        if (gg)
          for (int j = 0; j < d; ++j) (*gg)[j] += (*og)[base + j] * (*xh)[base + j];
        if (gb)
          for (int j = 0; j < d; ++j) (*gb)[j] += (*og)[base + j];
      }
    });
  }
  return c;
}

// Per-channel normalization over the rows of x[n x d] using batch statistics.
// Biased variance normalizes; callers unbias when folding running stats.
template <class T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                           std::vector<T>* save_mean = nullptr, std::vector<T>* save_var = nullptr) {
  detail::check(x.rank() == 2 && gamma.dim(0) == x.dim(1) && beta.dim(0) == x.dim(1), "batch_norm: shape mismatch");
  const int n = x.dim(0), d = x.dim(1);
  detail::check(n >= 1, "batch_norm: empty batch");
  std::vector<T> mean(static_cast<size_t>(d), T(0)), var(static_cast<size_t>(d), T(0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[j] += x[static_cast<size_t>(i) * d + j];
  for (int j = 0; j < d; ++j) mean[j] /= static_cast<T>(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const T dv = x[static_cast<size_t>(i) * d + j] - mean[j];
      var[j] += dv * dv;
    }
  for (int j = 0; j < d; ++j) var[j] /= static_cast<T>(n);
  if (save_mean) *save_mean = mean;
  if (save_var) *save_var = var;

  std::vector<T> rstd(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j) rstd[j] = T(1) / std::sqrt(var[j] + eps);
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  std::vector<T> xhat(x.numel());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const size_t k = static_cast<size_t>(i) * d + j;
      xhat[k] = (x[k] - mean[j]) * rstd[j];
      out[k] = gamma[j] * xhat[k] + beta[j];
    }
  trace_op(OpKind::kBatchNorm, 8ull * c.numel(), c.numel());
  if (detail::tracking<T>({&x, &gamma, &beta})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    auto gg = detail::grad_sink(gamma), gb = detail::grad_sink(beta);
    auto gv = gamma.data_ptr();
    auto xh = std::make_shared<std::vector<T>>(std::move(xhat));
    auto rs = std::make_shared<std::vector<T>>(std::move(rstd));
    active_tape<T>()->record([og, gx, gg, gb, gv, xh, rs, n, d] {
      for (int j = 0; j < d; ++j) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int i = 0; i < n; ++i) {
          const size_t k = static_cast<size_t>(i) * d + j;
          sum_dy += (*og)[k];
          sum_dy_xhat += (*og)[k] * (*xh)[k];
        }
        if (gg) (*gg)[j] += sum_dy_xhat;
        if (gb) (*gb)[j] += sum_dy;
        if (gx) {
          const T m_dy = sum_dy / static_cast<T>(n);
          const T m_dyx = sum_dy_xhat / static_cast<T>(n);
          for (int i = 0; i < n; ++i) {
            const size_t k = static_cast<size_t>(i) * d + j;
            (*gx)[k] += (*gv)[j] * (*rs)[j] * ((*og)[k] - m_dy - (*xh)[k] * m_dyx);
          }
        }
      }
    });
  }
  return c;
}

template <class T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps) {
  detail::check(x.rank() == 2 && gamma.dim(0) == x.dim(1) && running_mean.dim(0) == x.dim(1) &&
                    running_var.dim(0) == x.dim(1),
                "batch_norm: shape mismatch");
  const int n = x.dim(0), d = x.dim(1);
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  std::vector<T> rstd(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j) rstd[j] = T(1) / std::sqrt(running_var[static_cast<size_t>(j)] + eps);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const size_t k = static_cast<size_t>(i) * d + j;
      out[k] = gamma[j] * (x[k] - running_mean[static_cast<size_t>(j)]) * rstd[j] + beta[j];
    }
  trace_op(OpKind::kBatchNorm, 8ull * c.numel(), c.numel());
  if (detail::tracking<T>({&x, &gamma, &beta})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    auto gg = detail::grad_sink(gamma), gb = detail::grad_sink(beta);
    auto gv = gamma.data_ptr();
    auto xv = x.data_ptr();
    auto rm = running_mean.data_ptr();
    auto rs = std::make_shared<std::vector<T>>(std::move(rstd));
    active_tape<T>()->record([og, gx, gg, gb, gv, xv, rm, rs, n, d] {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          const size_t k = static_cast<size_t>(i) * d + j;
          if (gx) (*gx)[k] += (*og)[k] * (*gv)[j] * (*rs)[j];
          if (gg) (*gg)[j] += (*og)[k] * ((*xv)[k] - (*rm)[j]) * (*rs)[j];
          if (gb) (*gb)[j] += (*og)[k];
        }
    });
  }
  return c;
}

// Column-wise unit L2 norm; r = sqrt(sum x^2 + eps^2) keeps zero columns at
// zero and the map smooth everywhere.
template <class T>
Tensor<T> l2_normalize_cols(const Tensor<T>& x, T eps) {
  detail::check(x.rank() == 2, "l2_normalize_cols: rank-2 tensor required");
  const int n = x.dim(0), d = x.dim(1);
  std::vector<T> rnorm(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j) {
    T ss = eps * eps;
    for (int i = 0; i < n; ++i) {
      const T v = x[static_cast<size_t>(i) * d + j];
      ss += v * v;
    }
    rnorm[j] = T(1) / std::sqrt(ss);
  }
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] = x[static_cast<size_t>(i) * d + j] * rnorm[j];
  trace_op(OpKind::kL2Norm, 3ull * c.numel(), c.numel());
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    auto cv = c.data_ptr();
    auto rn = std::make_shared<std::vector<T>>(std::move(rnorm));
    active_tape<T>()->record([og, gx, cv, rn, n, d] {
      if (!gx) return;
      for (int j = 0; j < d; ++j) {
        T dot = T(0);
        for (int i = 0; i < n; ++i) {
          const size_t k = static_cast<size_t>(i) * d + j;
          dot += (*og)[k] * (*cv)[k];
        }
        for (int i = 0; i < n; ++i) {
          const size_t k = static_cast<size_t>(i) * d + j;
          (*gx)[k] += ((*og)[k] - (*cv)[k] * dot) * (*rn)[j];
        }
      }
    });
  }
  return c;
}

// -------------------------------------------------- depthwise convolution

// x[h x w x c] (channel-last), kernels[3 x 3 x c], stride 1, zero padding 1.
template <class T>
Tensor<T> depthwise_conv3x3(const Tensor<T>& x, const Tensor<T>& kernels) {
  detail::check(x.rank() == 3, "depthwise_conv3x3: input must be h x w x c");
  detail::check(kernels.rank() == 3 && kernels.dim(0) == 3 && kernels.dim(1) == 3,
                "depthwise_conv3x3: kernels must be 3 x 3 x c");
  detail::check(kernels.dim(2) == x.dim(2), "depthwise_conv3x3: kernel channels " +
                                                std::to_string(kernels.dim(2)) + " != input channels " +
                                                std::to_string(x.dim(2)));
  const int h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  const T* xd = x.values().data();
  const T* kd = kernels.values().data();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      T* opix = out.data() + (static_cast<size_t>(i) * w + j) * ch;
      for (int di = 0; di < 3; ++di) {
        const int ii = i + di - 1;
        if (ii < 0 || ii >= h) continue;
        for (int dj = 0; dj < 3; ++dj) {
          const int jj = j + dj - 1;
          if (jj < 0 || jj >= w) continue;
          const T* xpix = xd + (static_cast<size_t>(ii) * w + jj) * ch;
          const T* kpix = kd + (static_cast<size_t>(di) * 3 + dj) * ch;
          for (int q = 0; q < ch; ++q) opix[q] += xpix[q] * kpix[q];
        }
      }
    }
  trace_op(OpKind::kDwConv, 18ull * c.numel(), c.numel());
  if (detail::tracking<T>({&x, &kernels})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x), gk = detail::grad_sink(kernels);
    auto xv = x.data_ptr(), kv = kernels.data_ptr();
    active_tape<T>()->record([og, gx, gk, xv, kv, h, w, ch] {
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const T* gpix = og->data() + (static_cast<size_t>(i) * w + j) * ch;
          for (int di = 0; di < 3; ++di) {
            const int ii = i + di - 1;
            if (ii < 0 || ii >= h) continue;
            for (int dj = 0; dj < 3; ++dj) {
              const int jj = j + dj - 1;
              if (jj < 0 || jj >= w) continue;
              const size_t xoff = (static_cast<size_t>(ii) * w + jj) * ch;
              const size_t koff = (static_cast<size_t>(di) * 3 + dj) * ch;
              if (gx)
                for (int q = 0; q < ch; ++q) (*gx)[xoff + q] += gpix[q] * (*kv)[koff + q];
              if (gk)
                for (int q = 0; q < ch; ++q) (*gk)[koff + q] += gpix[q] * (*xv)[xoff + q];
            }
          }
        }
    });
  }
  return c;
}

// -------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  Tensor<T> c = Tensor<T>::scalar(acc);
  trace_op(OpKind::kReduce, x.numel(), 1);
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    active_tape<T>()->record([og, gx] {
      if (gx)
        for (auto& g : *gx) g += (*og)[0];
    });
  }
  return c;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  detail::check(x.numel() > 0, "mean: empty tensor");
  T acc = T(0);
  for (T v : x.values()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  Tensor<T> c = Tensor<T>::scalar(acc * inv);
  trace_op(OpKind::kReduce, x.numel(), 1);
  if (detail::tracking<T>({&x})) {
    detail::mark_recorded(c);
    auto og = c.grad_ptr();
    auto gx = detail::grad_sink(x);
    active_tape<T>()->record([og, gx, inv] {
      if (gx)
        for (auto& g : *gx) g += (*og)[0] * inv;
    });
  }
  return c;
}

// ----------------------------------------------- image kernels (no grad)

namespace detail {
template <class T>
inline void forward_only_guard(const Tensor<T>& x, const char* op) {
  if (active_tape<T>() && x.requires_grad())
    throw std::logic_error(std::string(op) + ": forward-only op reached a tensor that requires grad");
}
}  // namespace detail

// Separable Gaussian, clamp-to-edge. Augmentation path; forward only.
template <class T>
Tensor<T> gaussian_blur(const Tensor<T>& x, double sigma) {
  detail::check(x.rank() == 3, "gaussian_blur: input must be h x w x c");
  detail::check(sigma > 0, "gaussian_blur: sigma must be positive");
  detail::forward_only_guard(x, "gaussian_blur");
  const int h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<T> kernel(static_cast<size_t>(2 * radius + 1));
  T ksum = T(0);
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<size_t>(i + radius)] = static_cast<T>(std::exp(-0.5 * i * i / (sigma * sigma)));
    ksum += kernel[static_cast<size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= ksum;

  std::vector<T> tmp(x.numel());
  const T* xd = x.values().data();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int q = 0; q < ch; ++q) {
        T acc = T(0);
        for (int t = -radius; t <= radius; ++t) {
          const int jj = std::clamp(j + t, 0, w - 1);
          acc += kernel[static_cast<size_t>(t + radius)] * xd[(static_cast<size_t>(i) * w + jj) * ch + q];
        }
        tmp[(static_cast<size_t>(i) * w + j) * ch + q] = acc;
      }
  Tensor<T> c(x.shape());
  auto& out = c.values_mut();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int q = 0; q < ch; ++q) {
        T acc = T(0);
        for (int t = -radius; t <= radius; ++t) {
          const int ii = std::clamp(i + t, 0, h - 1);
          acc += kernel[static_cast<size_t>(t + radius)] * tmp[(static_cast<size_t>(ii) * w + j) * ch + q];
        }
        out[(static_cast<size_t>(i) * w + j) * ch + q] = acc;
      }
  trace_op(OpKind::kImage, 4ull * (2 * radius + 1) * c.numel(), c.numel());
  return c;
}

// Half-pixel-center bilinear resampling. Forward only.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int oh, int ow) {
  detail::check(x.rank() == 3, "bilinear_resize: input must be h x w x c");
  detail::check(oh >= 1 && ow >= 1, "bilinear_resize: bad target size");
  detail::forward_only_guard(x, "bilinear_resize");
  const int h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  Tensor<T> c({oh, ow, ch});
  auto& out = c.values_mut();
  const T* xd = x.values().data();
  const double sy = static_cast<double>(h) / oh;
  const double sx = static_cast<double>(w) / ow;
  for (int i = 0; i < oh; ++i) {
    const double fy = std::max(0.0, (i + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int j = 0; j < ow; ++j) {
      const double fx = std::max(0.0, (j + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int q = 0; q < ch; ++q) {
        const double v00 = xd[(static_cast<size_t>(y0) * w + x0) * ch + q];
        const double v01 = xd[(static_cast<size_t>(y0) * w + x1) * ch + q];
        const double v10 = xd[(static_cast<size_t>(y1) * w + x0) * ch + q];
        const double v11 = xd[(static_cast<size_t>(y1) * w + x1) * ch + q];
        const double top = v00 + (v01 - v00) * wx;
        const double bot = v10 + (v11 - v10) * wx;
        out[(static_cast<size_t>(i) * ow + j) * ch + q] = static_cast<T>(top + (bot - top) * wy);
      }
    }
  }
  trace_op(OpKind::kImage, 8ull * c.numel(), c.numel());
  return c;
}

// ------------------------------------------------------- loss composites

// -sum(target * log_softmax(logits)); target is a fixed distribution.
template <class T>
Tensor<T> cross_entropy_soft(const Tensor<T>& logits, const std::vector<T>& target) {
  const int k = static_cast<int>(target.size());
  detail::check(logits.numel() == target.size(), "cross_entropy_soft: logits/target size mismatch");
  Tensor<T> row = logits.rank() == 2 ? logits : reshape(logits, {1, k});
  Tensor<T> tgt({1, k}, std::vector<T>(target));
  return scale(sum(mul(log_softmax_rows(row), tgt)), T(-1));
}

}  // namespace csvt
