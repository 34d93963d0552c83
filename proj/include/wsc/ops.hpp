#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "wsc/tensor.hpp"

namespace wsc {
namespace detail {

inline Tape* tape_of(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tape()) continue;
    if (tape && tape != t->tape())
      throw ValidationError("ops: inputs live on different tapes");
    tape = t->tape();
  }
  return tape;
}

// Fault-injection hook for the gradient verification harness: scales the
// adjoint contributions of mul. 1.0 in normal operation.
inline double& adjoint_fault() {
  thread_local double factor = 1.0;
  return factor;
}

inline int idiv_ceil(int a, int b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

inline int idiv_floor(int a, int b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

// Dot product with four fixed partial sums; independent chains let the loop
// pipeline. Summation order is fixed in code, so results stay reproducible.
inline double dot_raw(const double* a, const double* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 = std::fma(a[j], b[j], s0);
    s1 = std::fma(a[j + 1], b[j + 1], s1);
    s2 = std::fma(a[j + 2], b[j + 2], s2);
    s3 = std::fma(a[j + 3], b[j + 3], s3);
  }
  double s = (s0 + s1) + (s2 + s3);
  for (; j < n; ++j) s = std::fma(a[j], b[j], s);
  return s;
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ValidationError(std::string(op) + ": shape mismatch " +
                          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// Deliberately corrupts the mul adjoint while alive; used as the negative
// control of the gradient checker.
struct ScopedAdjointFault {
  explicit ScopedAdjointFault(double factor) { detail::adjoint_fault() = factor; }
  ~ScopedAdjointFault() { detail::adjoint_fault() = 1.0; }
};

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

// adjoint: dL/da += g, dL/db += g
inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  Tensor out(a.shape());
  const int n = out.size();
  for (int i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (Tape* tp = detail::tape_of({&a, &b})) {
    const int na = a.node(), nb = b.node();
    int id = tp->record(out.shape(), {na, nb}, [na, nb, n](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (na >= 0) {
        auto& ga = t.grad_buf(na);
        for (int i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (nb >= 0) {
        auto& gb = t.grad_buf(nb);
        for (int i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
    tp->bind(out, id);
  }
  return out;
}

// adjoint: dL/da += g, dL/db -= g
inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  Tensor out(a.shape());
  const int n = out.size();
  for (int i = 0; i < n; ++i) out[i] = a[i] - b[i];
  if (Tape* tp = detail::tape_of({&a, &b})) {
    const int na = a.node(), nb = b.node();
    int id = tp->record(out.shape(), {na, nb}, [na, nb, n](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (na >= 0) {
        auto& ga = t.grad_buf(na);
        for (int i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (nb >= 0) {
        auto& gb = t.grad_buf(nb);
        for (int i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
    tp->bind(out, id);
  }
  return out;
}

// adjoint: dL/da += g*b, dL/db += g*a
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  Tensor out(a.shape());
  const int n = out.size();
  for (int i = 0; i < n; ++i) out[i] = a[i] * b[i];
  if (Tape* tp = detail::tape_of({&a, &b})) {
    const int na = a.node(), nb = b.node();
    Tensor av = a, bv = b;
    int id = tp->record(out.shape(), {na, nb}, [na, nb, n, av, bv](Tape& t, int self) {
      const double fault = detail::adjoint_fault();
      const auto& g = t.grad_buf(self);
      if (na >= 0) {
        auto& ga = t.grad_buf(na);
        for (int i = 0; i < n; ++i) ga[i] += fault * g[i] * bv[i];
      }
      if (nb >= 0) {
        auto& gb = t.grad_buf(nb);
        for (int i = 0; i < n; ++i) gb[i] += fault * g[i] * av[i];
      }
    });
    tp->bind(out, id);
  }
  return out;
}

// Denominator elements with |x| < 1e-12 are rejected outright; the cosine
// head adds its own epsilon before calling this.
// adjoint: dL/da += g/b, dL/db -= g*a/b^2
inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("div", a, b);
  const int n = a.size();
  for (int i = 0; i < n; ++i)
    if (std::abs(b[i]) < 1e-12)
      throw NumericError("div: denominator element " + std::to_string(b[i]) +
                         " at index " + std::to_string(i) + " below 1e-12");
  Tensor out(a.shape());
  for (int i = 0; i < n; ++i) out[i] = a[i] / b[i];
  if (Tape* tp = detail::tape_of({&a, &b})) {
    const int na = a.node(), nb = b.node();
    Tensor av = a, bv = b;
    int id = tp->record(out.shape(), {na, nb}, [na, nb, n, av, bv](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (na >= 0) {
        auto& ga = t.grad_buf(na);
        for (int i = 0; i < n; ++i) ga[i] += g[i] / bv[i];
      }
      if (nb >= 0) {
        auto& gb = t.grad_buf(nb);
        for (int i = 0; i < n; ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
      }
    });
    tp->bind(out, id);
  }
  return out;
}

// adjoint: dL/dx += g * (x > 0); the subgradient at 0 is taken as 0
inline Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const int n = x.size();
  for (int i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (Tape* tp = detail::tape_of({&x})) {
    const int nx = x.node();
    Tensor xv = x;
    int id = tp->record(out.shape(), {nx}, [nx, n, xv](Tape& t, int self) {
      if (nx < 0) return;
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(nx);
      for (int i = 0; i < n; ++i)
        if (xv[i] > 0.0) gx[i] += g[i];
    });
    tp->bind(out, id);
  }
  return out;
}

// adjoint: dL/dx += g * exp(x)
inline Tensor exp(const Tensor& x) {
  Tensor out(x.shape());
  const int n = x.size();
  for (int i = 0; i < n; ++i) out[i] = std::exp(x[i]);
  if (Tape* tp = detail::tape_of({&x})) {
    const int nx = x.node();
    Tensor ov = out;
    int id = tp->record(out.shape(), {nx}, [nx, n, ov](Tape& t, int self) {
      if (nx < 0) return;
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(nx);
      for (int i = 0; i < n; ++i) gx[i] += g[i] * ov[i];
    });
    tp->bind(out, id);
  }
  return out;
}

// Negative inputs are rejected.
// adjoint: dL/dx += g * 0.5/sqrt(x); the subgradient at 0 is taken as 0
inline Tensor sqrt(const Tensor& x) {
  const int n = x.size();
  for (int i = 0; i < n; ++i)
    if (x[i] < 0.0)
      throw NumericError("sqrt: negative input " + std::to_string(x[i]) +
                         " at index " + std::to_string(i));
  Tensor out(x.shape());
  for (int i = 0; i < n; ++i) out[i] = std::sqrt(x[i]);
  if (Tape* tp = detail::tape_of({&x})) {
    const int nx = x.node();
    Tensor ov = out;
    int id = tp->record(out.shape(), {nx}, [nx, n, ov](Tape& t, int self) {
      if (nx < 0) return;
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(nx);
      for (int i = 0; i < n; ++i)
        if (ov[i] > 0.0) gx[i] += g[i] * 0.5 / ov[i];
    });
    tp->bind(out, id);
  }
  return out;
}

// adjoint: dL/dx += c * g
inline Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape());
  const int n = x.size();
  for (int i = 0; i < n; ++i) out[i] = c * x[i];
  if (Tape* tp = detail::tape_of({&x})) {
    const int nx = x.node();
    int id = tp->record(out.shape(), {nx}, [nx, n, c](Tape& t, int self) {
      if (nx < 0) return;
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(nx);
      for (int i = 0; i < n; ++i) gx[i] += c * g[i];
    });
    tp->bind(out, id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

// adjoint: dL/dx_i += g
inline Tensor sum(const Tensor& x) {
  const int n = x.size();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += x[i];
  Tensor out = Tensor::scalar(acc);
  if (Tape* tp = detail::tape_of({&x})) {
    const int nx = x.node();
    int id = tp->record(out.shape(), {nx}, [nx, n](Tape& t, int self) {
      if (nx < 0) return;
      const double g = t.grad_buf(self)[0];
      auto& gx = t.grad_buf(nx);
      for (int i = 0; i < n; ++i) gx[i] += g;
    });
    tp->bind(out, id);
  }
  return out;
}

// adjoint: dL/dx_i += g/n
inline Tensor mean(const Tensor& x) {
  const int n = x.size();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += x[i];
  Tensor out = Tensor::scalar(acc / n);
  if (Tape* tp = detail::tape_of({&x})) {
    const int nx = x.node();
    int id = tp->record(out.shape(), {nx}, [nx, n](Tape& t, int self) {
      if (nx < 0) return;
      const double g = t.grad_buf(self)[0] / n;
      auto& gx = t.grad_buf(nx);
      for (int i = 0; i < n; ++i) gx[i] += g;
    });
    tp->bind(out, id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// [m,k] x [k,n] -> [m,n]
// adjoint: dL/dA += g B^T, dL/dB += A^T g
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ValidationError("matmul: operands must be 2-d, got " +
                          shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ValidationError("matmul: inner dims differ, " + shape_str(a.shape()) +
                          " x " + shape_str(b.shape()));
  Tensor out({m, n});
  {
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i)
      for (int l = 0; l < k; ++l) {
        const double av = pa[i * k + l];
        const double* pbrow = pb + l * n;
        double* porow = po + i * n;
        for (int j = 0; j < n; ++j) porow[j] += av * pbrow[j];
      }
  }
  if (Tape* tp = detail::tape_of({&a, &b})) {
    const int na = a.node(), nb = b.node();
    Tensor av = a, bv = b;
    int id = tp->record(out.shape(), {na, nb},
                        [na, nb, m, k, n, av, bv](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (na >= 0) {
        auto& ga = t.grad_buf(na);
        const double* pb = bv.data();
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            ga[i * k + l] += detail::dot_raw(g.data() + i * n, pb + l * n, n);
          }
      }
      if (nb >= 0) {
        auto& gb = t.grad_buf(nb);
        const double* pa = av.data();
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            const double aval = pa[i * k + l];
            const double* grow = g.data() + i * n;
            double* gbrow = gb.data() + l * n;
            for (int j = 0; j < n; ++j)
              gbrow[j] = std::fma(aval, grow[j], gbrow[j]);
          }
      }
    });
    tp->bind(out, id);
  }
  return out;
}

// adjoint: dL/dX += g^T
inline Tensor transpose(const Tensor& x) {
  if (x.shape().size() != 2)
    throw ValidationError("transpose: operand must be 2-d, got " +
                          shape_str(x.shape()));
  const int m = x.shape()[0], n = x.shape()[1];
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  if (Tape* tp = detail::tape_of({&x})) {
    const int nx = x.node();
    int id = tp->record(out.shape(), {nx}, [nx, m, n](Tape& t, int self) {
      if (nx < 0) return;
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(nx);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
    tp->bind(out, id);
  }
  return out;
}

// Row-wise softmax with max subtraction for stability.
// adjoint per row: dL/dx_j += y_j * (g_j - sum_k g_k y_k)
inline Tensor softmax_rows(const Tensor& x) {
  if (x.shape().size() != 2)
    throw ValidationError("softmax-rows: operand must be 2-d, got " +
                          shape_str(x.shape()));
  const int m = x.shape()[0], n = x.shape()[1];
  Tensor out(x.shape());
  for (int i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    double* orow = out.data() + i * n;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= s;
  }
  if (Tape* tp = detail::tape_of({&x})) {
    const int nx = x.node();
    Tensor ov = out;
    int id = tp->record(out.shape(), {nx}, [nx, m, n, ov](Tape& t, int self) {
      if (nx < 0) return;
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(nx);
      for (int i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        const double* yrow = ov.data() + i * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += grow[j] * yrow[j];
        double* gxrow = gx.data() + i * n;
        for (int j = 0; j < n; ++j) gxrow[j] += yrow[j] * (grow[j] - dot);
      }
    });
    tp->bind(out, id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concatenation
// ---------------------------------------------------------------------------

// 1-d tensors concatenate along axis 0; 2-d along axis 0 (rows) or 1 (cols).
// adjoint: slices of g route back to the inputs.
inline Tensor concat(const std::vector<Tensor>& parts, int axis = 0) {
  if (parts.empty()) throw ValidationError("concat: no inputs");
  const std::size_t rank = parts[0].shape().size();
  for (const Tensor& p : parts)
    if (p.shape().size() != rank)
      throw ValidationError("concat: mixed ranks");
  if (rank != 1 && rank != 2)
    throw ValidationError("concat: only 1-d and 2-d tensors supported");
  if (axis < 0 || axis >= static_cast<int>(rank))
    throw ValidationError("concat: axis " + std::to_string(axis) +
                          " out of range for rank " + std::to_string(rank));

  std::vector<const Tensor*> ts;
  for (const Tensor& p : parts) ts.push_back(&p);
  Tape* tp = nullptr;
  for (const Tensor* t : ts)
    if (t->tape()) {
      if (tp && tp != t->tape())
        throw ValidationError("ops: inputs live on different tapes");
      tp = t->tape();
    }

  Tensor out;
  if (rank == 1) {
    int total = 0;
    for (const Tensor& p : parts) total += p.shape()[0];
    out = Tensor({total});
    int off = 0;
    for (const Tensor& p : parts) {
      std::copy(p.data(), p.data() + p.size(), out.data() + off);
      off += p.size();
    }
    if (tp) {
      std::vector<int> nodes;
      std::vector<int> sizes;
      for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        sizes.push_back(p.size());
      }
      int id = tp->record(out.shape(), nodes, [nodes, sizes](Tape& t, int self) {
        const auto& g = t.grad_buf(self);
        int off = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i] >= 0) {
            auto& gi = t.grad_buf(nodes[i]);
            for (int j = 0; j < sizes[i]; ++j) gi[j] += g[off + j];
          }
          off += sizes[i];
        }
      });
      tp->bind(out, id);
    }
    return out;
  }

  // rank == 2
  if (axis == 0) {
    const int cols = parts[0].shape()[1];
    int rows = 0;
    for (const Tensor& p : parts) {
      if (p.shape()[1] != cols)
        throw ValidationError("concat axis 0: column counts differ, " +
                              shape_str(parts[0].shape()) + " vs " +
                              shape_str(p.shape()));
      rows += p.shape()[0];
    }
    out = Tensor({rows, cols});
    int off = 0;
    for (const Tensor& p : parts) {
      std::copy(p.data(), p.data() + p.size(), out.data() + off);
      off += p.size();
    }
    if (tp) {
      std::vector<int> nodes, sizes;
      for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        sizes.push_back(p.size());
      }
      int id = tp->record(out.shape(), nodes, [nodes, sizes](Tape& t, int self) {
        const auto& g = t.grad_buf(self);
        int off = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i] >= 0) {
            auto& gi = t.grad_buf(nodes[i]);
            for (int j = 0; j < sizes[i]; ++j) gi[j] += g[off + j];
          }
          off += sizes[i];
        }
      });
      tp->bind(out, id);
    }
    return out;
  }

  // axis == 1
  const int rows = parts[0].shape()[0];
  int cols = 0;
  for (const Tensor& p : parts) {
    if (p.shape()[0] != rows)
      throw ValidationError("concat axis 1: row counts differ, " +
                            shape_str(parts[0].shape()) + " vs " +
                            shape_str(p.shape()));
    cols += p.shape()[1];
  }
  out = Tensor({rows, cols});
  {
    int coff = 0;
    for (const Tensor& p : parts) {
      const int pc = p.shape()[1];
      for (int r = 0; r < rows; ++r)
        std::copy(p.data() + r * pc, p.data() + (r + 1) * pc,
                  out.data() + r * cols + coff);
      coff += pc;
    }
  }
  if (tp) {
    std::vector<int> nodes, widths;
    for (const Tensor& p : parts) {
      nodes.push_back(p.node());
      widths.push_back(p.shape()[1]);
    }
    int id = tp->record(out.shape(), nodes,
                        [nodes, widths, rows, cols](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      int coff = 0;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i] >= 0) {
          auto& gi = t.grad_buf(nodes[i]);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < widths[i]; ++c)
              gi[r * widths[i] + c] += g[r * cols + coff + c];
        }
        coff += widths[i];
      }
    });
    tp->bind(out, id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] += A[m,k] * B[k,n], accumulation ascending in l; the j-inner loop
// runs over contiguous memory in both B and C.
inline void matmul_acc_raw(const double* a, const double* b, double* c, int m,
                           int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      const double av = a[i * k + l];
      const double* brow = b + l * n;
      double* crow = c + i * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}


// Patch matrix [C*kh*kw, Ho*Wo], rows ordered (c,ky,kx) ascending, zeros for
// out-of-bounds taps.
inline std::vector<double> im2col(const double* in, int C, int H, int W,
                                  int kh, int kw, int stride, int padding,
                                  int Ho, int Wo) {
  std::vector<double> cols(static_cast<std::size_t>(C) * kh * kw * Ho * Wo,
                           0.0);
  std::size_t row = 0;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx, ++row) {
        double* dst = cols.data() + row * Ho * Wo;
        const int ylo = std::max(0, idiv_ceil(padding - ky, stride));
        const int yhi = std::min(Ho - 1, idiv_floor(H - 1 + padding - ky, stride));
        const int xlo = std::max(0, idiv_ceil(padding - kx, stride));
        const int xhi = std::min(Wo - 1, idiv_floor(W - 1 + padding - kx, stride));
        const int ofs = kx - padding;
        for (int y = ylo; y <= yhi; ++y) {
          const int iy = y * stride - padding + ky;
          const double* src = in + (c * H + iy) * W;
          if (stride == 1) {
            for (int x = xlo; x <= xhi; ++x) dst[y * Wo + x] = src[x + ofs];
          } else {
            for (int x = xlo; x <= xhi; ++x)
              dst[y * Wo + x] = src[x * stride + ofs];
          }
        }
      }
  return cols;
}

// Scatter-add of a patch-matrix gradient back onto the input gradient.
inline void col2im_acc(const std::vector<double>& cols, double* gi, int C,
                       int H, int W, int kh, int kw, int stride, int padding,
                       int Ho, int Wo) {
  std::size_t row = 0;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const double* src = cols.data() + row * Ho * Wo;
        const int ylo = std::max(0, idiv_ceil(padding - ky, stride));
        const int yhi = std::min(Ho - 1, idiv_floor(H - 1 + padding - ky, stride));
        const int xlo = std::max(0, idiv_ceil(padding - kx, stride));
        const int xhi = std::min(Wo - 1, idiv_floor(W - 1 + padding - kx, stride));
        const int ofs = kx - padding;
        for (int y = ylo; y <= yhi; ++y) {
          const int iy = y * stride - padding + ky;
          double* dst = gi + (c * H + iy) * W;
          if (stride == 1) {
            for (int x = xlo; x <= xhi; ++x) dst[x + ofs] += src[y * Wo + x];
          } else {
            for (int x = xlo; x <= xhi; ++x)
              dst[x * stride + ofs] += src[y * Wo + x];
          }
        }
      }
}

}  // namespace detail

// input [C,H,W], kernels [O,C,kh,kw] -> [O,Ho,Wo] with
// Ho = (H + 2p - kh)/s + 1. Runs as kernel-matrix x patch-matrix, which
// keeps the per-output accumulation in ascending (c,ky,kx) order, i.e.
// bit-identical to the naive quadruple-loop definition.
// adjoint: dL/dK[o,c,ky,kx] += sum_{y,x} g[o,y,x]*in[c,ys-p+ky,xs-p+kx]
//          dL/din[c,iy,ix]  += sum matching g[o,y,x]*K[o,c,ky,kx]
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride,
                     int padding) {
  if (input.shape().size() != 3)
    throw ValidationError("conv2d: input must be [C,H,W], got " +
                          shape_str(input.shape()));
  if (kernels.shape().size() != 4)
    throw ValidationError("conv2d: kernels must be [O,C,kh,kw], got " +
                          shape_str(kernels.shape()));
  if (stride < 1) throw ValidationError("conv2d: stride must be positive");
  if (padding < 0) throw ValidationError("conv2d: padding must be >= 0");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int O = kernels.shape()[0], KC = kernels.shape()[1];
  const int kh = kernels.shape()[2], kw = kernels.shape()[3];
  if (KC != C)
    throw ValidationError("conv2d: channel mismatch, input " +
                          shape_str(input.shape()) + " vs kernels " +
                          shape_str(kernels.shape()));
  if (kh > H + 2 * padding || kw > W + 2 * padding)
    throw ValidationError("conv2d: kernel exceeds padded input");
  const int Ho = (H + 2 * padding - kh) / stride + 1;
  const int Wo = (W + 2 * padding - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0)
    throw ValidationError("conv2d: zero-size output");

  const int ckk = C * kh * kw;
  const int hw = Ho * Wo;
  auto cols = std::make_shared<std::vector<double>>(
      detail::im2col(input.data(), C, H, W, kh, kw, stride, padding, Ho, Wo));

  Tensor out({O, Ho, Wo});
  detail::matmul_acc_raw(kernels.data(), cols->data(), out.data(), O, ckk, hw);

  if (Tape* tp = detail::tape_of({&input, &kernels})) {
    const int ni = input.node(), nk = kernels.node();
    Tensor kv = kernels;
    int id = tp->record(out.shape(), {ni, nk}, [=](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (nk >= 0) {
        // dK (as [O, ckk]) += g (as [O, hw]) * cols^T
        auto& gk = t.grad_buf(nk);
        for (int o = 0; o < O; ++o)
          for (int r = 0; r < ckk; ++r) {
            gk[o * ckk + r] +=
                detail::dot_raw(g.data() + o * hw, cols->data() + r * hw, hw);
          }
      }
      if (ni >= 0) {
        // din += col2im(K^T (as [ckk, O]) * g (as [O, hw]))
        std::vector<double> gcols(static_cast<std::size_t>(ckk) * hw, 0.0);
        for (int o = 0; o < O; ++o)
          for (int r = 0; r < ckk; ++r) {
            const double kval = kv[o * ckk + r];
            const double* grow = g.data() + o * hw;
            double* crow = gcols.data() + r * hw;
            for (int j = 0; j < hw; ++j)
              crow[j] = std::fma(kval, grow[j], crow[j]);
          }
        detail::col2im_acc(gcols, t.grad_buf(ni).data(), C, H, W, kh, kw,
                           stride, padding, Ho, Wo);
      }
    });
    tp->bind(out, id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generic dispatcher
// ---------------------------------------------------------------------------

enum class OpKind {
  kAdd, kSub, kMul, kDiv, kMatmul, kRelu, kSum, kMean, kConcat, kScale,
  kExp, kSqrt, kSoftmaxRows, kTranspose
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kRelu: return "relu";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kConcat: return "concat";
    case OpKind::kScale: return "scale";
    case OpKind::kExp: return "exp";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kSoftmaxRows: return "softmax-rows";
    case OpKind::kTranspose: return "transpose";
  }
  return "?";
}

inline Tensor apply_op(OpKind kind, const std::vector<Tensor>& in,
                       double scalar = 1.0, int axis = 0) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n)
      throw ValidationError(std::string(op_name(kind)) + ": expected " +
                            std::to_string(n) + " inputs, got " +
                            std::to_string(in.size()));
  };
  switch (kind) {
    case OpKind::kAdd: arity(2); return add(in[0], in[1]);
    case OpKind::kSub: arity(2); return sub(in[0], in[1]);
    case OpKind::kMul: arity(2); return mul(in[0], in[1]);
    case OpKind::kDiv: arity(2); return div(in[0], in[1]);
    case OpKind::kMatmul: arity(2); return matmul(in[0], in[1]);
    case OpKind::kRelu: arity(1); return relu(in[0]);
    case OpKind::kSum: arity(1); return sum(in[0]);
    case OpKind::kMean: arity(1); return mean(in[0]);
    case OpKind::kConcat: return concat(in, axis);
    case OpKind::kScale: arity(1); return scale(in[0], scalar);
    case OpKind::kExp: arity(1); return exp(in[0]);
    case OpKind::kSqrt: arity(1); return sqrt(in[0]);
    case OpKind::kSoftmaxRows: arity(1); return softmax_rows(in[0]);
    case OpKind::kTranspose: arity(1); return transpose(in[0]);
  }
  throw ValidationError("apply_op: unknown op kind");
}

}  // namespace wsc
