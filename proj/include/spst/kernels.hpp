#pragma once

#include <cblas.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "spst/tensor.hpp"

namespace spst {

// Time-axis padding policy of a conv layer. Frequency is padded "same"
// (centered, extra on the high side) in every mode except kValid.
//   kCausalSame:     kt-1 zero frames strictly in the past
//   kAnticausalSame: kt-1 zero frames strictly in the future (the adjoint of
//                    kCausalSame; a transposed conv over this mode is causal)
//   kSymmetric:      centered on both axes
//   kValid:          no padding anywhere
enum class PadSpec { kCausalSame, kAnticausalSame, kSymmetric, kValid };

struct ConvGeom {
  int64_t out_t = 0, out_f = 0;
  int64_t pad_t_lo = 0, pad_f_lo = 0;
};

inline ConvGeom conv_geometry(PadSpec pad, int64_t in_t, int64_t in_f, int kt,
                              int kf, int st, int sf) {
  SPST_CHECK(kt >= 1 && kf >= 1 && st >= 1 && sf >= 1, "bad kernel/stride");
  ConvGeom g;
  if (pad == PadSpec::kValid) {
    SPST_CHECK(in_t >= kt && in_f >= kf, "valid conv input smaller than kernel");
    g.out_t = (in_t - kt) / st + 1;
    g.out_f = (in_f - kf) / sf + 1;
    return g;
  }
  SPST_CHECK(in_t >= 1 && in_f >= 1, "empty conv input");
  g.out_t = (in_t - 1) / st + 1;
  g.out_f = (in_f - 1) / sf + 1;
  const int64_t need_f = std::max<int64_t>(0, (g.out_f - 1) * sf + kf - in_f);
  g.pad_f_lo = need_f / 2;
  switch (pad) {
    case PadSpec::kCausalSame:
      g.pad_t_lo = kt - 1;
      break;
    case PadSpec::kAnticausalSame:
      g.pad_t_lo = 0;
      break;
    case PadSpec::kSymmetric: {
      const int64_t need_t = std::max<int64_t>(0, (g.out_t - 1) * st + kt - in_t);
      g.pad_t_lo = need_t / 2;
      break;
    }
    default:
      break;
  }
  return g;
}

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int64_t m, int64_t n,
                 int64_t k, double alpha, const double* a, int64_t lda,
                 const double* b, int64_t ldb, double beta, double* c,
                 int64_t ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, (int)m, (int)n, (int)k, alpha, a, (int)lda,
              b, (int)ldb, beta, c, (int)ldc);
}

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int64_t m, int64_t n,
                 int64_t k, float alpha, const float* a, int64_t lda,
                 const float* b, int64_t ldb, float beta, float* c,
                 int64_t ldc) {
  cblas_sgemm(CblasRowMajor, ta, tb, (int)m, (int)n, (int)k, alpha, a, (int)lda,
              b, (int)ldb, beta, c, (int)ldc);
}

// Reused workspace so the training loop does not churn the allocator.
template <typename T>
inline std::vector<T>& conv_scratch(int which) {
  thread_local std::vector<T> bufs[3];
  return bufs[which];
}

// cols is [Ci*kt*kf, out_t*out_f]; row order matches the kernel layout
// [Co][Ci][kt][kf] so the GEMM needs no reshuffle.
template <typename T>
void im2col(const T* x, int64_t ci_n, int64_t in_t, int64_t in_f,
            const ConvGeom& g, int kt, int kf, int st, int sf, T* cols) {
  const int64_t p_n = g.out_t * g.out_f;
  for (int64_t ci = 0; ci < ci_n; ++ci) {
    const T* xc = x + ci * in_t * in_f;
    for (int dt = 0; dt < kt; ++dt) {
      for (int df = 0; df < kf; ++df) {
        T* row = cols + ((ci * kt + dt) * kf + df) * p_n;
        for (int64_t ot = 0; ot < g.out_t; ++ot) {
          const int64_t it = ot * st + dt - g.pad_t_lo;
          T* dst = row + ot * g.out_f;
          if (it < 0 || it >= in_t) {
            std::fill(dst, dst + g.out_f, T(0));
            continue;
          }
          const T* src = xc + it * in_f;
          // valid of range: 0 <= of*sf + df - pad_f_lo < in_f
          int64_t of_lo = 0;
          const int64_t off = df - g.pad_f_lo;
          if (off < 0) of_lo = (-off + sf - 1) / sf;
          int64_t of_hi = g.out_f;
          if (off + (g.out_f - 1) * sf >= in_f)
            of_hi = (in_f - off + sf - 1) / sf;
          if (of_hi < of_lo) of_hi = of_lo;
          std::fill(dst, dst + of_lo, T(0));
          if (sf == 1) {
            std::memcpy(dst + of_lo, src + of_lo + off,
                        sizeof(T) * size_t(of_hi - of_lo));
          } else {
            for (int64_t of = of_lo; of < of_hi; ++of)
              dst[of] = src[of * sf + off];
          }
          std::fill(dst + of_hi, dst + g.out_f, T(0));
        }
      }
    }
  }
}

// Adjoint gather of im2col: scatter-add columns back into the input layout.
template <typename T>
void col2im(const T* cols, int64_t ci_n, int64_t in_t, int64_t in_f,
            const ConvGeom& g, int kt, int kf, int st, int sf, T* x,
            bool accumulate = false) {
  const int64_t p_n = g.out_t * g.out_f;
  if (!accumulate) std::fill(x, x + ci_n * in_t * in_f, T(0));
  for (int64_t ci = 0; ci < ci_n; ++ci) {
    T* xc = x + ci * in_t * in_f;
    for (int dt = 0; dt < kt; ++dt) {
      for (int df = 0; df < kf; ++df) {
        const T* row = cols + ((ci * kt + dt) * kf + df) * p_n;
        for (int64_t ot = 0; ot < g.out_t; ++ot) {
          const int64_t it = ot * st + dt - g.pad_t_lo;
          if (it < 0 || it >= in_t) continue;
          T* dst = xc + it * in_f;
          const T* src = row + ot * g.out_f;
          const int64_t off = df - g.pad_f_lo;
          int64_t of_lo = 0;
          if (off < 0) of_lo = (-off + sf - 1) / sf;
          int64_t of_hi = g.out_f;
          if (off + (g.out_f - 1) * sf >= in_f)
            of_hi = (in_f - off + sf - 1) / sf;
          for (int64_t of = of_lo; of < of_hi; ++of)
            dst[of * sf + off] += src[of];
        }
      }
    }
  }
}

// x [Ci,T,F] * w [Co,Ci,kt,kf] (+ bias [Co]) -> out [Co,T',F'];
// accumulate=true adds into a preallocated out instead of overwriting.
template <typename T>
void conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const T* bias,
                    PadSpec pad, int st, int sf, TensorT<T>& out,
                    bool accumulate = false) {
  SPST_CHECK(x.rank() == 3 && w.rank() == 4, "conv2d wants x[C,T,F] w[O,C,kt,kf]");
  SPST_CHECK(x.dim(0) == w.dim(1), "conv2d channel mismatch");
  const int64_t ci = x.dim(0), in_t = x.dim(1), in_f = x.dim(2);
  const int64_t co = w.dim(0);
  const int kt = (int)w.dim(2), kf = (int)w.dim(3);
  const ConvGeom g = conv_geometry(pad, in_t, in_f, kt, kf, st, sf);
  if (accumulate) {
    SPST_CHECK(out.shape == std::vector<int64_t>({co, g.out_t, g.out_f}),
               "accumulate target shape mismatch");
  } else {
    out = TensorT<T>({co, g.out_t, g.out_f});
  }
  const int64_t rows = ci * kt * kf, cols_n = g.out_t * g.out_f;
  auto& cols = conv_scratch<T>(0);
  cols.resize(size_t(rows * cols_n));
  im2col(x.data.data(), ci, in_t, in_f, g, kt, kf, st, sf, cols.data());
  gemm(CblasNoTrans, CblasNoTrans, co, cols_n, rows, T(1), w.data.data(), rows,
       cols.data(), cols_n, accumulate ? T(1) : T(0), out.data.data(), cols_n);
  if (bias) {
    for (int64_t c = 0; c < co; ++c) {
      T* o = out.data.data() + c * cols_n;
      const T b = bias[c];
      for (int64_t p = 0; p < cols_n; ++p) o[p] += b;
    }
  }
}

// Exact adjoint of conv2d_forward over the same geometry:
// y [Co,T',F'] * w -> out [Ci,out_t,out_f] (+ bias [Ci]).
// (out_t,out_f) must map back to (T',F') under the forward geometry.
template <typename T>
void conv2d_transpose_forward(const TensorT<T>& y, const TensorT<T>& w,
                              const T* bias, PadSpec pad, int st, int sf,
                              int64_t out_t, int64_t out_f, TensorT<T>& out,
                              bool accumulate = false) {
  SPST_CHECK(y.rank() == 3 && w.rank() == 4, "conv2d_transpose wants y[C,T,F] w[O,C,kt,kf]");
  SPST_CHECK(y.dim(0) == w.dim(0), "conv2d_transpose channel mismatch");
  const int64_t co = y.dim(0), ci = w.dim(1);
  const int kt = (int)w.dim(2), kf = (int)w.dim(3);
  const ConvGeom g = conv_geometry(pad, out_t, out_f, kt, kf, st, sf);
  SPST_CHECK(g.out_t == y.dim(1) && g.out_f == y.dim(2),
             "conv2d_transpose output size does not invert the forward geometry");
  const int64_t rows = ci * kt * kf, cols_n = g.out_t * g.out_f;
  auto& cols = conv_scratch<T>(1);
  cols.resize(size_t(rows * cols_n));
  gemm(CblasTrans, CblasNoTrans, rows, cols_n, co, T(1), w.data.data(), rows,
       y.data.data(), cols_n, T(0), cols.data(), cols_n);
  if (accumulate) {
    SPST_CHECK(out.shape == std::vector<int64_t>({ci, out_t, out_f}),
               "accumulate target shape mismatch");
  } else {
    out = TensorT<T>({ci, out_t, out_f});
  }
  col2im(cols.data(), ci, out_t, out_f, g, kt, kf, st, sf, out.data.data(),
         accumulate);
  if (bias) {
    for (int64_t c = 0; c < ci; ++c) {
      T* o = out.data.data() + c * out_t * out_f;
      const T b = bias[c];
      for (int64_t p = 0; p < out_t * out_f; ++p) o[p] += b;
    }
  }
}

// d(loss)/d(w) given x and d(loss)/d(out); accumulates into dw.
template <typename T>
void conv2d_backward_kernel(const TensorT<T>& x, const TensorT<T>& dout,
                            PadSpec pad, int st, int sf, TensorT<T>& dw) {
  const int64_t ci = x.dim(0), in_t = x.dim(1), in_f = x.dim(2);
  const int64_t co = dout.dim(0);
  const int kt = (int)dw.dim(2), kf = (int)dw.dim(3);
  const ConvGeom g = conv_geometry(pad, in_t, in_f, kt, kf, st, sf);
  SPST_CHECK(g.out_t == dout.dim(1) && g.out_f == dout.dim(2), "grad shape mismatch");
  const int64_t rows = ci * kt * kf, cols_n = g.out_t * g.out_f;
  auto& cols = conv_scratch<T>(2);
  cols.resize(size_t(rows * cols_n));
  im2col(x.data.data(), ci, in_t, in_f, g, kt, kf, st, sf, cols.data());
  gemm(CblasNoTrans, CblasTrans, co, rows, cols_n, T(1), dout.data.data(),
       cols_n, cols.data(), cols_n, T(1), dw.data.data(), rows);
}

}  // namespace spst
