#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <vector>

#include "sthoi/tensor.hpp"

// Raw tensor kernels behind the differentiable ops. No graph bookkeeping here.
namespace sthoi::kernels {

using Triple = std::array<std::size_t, 3>;

struct Conv3dGeometry {
  std::size_t cin, t, h, w;
  std::size_t cout, kt, kh, kw;
  Triple stride, pad;
  std::size_t to, ho, wo;

  std::size_t patch() const { return cin * kt * kh * kw; }
  std::size_t positions() const { return to * ho * wo; }
};

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                                const char* axis) {
  if (s == 0) throw ShapeError(detail::concat("conv3d: zero stride on axis ", axis));
  const std::size_t padded = in + 2 * p;
  if (k > padded) {
    throw ShapeError(detail::concat("conv3d: kernel ", k, " exceeds padded input ", padded,
                                    " on axis ", axis));
  }
  if ((padded - k) % s != 0) {
    throw ShapeError(detail::concat("conv3d: (", in, "+2*", p, "-", k, ") not divisible by stride ",
                                    s, " on axis ", axis));
  }
  return (padded - k) / s + 1;
}

inline Conv3dGeometry conv3d_geometry(const Shape& in, const Shape& kernel, const Triple& stride,
                                      const Triple& pad) {
  if (in.size() != 4) throw ShapeError("conv3d: input must be C x T x H x W, got " + shape_str(in));
  if (kernel.size() != 5) {
    throw ShapeError("conv3d: kernel must be Cout x Cin x kt x kh x kw, got " + shape_str(kernel));
  }
  if (kernel[1] != in[0]) {
    throw ShapeError(detail::concat("conv3d: kernel expects ", kernel[1], " input channels, input has ",
                                    in[0]));
  }
  Conv3dGeometry g{in[0],     in[1],     in[2],     in[3],  kernel[0], kernel[2], kernel[3],
                   kernel[4], stride,    pad,       0,      0,         0};
  g.to = conv_out_dim(g.t, g.kt, stride[0], pad[0], "T");
  g.ho = conv_out_dim(g.h, g.kh, stride[1], pad[1], "H");
  g.wo = conv_out_dim(g.w, g.kw, stride[2], pad[2], "W");
  return g;
}

/// Unfolds the input into a [patch x positions] matrix; padded taps are zero.
inline void im2col(const Conv3dGeometry& g, const double* in, std::vector<double>& col) {
  const std::size_t P = g.positions();
  col.assign(g.patch() * P, 0.0);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* plane = in + c * g.t * g.h * g.w;
    for (std::size_t a = 0; a < g.kt; ++a) {
      for (std::size_t b = 0; b < g.kh; ++b) {
        for (std::size_t e = 0; e < g.kw; ++e, ++row) {
          double* dst = col.data() + row * P;
          for (std::size_t ot = 0; ot < g.to; ++ot) {
            const long ti = static_cast<long>(ot * g.stride[0] + a) - static_cast<long>(g.pad[0]);
            if (ti < 0 || ti >= static_cast<long>(g.t)) continue;
            for (std::size_t oh = 0; oh < g.ho; ++oh) {
              const long hi = static_cast<long>(oh * g.stride[1] + b) - static_cast<long>(g.pad[1]);
              if (hi < 0 || hi >= static_cast<long>(g.h)) continue;
              const double* src = plane + (static_cast<std::size_t>(ti) * g.h + hi) * g.w;
              double* d = dst + (ot * g.ho + oh) * g.wo;
              for (std::size_t ow = 0; ow < g.wo; ++ow) {
                const long wi =
                    static_cast<long>(ow * g.stride[2] + e) - static_cast<long>(g.pad[2]);
                if (wi >= 0 && wi < static_cast<long>(g.w)) d[ow] = src[wi];
              }
            }
          }
        }
      }
    }
  }
}

/// Folds a [patch x positions] matrix back, accumulating into `in_grad`.
inline void col2im(const Conv3dGeometry& g, const std::vector<double>& col, double* in_grad) {
  const std::size_t P = g.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* plane = in_grad + c * g.t * g.h * g.w;
    for (std::size_t a = 0; a < g.kt; ++a) {
      for (std::size_t b = 0; b < g.kh; ++b) {
        for (std::size_t e = 0; e < g.kw; ++e, ++row) {
          const double* src = col.data() + row * P;
          for (std::size_t ot = 0; ot < g.to; ++ot) {
            const long ti = static_cast<long>(ot * g.stride[0] + a) - static_cast<long>(g.pad[0]);
            if (ti < 0 || ti >= static_cast<long>(g.t)) continue;
            for (std::size_t oh = 0; oh < g.ho; ++oh) {
              const long hi = static_cast<long>(oh * g.stride[1] + b) - static_cast<long>(g.pad[1]);
              if (hi < 0 || hi >= static_cast<long>(g.h)) continue;
              double* dst = plane + (static_cast<std::size_t>(ti) * g.h + hi) * g.w;
              const double* s = src + (ot * g.ho + oh) * g.wo;
              for (std::size_t ow = 0; ow < g.wo; ++ow) {
                const long wi =
                    static_cast<long>(ow * g.stride[2] + e) - static_cast<long>(g.pad[2]);
                if (wi >= 0 && wi < static_cast<long>(g.w)) dst[wi] += s[ow];
              }
            }
          }
        }
      }
    }
  }
}

/// C[m x n] += A[m x k] * B[k x n], all row-major. Summation order over k is fixed.
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B,
                    double* C) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = C + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a0 = A[i * k + p];
      const double a1 = A[(i + 1) * k + p];
      const double a2 = A[(i + 2) * k + p];
      const double a3 = A[(i + 3) * k + p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = b[j];
        c0[j] += a0 * bj;
        c1[j] += a1 * bj;
        c2[j] += a2 * bj;
        c3[j] += a3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

/// C[m x n] += A[m x k] * B[n x k]^T.
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B,
                    double* C) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += a[p] * b[p];
        s1 += a[p + 1] * b[p + 1];
        s2 += a[p + 2] * b[p + 2];
        s3 += a[p + 3] * b[p + 3];
      }
      for (; p < k; ++p) s0 += a[p] * b[p];
      C[i * n + j] += (s0 + s1) + (s2 + s3);
    }
  }
}

/// C[m x n] += A[k x m]^T * B[k x n].
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B,
                    double* C) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = C + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* a = A + p * m + i;
      const double a0 = a[0], a1 = a[1], a2 = a[2], a3 = a[3];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = b[j];
        c0[j] += a0 * bj;
        c1[j] += a1 * bj;
        c2[j] += a2 * bj;
        c3[j] += a3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[p * m + i];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

inline std::vector<double> transpose(const std::vector<double>& a, std::size_t rows,
                                     std::size_t cols) {
  std::vector<double> t(a.size());
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = std::min(rows, r0 + kBlock), c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) t[c * rows + r] = a[r * cols + c];
      }
    }
  }
  return t;
}

inline Tensor conv3d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                             const Triple& stride, const Triple& pad) {
  const auto g = conv3d_geometry(input.shape(), kernel.shape(), stride, pad);
  if (bias.size() != g.cout) {
    throw ShapeError(detail::concat("conv3d: bias has ", bias.size(), " entries, expected ", g.cout));
  }
  Tensor out(Shape{g.cout, g.to, g.ho, g.wo});
  const std::size_t P = g.positions();
  for (std::size_t co = 0; co < g.cout; ++co) {
    std::fill_n(out.ptr() + co * P, P, bias[co]);
  }
  std::vector<double> col;
  im2col(g, input.ptr(), col);
  gemm_nn(g.cout, P, g.patch(), kernel.ptr(), col.data(), out.ptr());
  return out;
}

struct Conv3dGrads {
  Tensor input, kernel, bias;
};

inline Conv3dGrads conv3d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                                   const Triple& stride, const Triple& pad, bool need_input = true) {
  const auto g = conv3d_geometry(input.shape(), kernel.shape(), stride, pad);
  const std::size_t P = g.positions();
  Conv3dGrads gr{Tensor(), Tensor::zeros(kernel.shape()), Tensor::zeros(Shape{g.cout})};
  for (std::size_t co = 0; co < g.cout; ++co) {
    double s = 0.0;
    const double* go = grad_out.ptr() + co * P;
    for (std::size_t p = 0; p < P; ++p) s += go[p];
    gr.bias[co] = s;
  }
  std::vector<double> col;
  im2col(g, input.ptr(), col);
  const auto col_t = transpose(col, g.patch(), P);
  gemm_nn(g.cout, g.patch(), P, grad_out.ptr(), col_t.data(), gr.kernel.ptr());
  if (need_input) {
    std::vector<double> dcol(g.patch() * P, 0.0);
    gemm_tn(g.patch(), P, g.cout, kernel.ptr(), grad_out.ptr(), dcol.data());
    gr.input = Tensor::zeros(input.shape());
    col2im(g, dcol, gr.input.ptr());
  }
  return gr;
}

/// out[n x fout] = in[n x fin] * W^T + b, with W [fout x fin].
inline Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2) {
    throw ShapeError("linear: expected 2-d input and weight, got " + shape_str(input.shape()) +
                     " and " + shape_str(weight.shape()));
  }
  const std::size_t n = input.dim(0), fin = input.dim(1), fout = weight.dim(0);
  if (weight.dim(1) != fin) {
    throw ShapeError(detail::concat("linear: input has ", fin, " features, weight expects ",
                                    weight.dim(1)));
  }
  if (bias.size() != fout) {
    throw ShapeError(detail::concat("linear: bias has ", bias.size(), " entries, expected ", fout));
  }
  Tensor out(Shape{n, fout});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < fout; ++j) out.at(i, j) = bias[j];
  }
  gemm_nt(n, fout, fin, input.ptr(), weight.ptr(), out.ptr());
  return out;
}

}  // namespace sthoi::kernels
