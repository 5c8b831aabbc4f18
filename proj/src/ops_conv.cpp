// Convolution kernels: im2col + GEMM for conv3d, GEMM + scatter for the
// stride-2 transposed convolution.

#include <algorithm>

#include <Eigen/Core>

#include "mmformer/ops.hpp"

namespace mmf {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::int64_t cin, d, h, w;
  std::int64_t k, stride, pad;
  std::int64_t od, oh, ow;
  std::int64_t rows() const { return cin * k * k * k; }
  std::int64_t cols() const { return od * oh * ow; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::int64_t plane = g.oh * g.ow;
  T* row = col;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * g.d * g.h * g.w;
    for (std::int64_t kd = 0; kd < g.k; ++kd)
      for (std::int64_t kh = 0; kh < g.k; ++kh)
        for (std::int64_t kw = 0; kw < g.k; ++kw, row += g.cols()) {
          for (std::int64_t od = 0; od < g.od; ++od) {
            T* dst = row + od * plane;
            const std::int64_t id = od * g.stride - g.pad + kd;
            if (id < 0 || id >= g.d) {
              std::fill(dst, dst + plane, T(0));
              continue;
            }
            for (std::int64_t oh = 0; oh < g.oh; ++oh) {
              T* drow = dst + oh * g.ow;
              const std::int64_t ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.h) {
                std::fill(drow, drow + g.ow, T(0));
                continue;
              }
              const T* src = xc + (id * g.h + ih) * g.w;
              if (g.stride == 1) {
                // contiguous run with zero borders
                const std::int64_t lo = std::clamp<std::int64_t>(g.pad - kw, 0, g.ow);
                const std::int64_t hi = std::clamp<std::int64_t>(g.w + g.pad - kw, lo, g.ow);
                std::fill(drow, drow + lo, T(0));
                std::copy(src + lo - g.pad + kw, src + hi - g.pad + kw, drow + lo);
                std::fill(drow + hi, drow + g.ow, T(0));
                continue;
              }
              for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                const std::int64_t iw = ow * g.stride - g.pad + kw;
                drow[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T(0);
              }
            }
          }
        }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::int64_t plane = g.oh * g.ow;
  const T* row = col;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    T* xc = dx + c * g.d * g.h * g.w;
    for (std::int64_t kd = 0; kd < g.k; ++kd)
      for (std::int64_t kh = 0; kh < g.k; ++kh)
        for (std::int64_t kw = 0; kw < g.k; ++kw, row += g.cols()) {
          for (std::int64_t od = 0; od < g.od; ++od) {
            const std::int64_t id = od * g.stride - g.pad + kd;
            if (id < 0 || id >= g.d) continue;
            const T* srow = row + od * plane;
            for (std::int64_t oh = 0; oh < g.oh; ++oh) {
              const std::int64_t ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.h) continue;
              T* dst = xc + (id * g.h + ih) * g.w;
              const T* s = srow + oh * g.ow;
              if (g.stride == 1) {
                const std::int64_t lo = std::clamp<std::int64_t>(g.pad - kw, 0, g.ow);
                const std::int64_t hi = std::clamp<std::int64_t>(g.w + g.pad - kw, lo, g.ow);
                T* d = dst - g.pad + kw;
                for (std::int64_t ow = lo; ow < hi; ++ow) d[ow] += s[ow];
                continue;
              }
              for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                const std::int64_t iw = ow * g.stride - g.pad + kw;
                if (iw >= 0 && iw < g.w) dst[iw] += s[ow];
              }
            }
          }
        }
  }
}

std::int64_t out_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  const std::int64_t span = in + 2 * pad - k;
  if (span < 0) throw ShapeError("convolution output extent is non-positive");
  return span / stride + 1;
}

}  // namespace

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 5 || ws.size() != 5)
    throw ShapeError("conv3d expects rank-5 input and weight, got " + to_string(xs) + " and " +
                     to_string(ws));
  if (ws[1] != xs[1])
    throw ShapeError("conv3d channel mismatch: input " + to_string(xs) + ", weight " +
                     to_string(ws));
  if (ws[2] != ws[3] || ws[2] != ws[4] || ws[2] % 2 == 0)
    throw ShapeError("conv3d kernel must be cubic with odd extent, got " + to_string(ws));
  if (stride < 1 || stride > 2) throw ShapeError("conv3d stride must be 1 or 2");
  if (padding < 0) throw ShapeError("conv3d padding must be non-negative");
  const std::int64_t n = xs[0], cout = ws[0];
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw ShapeError("conv3d bias must have shape [Cout]");

  ConvGeometry g{xs[1], xs[2], xs[3], xs[4], ws[2], stride, padding, 0, 0, 0};
  g.od = out_extent(g.d, g.k, stride, padding);
  g.oh = out_extent(g.h, g.k, stride, padding);
  g.ow = out_extent(g.w, g.k, stride, padding);
  const std::int64_t K = g.rows(), P = g.cols();
  const std::int64_t in_stride = g.cin * g.d * g.h * g.w;

  std::vector<T> out(static_cast<std::size_t>(n * cout * P));
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(K * P));
  ConstMapMat<T> wm(weight.data().data(), cout, K);
  for (std::int64_t i = 0; i < n; ++i) {
    const T* x = input.data().data() + i * in_stride;
    const T* colp = x;
    if (!g.pointwise()) {
      im2col(x, g, col.data());
      colp = col.data();
    }
    MapMat<T> om(out.data() + i * cout * P, cout, P);
    om.noalias() = wm * ConstMapMat<T>(colp, K, P);
    if (bias.defined())
      for (std::int64_t c = 0; c < cout; ++c) om.row(c).array() += bias.data()[c];
  }

  return make_op_result<T>(
      "conv3d", {n, cout, g.od, g.oh, g.ow}, std::move(out), {input, weight, bias},
      [input, weight, bias, g, n, cout, K, P, in_stride](const BasicTensor<T>& result) mutable {
        const T* gout = result.grad().data();
        std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(K * P));
        ConstMapMat<T> wm(weight.data().data(), cout, K);
        for (std::int64_t i = 0; i < n; ++i) {
          ConstMapMat<T> go(gout + i * cout * P, cout, P);
          const T* x = input.data().data() + i * in_stride;
          if (weight.requires_grad()) {
            const T* colp = x;
            if (!g.pointwise()) {
              im2col(x, g, col.data());
              colp = col.data();
            }
            MapMat<T>(weight.grad_accumulator().data(), cout, K).noalias() +=
                go * ConstMapMat<T>(colp, K, P).transpose();
          }
          if (bias.defined() && bias.requires_grad()) {
            auto gb = bias.grad_accumulator();
            for (std::int64_t c = 0; c < cout; ++c) {
              double s = 0;
              for (std::int64_t p = 0; p < P; ++p) s += go(c, p);
              gb[c] += static_cast<T>(s);
            }
          }
          if (input.requires_grad()) {
            T* dx = input.grad_accumulator().data() + i * in_stride;
            if (g.pointwise()) {
              MapMat<T>(dx, K, P).noalias() += wm.transpose() * go;
            } else {
              MapMat<T> dcol(col.data(), K, P);
              dcol.noalias() = wm.transpose() * go;
              col2im_add(col.data(), g, dx);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> conv_transpose3d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, int stride) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 5 || ws.size() != 5)
    throw ShapeError("conv_transpose3d expects rank-5 input and weight");
  if (ws[0] != xs[1])
    throw ShapeError("conv_transpose3d channel mismatch: input " + to_string(xs) + ", weight " +
                     to_string(ws));
  if (stride != 2 || ws[2] != 2 || ws[3] != 2 || ws[4] != 2)
    throw ShapeError("conv_transpose3d supports kernel 2, stride 2 only");
  const std::int64_t n = xs[0], cin = xs[1], d = xs[2], h = xs[3], w = xs[4];
  const std::int64_t cout = ws[1];
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw ShapeError("conv_transpose3d bias must have shape [Cout]");
  const std::int64_t P = d * h * w, KO = cout * 8;
  const std::int64_t out_vox = 8 * P;

  // Column (co, a, b, c) of the GEMM output lands at (2d+a, 2h+b, 2w+c).
  auto scatter_index = [=](std::int64_t ko, std::int64_t p) {
    const std::int64_t co = ko / 8, a = (ko / 4) % 2, b = (ko / 2) % 2, c = ko % 2;
    const std::int64_t z = p / (h * w), y = (p / w) % h, x = p % w;
    return co * out_vox + ((2 * z + a) * 2 * h + (2 * y + b)) * 2 * w + (2 * x + c);
  };

  std::vector<T> out(static_cast<std::size_t>(n * cout * out_vox));
  std::vector<T> y(static_cast<std::size_t>(KO * P));
  ConstMapMat<T> wm(weight.data().data(), cin, KO);
  for (std::int64_t i = 0; i < n; ++i) {
    MapMat<T>(y.data(), KO, P).noalias() =
        wm.transpose() * ConstMapMat<T>(input.data().data() + i * cin * P, cin, P);
    T* o = out.data() + i * cout * out_vox;
    for (std::int64_t ko = 0; ko < KO; ++ko) {
      const T b = bias.defined() ? bias.data()[ko / 8] : T(0);
      for (std::int64_t p = 0; p < P; ++p) o[scatter_index(ko, p)] = y[ko * P + p] + b;
    }
  }

  return make_op_result<T>(
      "conv_transpose3d", {n, cout, 2 * d, 2 * h, 2 * w}, std::move(out), {input, weight, bias},
      [=](const BasicTensor<T>& result) mutable {
        const T* gout = result.grad().data();
        std::vector<T> gy(static_cast<std::size_t>(KO * P));
        ConstMapMat<T> wm(weight.data().data(), cin, KO);
        for (std::int64_t i = 0; i < n; ++i) {
          const T* go = gout + i * cout * out_vox;
          for (std::int64_t ko = 0; ko < KO; ++ko)
            for (std::int64_t p = 0; p < P; ++p) gy[ko * P + p] = go[scatter_index(ko, p)];
          ConstMapMat<T> gym(gy.data(), KO, P);
          ConstMapMat<T> xm(input.data().data() + i * cin * P, cin, P);
          if (weight.requires_grad())
            MapMat<T>(weight.grad_accumulator().data(), cin, KO).noalias() += xm * gym.transpose();
          if (input.requires_grad())
            MapMat<T>(input.grad_accumulator().data() + i * cin * P, cin, P).noalias() += wm * gym;
          if (bias.defined() && bias.requires_grad()) {
            auto gb = bias.grad_accumulator();
            for (std::int64_t co = 0; co < cout; ++co) {
              double s = 0;
              for (std::int64_t k = co * 8; k < co * 8 + 8; ++k)
                for (std::int64_t p = 0; p < P; ++p) s += gy[k * P + p];
              gb[co] += static_cast<T>(s);
            }
          }
        }
      });
}

template BasicTensor<float> conv3d(const BasicTensor<float>&, const BasicTensor<float>&,
                                   const BasicTensor<float>&, int, int);
template BasicTensor<double> conv3d(const BasicTensor<double>&, const BasicTensor<double>&,
                                    const BasicTensor<double>&, int, int);
template BasicTensor<float> conv_transpose3d(const BasicTensor<float>&,
                                             const BasicTensor<float>&,
                                             const BasicTensor<float>&, int);
template BasicTensor<double> conv_transpose3d(const BasicTensor<double>&,
                                              const BasicTensor<double>&,
                                              const BasicTensor<double>&, int);

}  // namespace mmf
