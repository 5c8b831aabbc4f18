#include "mmformer/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numeric>

namespace mmf {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

std::int64_t product(const Shape& s, std::size_t begin, std::size_t end) {
  std::int64_t p = 1;
  for (std::size_t i = begin; i < end; ++i) p *= s[i];
  return p;
}

int normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary(const char* name, const BasicTensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.data()[i]);
  return make_op_result<T>(name, x.shape(), std::move(out), {x},
                           [x, deriv](const BasicTensor<T>& r) mutable {
                             auto gx = x.grad_accumulator();
                             auto go = r.grad();
                             auto xv = x.data();
                             for (std::size_t i = 0; i < gx.size(); ++i)
                               gx[i] += go[i] * deriv(xv[i], r.data()[i]);
                           });
}

// Normalises contiguous blocks of `block` elements; `channel_of(i)` maps an
// element offset within a block to its affine-parameter index.
template <typename T, typename ChannelOf>
BasicTensor<T> normalize_blocks(const char* name, const BasicTensor<T>& x, std::int64_t blocks,
                                std::int64_t block, const BasicTensor<T>& gamma,
                                const BasicTensor<T>& beta, double eps, std::int64_t period,
                                ChannelOf channel_of) {
  if (eps <= 0) throw ShapeError(std::string(name) + ": eps must be positive");
  auto xv = x.data();
  std::vector<double> mean(static_cast<std::size_t>(blocks)), rstd(mean.size());
  std::vector<T> out(xv.size());
  for (std::int64_t b = 0; b < blocks; ++b) {
    const T* p = xv.data() + b * block;
    double m = 0;
    for (std::int64_t i = 0; i < block; ++i) m += p[i];
    m /= static_cast<double>(block);
    double v = 0;
    for (std::int64_t i = 0; i < block; ++i) v += (p[i] - m) * (p[i] - m);
    v /= static_cast<double>(block);
    mean[b] = m;
    rstd[b] = 1.0 / std::sqrt(v + eps);
    const std::int64_t cbase = (b % period);
    for (std::int64_t i = 0; i < block; ++i) {
      const std::int64_t c = channel_of(cbase, i);
      out[b * block + i] =
          static_cast<T>((p[i] - m) * rstd[b] * gamma.data()[c] + beta.data()[c]);
    }
  }
  return make_op_result<T>(
      name, x.shape(), std::move(out), {x, gamma, beta},
      [=](const BasicTensor<T>& r) mutable {
        auto go = r.grad();
        auto xv = x.data();
        std::vector<double> xhat(static_cast<std::size_t>(block)), dxhat(xhat.size());
        std::vector<double> dgamma(gamma.data().size(), 0.0), dbeta(dgamma.size(), 0.0);
        for (std::int64_t b = 0; b < blocks; ++b) {
          const std::int64_t cbase = (b % period);
          const T* p = xv.data() + b * block;
          const T* g = go.data() + b * block;
          double mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (std::int64_t i = 0; i < block; ++i) {
            const std::int64_t c = channel_of(cbase, i);
            xhat[i] = (p[i] - mean[b]) * rstd[b];
            dxhat[i] = static_cast<double>(g[i]) * gamma.data()[c];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xhat[i];
          }
          mean_dxhat /= static_cast<double>(block);
          mean_dxhat_xhat /= static_cast<double>(block);
          for (std::int64_t i = 0; i < block; ++i) {
            const std::int64_t c = channel_of(cbase, i);
            dgamma[c] += g[i] * xhat[i];
            dbeta[c] += g[i];
          }
          if (x.requires_grad()) {
            T* dx = x.grad_accumulator().data() + b * block;
            for (std::int64_t i = 0; i < block; ++i)
              dx[i] += static_cast<T>(rstd[b] * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat));
          }
        }
        if (gamma.requires_grad()) {
          auto gg = gamma.grad_accumulator();
          for (std::size_t c = 0; c < gg.size(); ++c) gg[c] += static_cast<T>(dgamma[c]);
        }
        if (beta.requires_grad()) {
          auto gb = beta.grad_accumulator();
          for (std::size_t c = 0; c < gb.size(); ++c) gb[c] += static_cast<T>(dbeta[c]);
        }
      });
}

// Generic axis permutation.
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<int>& perm) {
  const Shape& in = a.shape();
  const std::size_t r = in.size();
  Shape out_shape(r);
  for (std::size_t k = 0; k < r; ++k) out_shape[k] = in[static_cast<std::size_t>(perm[k])];
  std::vector<std::int64_t> in_strides(r, 1);
  for (std::size_t k = r - 1; k > 0; --k) in_strides[k - 1] = in_strides[k] * in[k];
  std::vector<std::int64_t> src_stride(r);
  for (std::size_t k = 0; k < r; ++k) src_stride[k] = in_strides[static_cast<std::size_t>(perm[k])];

  const std::int64_t total = a.numel();
  std::vector<std::int64_t> map(static_cast<std::size_t>(total));
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  for (std::int64_t o = 0; o < total; ++o) {
    map[o] = src;
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      src += src_stride[k];
      if (idx[k] < out_shape[k]) break;
      src -= src_stride[k] * idx[k];
      idx[k] = 0;
    }
  }
  std::vector<T> out(static_cast<std::size_t>(total));
  for (std::int64_t o = 0; o < total; ++o) out[o] = a.data()[map[o]];
  return make_op_result<T>("permute", out_shape, std::move(out), {a},
                           [a, map = std::move(map)](const BasicTensor<T>& res) mutable {
                             auto ga = a.grad_accumulator();
                             auto go = res.grad();
                             for (std::size_t o = 0; o < map.size(); ++o) ga[map[o]] += go[o];
                           });
}

struct LerpAxis {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> frac;
};

LerpAxis lerp_axis(std::int64_t in, std::int64_t out) {
  LerpAxis ax;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = i0 < in - 1 ? i0 + 1 : i0;
    ax.lo.push_back(i0);
    ax.hi.push_back(i1);
    ax.frac.push_back(src - static_cast<double>(i0));
  }
  return ax;
}

}  // namespace

template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& input, int groups, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps) {
  const Shape& s = input.shape();
  if (s.size() < 2) throw ShapeError("group_norm expects [N,C,...]");
  const std::int64_t c = s[1];
  if (groups <= 0 || c % groups != 0)
    throw ShapeError("group_norm: channels " + std::to_string(c) + " not divisible by groups " +
                     std::to_string(groups));
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw ShapeError("group_norm: gamma/beta must have shape [C]");
  const std::int64_t vox = product(s, 2, s.size());
  const std::int64_t cg = c / groups;
  return normalize_blocks<T>("group_norm", input, s[0] * groups, cg * vox, gamma, beta, eps,
                             groups, [cg, vox](std::int64_t g, std::int64_t i) {
                               return g * cg + i / vox;
                             });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps) {
  const Shape& s = input.shape();
  const std::int64_t c = s.back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw ShapeError("layer_norm: gamma/beta must match the last axis");
  return normalize_blocks<T>("layer_norm", input, input.numel() / c, c, gamma, beta, eps, 1,
                             [](std::int64_t, std::int64_t i) { return i; });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  return unary<T>(
      "relu", input, [](T v) { return v <= T(0) ? T(0) : v; },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& input) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary<T>(
      "gelu", input,
      [](T v) {
        const double x = v;
        return static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
      },
      [](T v, T) {
        const double x = v;
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        return static_cast<T>(cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x));
      });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  return unary<T>(
      "sigmoid", input,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  const Shape& xs = input.shape();
  if (weight.rank() != 2 || xs.empty() || xs.back() != weight.dim(0))
    throw ShapeError("linear: inner dimension mismatch between " + to_string(xs) + " and " +
                     to_string(weight.shape()));
  const std::int64_t din = weight.dim(0), dout = weight.dim(1);
  if (bias.defined() && bias.shape() != Shape{dout})
    throw ShapeError("linear: bias must have shape [Dout]");
  const std::int64_t rows = input.numel() / din;
  Shape out_shape = xs;
  out_shape.back() = dout;
  std::vector<T> out(static_cast<std::size_t>(rows * dout));
  MapMat<T> om(out.data(), rows, dout);
  om.noalias() = ConstMapMat<T>(input.data().data(), rows, din) *
                 ConstMapMat<T>(weight.data().data(), din, dout);
  if (bias.defined())
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < dout; ++j) om(r, j) += bias.data()[j];
  return make_op_result<T>(
      "linear", out_shape, std::move(out), {input, weight, bias},
      [=](const BasicTensor<T>& res) mutable {
        ConstMapMat<T> go(res.grad().data(), rows, dout);
        ConstMapMat<T> xm(input.data().data(), rows, din);
        ConstMapMat<T> wm(weight.data().data(), din, dout);
        if (weight.requires_grad())
          MapMat<T>(weight.grad_accumulator().data(), din, dout).noalias() += xm.transpose() * go;
        if (input.requires_grad())
          MapMat<T>(input.grad_accumulator().data(), rows, din).noalias() += go * wm.transpose();
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_accumulator();
          for (std::int64_t j = 0; j < dout; ++j) {
            double s = 0;
            for (std::int64_t r = 0; r < rows; ++r) s += go(r, j);
            gb[j] += static_cast<T>(s);
          }
        }
      });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& lhs, const BasicTensor<T>& rhs, bool transpose_rhs) {
  if (lhs.rank() != 3 || rhs.rank() != 3 || lhs.dim(0) != rhs.dim(0))
    throw ShapeError("matmul expects rank-3 operands with equal batch");
  const std::int64_t b = lhs.dim(0), m = lhs.dim(1), k = lhs.dim(2);
  const std::int64_t rk = transpose_rhs ? rhs.dim(2) : rhs.dim(1);
  const std::int64_t n = transpose_rhs ? rhs.dim(1) : rhs.dim(2);
  if (rk != k)
    throw ShapeError("matmul inner dimension mismatch: " + to_string(lhs.shape()) + " x " +
                     to_string(rhs.shape()));
  std::vector<T> out(static_cast<std::size_t>(b * m * n));
  for (std::int64_t i = 0; i < b; ++i) {
    ConstMapMat<T> am(lhs.data().data() + i * m * k, m, k);
    MapMat<T> om(out.data() + i * m * n, m, n);
    if (transpose_rhs)
      om.noalias() = am * ConstMapMat<T>(rhs.data().data() + i * n * k, n, k).transpose();
    else
      om.noalias() = am * ConstMapMat<T>(rhs.data().data() + i * k * n, k, n);
  }
  return make_op_result<T>(
      "matmul", {b, m, n}, std::move(out), {lhs, rhs},
      [=](const BasicTensor<T>& res) mutable {
        for (std::int64_t i = 0; i < b; ++i) {
          ConstMapMat<T> go(res.grad().data() + i * m * n, m, n);
          ConstMapMat<T> am(lhs.data().data() + i * m * k, m, k);
          if (transpose_rhs) {
            ConstMapMat<T> bm(rhs.data().data() + i * n * k, n, k);
            if (lhs.requires_grad())
              MapMat<T>(lhs.grad_accumulator().data() + i * m * k, m, k).noalias() += go * bm;
            if (rhs.requires_grad())
              MapMat<T>(rhs.grad_accumulator().data() + i * n * k, n, k).noalias() +=
                  go.transpose() * am;
          } else {
            ConstMapMat<T> bm(rhs.data().data() + i * k * n, k, n);
            if (lhs.requires_grad())
              MapMat<T>(lhs.grad_accumulator().data() + i * m * k, m, k).noalias() +=
                  go * bm.transpose();
            if (rhs.requires_grad())
              MapMat<T>(rhs.grad_accumulator().data() + i * k * n, k, n).noalias() +=
                  am.transpose() * go;
          }
        }
      });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& input, int axis) {
  const Shape& s = input.shape();
  const auto ax = static_cast<std::size_t>(normalize_axis(axis, s.size(), "softmax"));
  const std::int64_t outer = product(s, 0, ax), len = s[ax], inner = product(s, ax + 1, s.size());
  auto xv = input.data();
  std::vector<T> out(xv.size());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      T mx = xv[base];
      for (std::int64_t l = 1; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
      double z = 0;
      for (std::int64_t l = 0; l < len; ++l) z += std::exp(static_cast<double>(xv[base + l * inner] - mx));
      for (std::int64_t l = 0; l < len; ++l)
        out[base + l * inner] = static_cast<T>(std::exp(static_cast<double>(xv[base + l * inner] - mx)) / z);
    }
  return make_op_result<T>("softmax", s, std::move(out), {input},
                           [=](const BasicTensor<T>& res) mutable {
                             auto gx = input.grad_accumulator();
                             auto go = res.grad();
                             auto y = res.data();
                             for (std::int64_t o = 0; o < outer; ++o)
                               for (std::int64_t i = 0; i < inner; ++i) {
                                 const std::int64_t base = o * len * inner + i;
                                 double dot = 0;
                                 for (std::int64_t l = 0; l < len; ++l)
                                   dot += static_cast<double>(go[base + l * inner]) * y[base + l * inner];
                                 for (std::int64_t l = 0; l < len; ++l) {
                                   const auto idx = base + l * inner;
                                   gx[idx] += static_cast<T>(y[idx] * (go[idx] - dot));
                                 }
                               }
                           });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op_result<T>("add", a.shape(), std::move(out), {a, b},
                           [a, b](const BasicTensor<T>& r) mutable {
                             auto go = r.grad();
                             if (a.requires_grad()) {
                               auto ga = a.grad_accumulator();
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
                             }
                             if (b.requires_grad()) {
                               auto gb = b.grad_accumulator();
                               for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i];
                             }
                           });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op_result<T>("mul", a.shape(), std::move(out), {a, b},
                           [a, b](const BasicTensor<T>& r) mutable {
                             auto go = r.grad();
                             if (a.requires_grad()) {
                               auto ga = a.grad_accumulator();
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * b.data()[i];
                             }
                             if (b.requires_grad()) {
                               auto gb = b.grad_accumulator();
                               for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * a.data()[i];
                             }
                           });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor) {
  const T f = static_cast<T>(factor);
  return unary<T>(
      "scale", a, [f](T v) { return v * f; }, [f](T, T) { return f; });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double s = 0;
  for (const T v : a.data()) s += v;
  return make_op_result<T>("sum", {1}, {static_cast<T>(s)}, {a},
                           [a](const BasicTensor<T>& r) mutable {
                             const T g = r.grad()[0];
                             for (auto& v : a.grad_accumulator()) v += g;
                           });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const auto ax = static_cast<std::size_t>(normalize_axis(axis, first.size(), "concat"));
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != ax && s[i] != first[i])
        throw ShapeError("concat: off-axis extent mismatch " + to_string(s) + " vs " +
                         to_string(first));
    out_shape[ax] += s[ax];
  }
  const std::int64_t outer = product(first, 0, ax), inner = product(first, ax + 1, first.size());
  const std::int64_t out_chunk = out_shape[ax] * inner;
  std::vector<T> out(static_cast<std::size_t>(outer * out_chunk));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::int64_t chunk = p.shape()[ax] * inner;
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * chunk, chunk, out.data() + o * out_chunk + off);
    off += chunk;
  }
  return make_op_result<T>(
      "concat", out_shape, std::move(out), parts,
      [parts, offsets, outer, out_chunk, inner, ax](const BasicTensor<T>& r) mutable {
        auto go = r.grad();
        for (std::size_t k = 0; k < parts.size(); ++k) {
          if (!parts[k].requires_grad()) continue;
          auto gp = parts[k].grad_accumulator();
          const std::int64_t chunk = parts[k].shape()[ax] * inner;
          for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < chunk; ++i)
              gp[o * chunk + i] += go[o * out_chunk + offsets[k] + i];
        }
      });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_op_result<T>("reshape", std::move(shape), std::move(out), {a},
                           [a](const BasicTensor<T>& r) mutable {
                             auto ga = a.grad_accumulator();
                             auto go = r.grad();
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
                           });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a, int axis0, int axis1) {
  const auto r = a.shape().size();
  std::vector<int> perm(r);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[static_cast<std::size_t>(normalize_axis(axis0, r, "transpose"))],
            perm[static_cast<std::size_t>(normalize_axis(axis1, r, "transpose"))]);
  return permute(a, perm);
}

template <typename T>
BasicTensor<T> flatten_spatial(const BasicTensor<T>& a) {
  if (a.rank() != 5) throw ShapeError("flatten_spatial expects [N,C,D,H,W]");
  const Shape& s = a.shape();
  return transpose(reshape(a, {s[0], s[1], s[2] * s[3] * s[4]}), 1, 2);
}

template <typename T>
BasicTensor<T> unflatten_spatial(const BasicTensor<T>& a, std::array<std::int64_t, 3> e) {
  if (a.rank() != 3 || a.dim(1) != e[0] * e[1] * e[2])
    throw ShapeError("unflatten_spatial: token count does not match extents");
  const std::int64_t n = a.dim(0), c = a.dim(2);
  return reshape(transpose(a, 1, 2), {n, c, e[0], e[1], e[2]});
}

template <typename T>
BasicTensor<T> trilinear_interpolate(const BasicTensor<T>& input,
                                     std::array<std::int64_t, 3> target) {
  if (input.rank() != 5) throw ShapeError("trilinear_interpolate expects [N,C,D,H,W]");
  for (auto t : target)
    if (t < 1) throw ShapeError("trilinear_interpolate: target extents must be positive");
  const Shape& s = input.shape();
  const std::int64_t planes = s[0] * s[1], d = s[2], h = s[3], w = s[4];
  const auto [td, th, tw] = target;
  const LerpAxis ad = lerp_axis(d, td), ah = lerp_axis(h, th), aw = lerp_axis(w, tw);
  std::vector<T> out(static_cast<std::size_t>(planes * td * th * tw));
  auto xv = input.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* x = xv.data() + p * d * h * w;
    T* o = out.data() + p * td * th * tw;
    for (std::int64_t z = 0; z < td; ++z)
      for (std::int64_t y = 0; y < th; ++y)
        for (std::int64_t q = 0; q < tw; ++q) {
          auto v = [&](std::int64_t zz, std::int64_t yy, std::int64_t xx) {
            return static_cast<double>(x[(zz * h + yy) * w + xx]);
          };
          const double fw = aw.frac[q], fh = ah.frac[y], fd = ad.frac[z];
          auto lw = [&](std::int64_t zz, std::int64_t yy) {
            const double a0 = v(zz, yy, aw.lo[q]);
            return a0 + fw * (v(zz, yy, aw.hi[q]) - a0);
          };
          auto lh = [&](std::int64_t zz) {
            const double a0 = lw(zz, ah.lo[y]);
            return a0 + fh * (lw(zz, ah.hi[y]) - a0);
          };
          const double a0 = lh(ad.lo[z]);
          o[(z * th + y) * tw + q] = static_cast<T>(a0 + fd * (lh(ad.hi[z]) - a0));
        }
  }
  Shape out_shape{s[0], s[1], td, th, tw};
  return make_op_result<T>(
      "trilinear_interpolate", out_shape, std::move(out), {input},
      [=](const BasicTensor<T>& r) mutable {
        auto gx = input.grad_accumulator();
        auto go = r.grad();
        for (std::int64_t p = 0; p < planes; ++p) {
          T* dx = gx.data() + p * d * h * w;
          const T* g = go.data() + p * td * th * tw;
          for (std::int64_t z = 0; z < td; ++z)
            for (std::int64_t y = 0; y < th; ++y)
              for (std::int64_t q = 0; q < tw; ++q) {
                const double gv = g[(z * th + y) * tw + q];
                const std::int64_t zs[2] = {ad.lo[z], ad.hi[z]}, ys[2] = {ah.lo[y], ah.hi[y]},
                                   xs[2] = {aw.lo[q], aw.hi[q]};
                const double wz[2] = {1 - ad.frac[z], ad.frac[z]},
                             wy[2] = {1 - ah.frac[y], ah.frac[y]},
                             wx[2] = {1 - aw.frac[q], aw.frac[q]};
                for (int i = 0; i < 2; ++i)
                  for (int j = 0; j < 2; ++j)
                    for (int k = 0; k < 2; ++k)
                      dx[(zs[i] * h + ys[j]) * w + xs[k]] +=
                          static_cast<T>(gv * wz[i] * wy[j] * wx[k]);
              }
        }
      });
}

#define MMF_INSTANTIATE(T)                                                                       \
  template BasicTensor<T> group_norm(const BasicTensor<T>&, int, const BasicTensor<T>&,          \
                                     const BasicTensor<T>&, double);                             \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                     const BasicTensor<T>&, double);                             \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                        \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&);                                         \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&, bool);            \
  template BasicTensor<T> softmax(const BasicTensor<T>&, int);                                   \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                  \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                            \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, int);                       \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                 \
  template BasicTensor<T> transpose(const BasicTensor<T>&, int, int);                            \
  template BasicTensor<T> flatten_spatial(const BasicTensor<T>&);                                \
  template BasicTensor<T> unflatten_spatial(const BasicTensor<T>&, std::array<std::int64_t, 3>); \
  template BasicTensor<T> trilinear_interpolate(const BasicTensor<T>&, std::array<std::int64_t, 3>);

MMF_INSTANTIATE(float)
MMF_INSTANTIATE(double)
#undef MMF_INSTANTIATE

}  // namespace mmf
