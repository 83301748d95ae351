#include "sicr/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace sicr::diff {

namespace {

template <typename Real>
using NodePtr = std::shared_ptr<Node<Real>>;

template <typename Real>
Node<Real>& input_of(Node<Real>& out, std::size_t i) {
  return *out.inputs[i];
}

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(shape));
  }
}

struct Pads {
  std::size_t top = 0, bottom = 0, left = 0, right = 0;
};

Pads compute_pads(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, Stride2 s,
                  Padding padding) {
  Pads p;
  if (padding == Padding::Same) {
    const auto total = [](std::size_t in, std::size_t k, std::size_t st) -> std::size_t {
      const std::size_t out = (in + st - 1) / st;
      const std::size_t need = (out - 1) * st + k;
      return need > in ? need - in : 0;
    };
    const auto th = total(h, kh, s.h);
    const auto tw = total(w, kw, s.w);
    p.top = th / 2;
    p.bottom = th - p.top;
    p.left = tw / 2;
    p.right = tw - p.left;
  }
  return p;
}

void require_stride(Stride2 s) {
  if (s.h == 0 || s.w == 0) throw ConfigError("stride must be positive");
}

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
Eigen::Map<RowMat<Real>> mat_map(Real* data, std::size_t rows, std::size_t cols) {
  return {data, Eigen::Index(rows), Eigen::Index(cols)};
}

template <typename Real>
Eigen::Map<const RowMat<Real>> cmat_map(const Real* data, std::size_t rows, std::size_t cols) {
  return {data, Eigen::Index(rows), Eigen::Index(cols)};
}

// Patch geometry shared by the conv forward and backward passes.
struct Im2Col {
  std::size_t B, H, W, C, KH, KW, HO, WO;
  Stride2 stride;
  Pads pad;
};

// Valid kernel columns [q0, q1) for output column j.
inline std::pair<std::size_t, std::size_t> tap_range(std::size_t j, const Im2Col& g) {
  const std::ptrdiff_t start = std::ptrdiff_t(j * g.stride.w) - std::ptrdiff_t(g.pad.left);
  const std::ptrdiff_t q0 = std::max<std::ptrdiff_t>(0, -start);
  const std::ptrdiff_t q1 = std::min<std::ptrdiff_t>(std::ptrdiff_t(g.KW), std::ptrdiff_t(g.W) - start);
  return {std::size_t(q0), std::size_t(std::max(q0, q1))};
}

// Row (b, i, j) holds the (p, q, c) window under output position (i, j);
// out-of-range taps stay zero.
template <typename Real>
std::vector<Real> im2col(const std::vector<Real>& x, const Im2Col& g) {
  const std::size_t cols = g.KH * g.KW * g.C;
  std::vector<Real> m(g.B * g.HO * g.WO * cols, Real(0));
  for (std::size_t b = 0; b < g.B; ++b)
    for (std::size_t i = 0; i < g.HO; ++i)
      for (std::size_t j = 0; j < g.WO; ++j) {
        Real* row = &m[((b * g.HO + i) * g.WO + j) * cols];
        const auto [q0, q1] = tap_range(j, g);
        const std::size_t jj0 = j * g.stride.w + q0 - g.pad.left;
        for (std::size_t p = 0; p < g.KH; ++p) {
          const std::ptrdiff_t ii = std::ptrdiff_t(i * g.stride.h + p) - std::ptrdiff_t(g.pad.top);
          if (ii < 0 || ii >= std::ptrdiff_t(g.H) || q0 == q1) continue;
          const Real* src = &x[((b * g.H + std::size_t(ii)) * g.W + jj0) * g.C];
          std::copy(src, src + (q1 - q0) * g.C, row + (p * g.KW + q0) * g.C);
        }
      }
  return m;
}

template <typename Real>
void col2im_add(const std::vector<Real>& m, const Im2Col& g, std::vector<Real>& dx) {
  const std::size_t cols = g.KH * g.KW * g.C;
  for (std::size_t b = 0; b < g.B; ++b)
    for (std::size_t i = 0; i < g.HO; ++i)
      for (std::size_t j = 0; j < g.WO; ++j) {
        const Real* row = &m[((b * g.HO + i) * g.WO + j) * cols];
        const auto [q0, q1] = tap_range(j, g);
        const std::size_t jj0 = j * g.stride.w + q0 - g.pad.left;
        for (std::size_t p = 0; p < g.KH; ++p) {
          const std::ptrdiff_t ii = std::ptrdiff_t(i * g.stride.h + p) - std::ptrdiff_t(g.pad.top);
          if (ii < 0 || ii >= std::ptrdiff_t(g.H) || q0 == q1) continue;
          Real* dst = &dx[((b * g.H + std::size_t(ii)) * g.W + jj0) * g.C];
          const Real* src = row + (p * g.KW + q0) * g.C;
          const std::size_t n = (q1 - q0) * g.C;
          for (std::size_t k = 0; k < n; ++k) dst[k] += src[k];
        }
      }
}

template <typename Real, typename F, typename DF>
Tensor<Real> unary(const Tensor<Real>& x, F f, DF df) {
  const auto& xv = x.values();
  std::vector<Real> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return make_result<Real>(x.shape(), std::move(y), {x.node_ptr()}, [df](Node<Real>& out) {
    auto& in = input_of(out, 0);
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      in.grad[i] += out.grad[i] * df(in.value[i], out.value[i]);
    }
  });
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

}  // namespace

std::size_t sweep_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad,
                         const char* axis) {
  if (window == 0) throw ConfigError(std::string("empty window on ") + axis + " axis");
  if (stride == 0) throw ConfigError(std::string("zero stride on ") + axis + " axis");
  if (in + pad < window) {
    throw ShapeError(std::string("window ") + std::to_string(window) + " exceeds " + axis +
                     " extent " + std::to_string(in + pad));
  }
  return (in + pad - window) / stride + 1;
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& kernel, Stride2 stride,
                    Padding padding) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  require_stride(stride);
  const std::size_t B = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const std::size_t KH = kernel.dim(0), KW = kernel.dim(1), O = kernel.dim(3);
  if (kernel.dim(2) != C) {
    throw ShapeError("conv2d: kernel depth_in " + std::to_string(kernel.dim(2)) +
                     " != input depth " + std::to_string(C));
  }
  const Pads pd = compute_pads(H, W, KH, KW, stride, padding);
  const std::size_t HO = sweep_extent(H, KH, stride.h, pd.top + pd.bottom, "height");
  const std::size_t WO = sweep_extent(W, KW, stride.w, pd.left + pd.right, "width");
  const Im2Col geo{B, H, W, C, KH, KW, HO, WO, stride, pd};
  const std::size_t rows = B * HO * WO, cols = KH * KW * C;
  // 1x1 unit-stride kernels read the input directly as the patch matrix.
  const bool pointwise = KH == 1 && KW == 1 && stride.h == 1 && stride.w == 1;

  std::vector<Real> y(rows * O);
  {
    std::vector<Real> scratch;
    const Real* patches = input.values().data();
    if (!pointwise) {
      scratch = im2col(input.values(), geo);
      patches = scratch.data();
    }
    mat_map<Real>(y.data(), rows, O).noalias() =
        cmat_map<Real>(patches, rows, cols) * cmat_map<Real>(kernel.values().data(), cols, O);
  }
  return make_result<Real>(
      {B, HO, WO, O}, std::move(y), {input.node_ptr(), kernel.node_ptr()},
      [=](Node<Real>& out) {
        auto& xin = input_of(out, 0);
        auto& ker = input_of(out, 1);
        const auto G = cmat_map<Real>(out.grad.data(), rows, O);
        if (ker.requires_grad) {
          ker.ensure_grad();
          std::vector<Real> scratch;
          const Real* patches = xin.value.data();
          if (!pointwise) {
            scratch = im2col(xin.value, geo);
            patches = scratch.data();
          }
          mat_map<Real>(ker.grad.data(), cols, O).noalias() +=
              cmat_map<Real>(patches, rows, cols).transpose() * G;
        }
        if (xin.requires_grad) {
          xin.ensure_grad();
          const auto K = cmat_map<Real>(ker.value.data(), cols, O);
          if (pointwise) {
            mat_map<Real>(xin.grad.data(), rows, cols).noalias() += G * K.transpose();
          } else {
            std::vector<Real> dpatches(rows * cols);
            mat_map<Real>(dpatches.data(), rows, cols).noalias() = G * K.transpose();
            col2im_add(dpatches, geo, xin.grad);
          }
        }
      });
}

template <typename Real>
Tensor<Real> depthwise_conv2d(const Tensor<Real>& input, const Tensor<Real>& kernel,
                              Stride2 stride, Padding padding) {
  require_rank(input.shape(), 4, "depthwise_conv2d input");
  require_rank(kernel.shape(), 4, "depthwise_conv2d kernel");
  require_stride(stride);
  const std::size_t B = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const std::size_t KH = kernel.dim(0), KW = kernel.dim(1), M = kernel.dim(3);
  if (M < 1) throw ConfigError("depthwise_conv2d: depth multiplier must be >= 1");
  if (kernel.dim(2) != C) {
    throw ShapeError("depthwise_conv2d: kernel depth " + std::to_string(kernel.dim(2)) +
                     " != input depth " + std::to_string(C));
  }
  const Pads pd = compute_pads(H, W, KH, KW, stride, padding);
  const std::size_t HO = sweep_extent(H, KH, stride.h, pd.top + pd.bottom, "height");
  const std::size_t WO = sweep_extent(W, KW, stride.w, pd.left + pd.right, "width");
  const std::size_t O = C * M;
  const auto& x = input.values();
  const auto& k = kernel.values();
  std::vector<Real> y(B * HO * WO * O, Real(0));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < HO; ++i) {
      for (std::size_t j = 0; j < WO; ++j) {
        Real* yo = &y[((b * HO + i) * WO + j) * O];
        for (std::size_t p = 0; p < KH; ++p) {
          const std::ptrdiff_t ii = std::ptrdiff_t(i * stride.h + p) - std::ptrdiff_t(pd.top);
          if (ii < 0 || ii >= std::ptrdiff_t(H)) continue;
          for (std::size_t q = 0; q < KW; ++q) {
            const std::ptrdiff_t jj = std::ptrdiff_t(j * stride.w + q) - std::ptrdiff_t(pd.left);
            if (jj < 0 || jj >= std::ptrdiff_t(W)) continue;
            const Real* xi = &x[((b * H + std::size_t(ii)) * W + std::size_t(jj)) * C];
            const Real* kp = &k[(p * KW + q) * C * M];
            for (std::size_t c = 0; c < C; ++c) {
              for (std::size_t m = 0; m < M; ++m) yo[c * M + m] += xi[c] * kp[c * M + m];
            }
          }
        }
      }
    }
  }
  return make_result<Real>(
      {B, HO, WO, O}, std::move(y), {input.node_ptr(), kernel.node_ptr()},
      [=](Node<Real>& out) {
        auto& xin = input_of(out, 0);
        auto& ker = input_of(out, 1);
        const bool gx = xin.requires_grad, gk = ker.requires_grad;
        if (gx) xin.ensure_grad();
        if (gk) ker.ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t i = 0; i < HO; ++i) {
            for (std::size_t j = 0; j < WO; ++j) {
              const Real* go = &out.grad[((b * HO + i) * WO + j) * O];
              for (std::size_t p = 0; p < KH; ++p) {
                const std::ptrdiff_t ii = std::ptrdiff_t(i * stride.h + p) - std::ptrdiff_t(pd.top);
                if (ii < 0 || ii >= std::ptrdiff_t(H)) continue;
                for (std::size_t q = 0; q < KW; ++q) {
                  const std::ptrdiff_t jj =
                      std::ptrdiff_t(j * stride.w + q) - std::ptrdiff_t(pd.left);
                  if (jj < 0 || jj >= std::ptrdiff_t(W)) continue;
                  const std::size_t xoff = ((b * H + std::size_t(ii)) * W + std::size_t(jj)) * C;
                  const std::size_t koff = (p * KW + q) * C * M;
                  for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t m = 0; m < M; ++m) {
                      const Real g = go[c * M + m];
                      if (gx) xin.grad[xoff + c] += g * ker.value[koff + c * M + m];
                      if (gk) ker.grad[koff + c * M + m] += g * xin.value[xoff + c];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template <typename Real>
Tensor<Real> separable_conv2d(const Tensor<Real>& input, const Tensor<Real>& depthwise_kernel,
                              const Tensor<Real>& pointwise_kernel, Stride2 stride,
                              Padding padding) {
  require_rank(pointwise_kernel.shape(), 4, "separable_conv2d pointwise kernel");
  if (pointwise_kernel.dim(0) != 1 || pointwise_kernel.dim(1) != 1) {
    throw ShapeError("separable_conv2d: pointwise kernel must be 1x1, got " +
                     shape_string(pointwise_kernel.shape()));
  }
  return conv2d(depthwise_conv2d(input, depthwise_kernel, stride, padding), pointwise_kernel);
}

template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& input, const Tensor<Real>& bias) {
  const std::size_t D = input.shape().back();
  if (bias.size() != D) {
    throw ShapeError("add_bias: bias length " + std::to_string(bias.size()) + " != last axis " +
                     std::to_string(D));
  }
  std::vector<Real> y = input.values();
  const auto& bv = bias.values();
  for (std::size_t r = 0; r < y.size(); r += D)
    for (std::size_t d = 0; d < D; ++d) y[r + d] += bv[d];
  return make_result<Real>(input.shape(), std::move(y), {input.node_ptr(), bias.node_ptr()},
                           [D](Node<Real>& out) {
                             auto& x = input_of(out, 0);
                             auto& b = input_of(out, 1);
                             if (x.requires_grad) {
                               x.ensure_grad();
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                 x.grad[i] += out.grad[i];
                             }
                             if (b.requires_grad) {
                               b.ensure_grad();
                               for (std::size_t r = 0; r < out.grad.size(); r += D)
                                 for (std::size_t d = 0; d < D; ++d) b.grad[d] += out.grad[r + d];
                             }
                           });
}

template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& input, Window2 window, Stride2 stride) {
  require_rank(input.shape(), 4, "max_pool2d input");
  const std::size_t B = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const std::size_t HO = sweep_extent(H, window.h, stride.h, 0, "height");
  const std::size_t WO = sweep_extent(W, window.w, stride.w, 0, "width");
  const auto& x = input.values();
  std::vector<Real> y(B * HO * WO * C);
  std::vector<std::size_t> arg(y.size());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < HO; ++i) {
      for (std::size_t j = 0; j < WO; ++j) {
        for (std::size_t c = 0; c < C; ++c) {
          std::size_t best = ((b * H + i * stride.h) * W + j * stride.w) * C + c;
          for (std::size_t p = 0; p < window.h; ++p) {
            for (std::size_t q = 0; q < window.w; ++q) {
              const std::size_t idx = ((b * H + i * stride.h + p) * W + j * stride.w + q) * C + c;
              if (x[idx] > x[best]) best = idx;
            }
          }
          const std::size_t o = ((b * HO + i) * WO + j) * C + c;
          y[o] = x[best];
          arg[o] = best;
        }
      }
    }
  }
  return make_result<Real>({B, HO, WO, C}, std::move(y), {input.node_ptr()},
                           [arg = std::move(arg)](Node<Real>& out) {
                             auto& xin = input_of(out, 0);
                             if (!xin.requires_grad) return;
                             xin.ensure_grad();
                             for (std::size_t o = 0; o < arg.size(); ++o)
                               xin.grad[arg[o]] += out.grad[o];
                           });
}

template <typename Real>
Tensor<Real> avg_pool2d(const Tensor<Real>& input, Window2 window, Stride2 stride) {
  require_rank(input.shape(), 4, "avg_pool2d input");
  const std::size_t B = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const std::size_t HO = sweep_extent(H, window.h, stride.h, 0, "height");
  const std::size_t WO = sweep_extent(W, window.w, stride.w, 0, "width");
  const Real inv = Real(1) / Real(window.h * window.w);
  const auto& x = input.values();
  std::vector<Real> y(B * HO * WO * C, Real(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < HO; ++i)
      for (std::size_t j = 0; j < WO; ++j)
        for (std::size_t p = 0; p < window.h; ++p)
          for (std::size_t q = 0; q < window.w; ++q) {
            const Real* xi = &x[((b * H + i * stride.h + p) * W + j * stride.w + q) * C];
            Real* yo = &y[((b * HO + i) * WO + j) * C];
            for (std::size_t c = 0; c < C; ++c) yo[c] += xi[c] * inv;
          }
  return make_result<Real>(
      {B, HO, WO, C}, std::move(y), {input.node_ptr()}, [=](Node<Real>& out) {
        auto& xin = input_of(out, 0);
        if (!xin.requires_grad) return;
        xin.ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < HO; ++i)
            for (std::size_t j = 0; j < WO; ++j)
              for (std::size_t p = 0; p < window.h; ++p)
                for (std::size_t q = 0; q < window.w; ++q) {
                  Real* gi = &xin.grad[((b * H + i * stride.h + p) * W + j * stride.w + q) * C];
                  const Real* go = &out.grad[((b * HO + i) * WO + j) * C];
                  for (std::size_t c = 0; c < C; ++c) gi[c] += go[c] * inv;
                }
      });
}

template <typename Real>
Tensor<Real> batch_norm(const Tensor<Real>& input, const Tensor<Real>& scale,
                        const Tensor<Real>& shift, BatchNormStats<Real>& running, Mode mode,
                        Real momentum, Real eps) {
  const std::size_t D = input.shape().back();
  if (scale.size() != D || shift.size() != D) {
    throw ShapeError("batch_norm: scale/shift length must equal feature depth " +
                     std::to_string(D));
  }
  if (running.mean.size() != D) running.mean.assign(D, Real(0));
  if (running.var.size() != D) running.var.assign(D, Real(1));
  const std::size_t N = input.size() / D;
  const auto& x = input.values();
  const auto& g = scale.values();
  const auto& be = shift.values();
  std::vector<Real> y(x.size());

  if (mode == Mode::Eval) {
    std::vector<Real> mul(D), add(D);
    for (std::size_t d = 0; d < D; ++d) {
      mul[d] = g[d] / std::sqrt(running.var[d] + eps);
      add[d] = be[d] - running.mean[d] * mul[d];
    }
    for (std::size_t r = 0; r < x.size(); r += D)
      for (std::size_t d = 0; d < D; ++d) y[r + d] = x[r + d] * mul[d] + add[d];
    const std::vector<Real> mean_copy = running.mean, var_copy = running.var;
    return make_result<Real>(
        input.shape(), std::move(y), {input.node_ptr(), scale.node_ptr(), shift.node_ptr()},
        [D, eps, mean_copy, var_copy](Node<Real>& out) {
          auto& xin = input_of(out, 0);
          auto& sc = input_of(out, 1);
          auto& sh = input_of(out, 2);
          std::vector<Real> inv(D);
          for (std::size_t d = 0; d < D; ++d) inv[d] = Real(1) / std::sqrt(var_copy[d] + eps);
          if (xin.requires_grad) xin.ensure_grad();
          if (sc.requires_grad) sc.ensure_grad();
          if (sh.requires_grad) sh.ensure_grad();
          for (std::size_t r = 0; r < out.grad.size(); r += D) {
            for (std::size_t d = 0; d < D; ++d) {
              const std::size_t i = r + d;
              const Real go = out.grad[i];
              if (xin.requires_grad) xin.grad[i] += go * sc.value[d] * inv[d];
              if (sc.requires_grad) sc.grad[d] += go * (xin.value[i] - mean_copy[d]) * inv[d];
              if (sh.requires_grad) sh.grad[d] += go;
            }
          }
        });
  }

  if (input.dim(0) < 2) {
    throw BatchSizeError("batch_norm: train mode needs batch size >= 2, got " +
                         std::to_string(input.dim(0)));
  }
  std::vector<Real> mu(D, Real(0)), var(D, Real(0));
  for (std::size_t r = 0; r < x.size(); r += D)
    for (std::size_t d = 0; d < D; ++d) mu[d] += x[r + d];
  for (auto& m : mu) m /= Real(N);
  for (std::size_t r = 0; r < x.size(); r += D)
    for (std::size_t d = 0; d < D; ++d) {
      const Real c = x[r + d] - mu[d];
      var[d] += c * c;
    }
  for (auto& v : var) v /= Real(N);
  std::vector<Real> inv_std(D), xhat(x.size());
  for (std::size_t d = 0; d < D; ++d) inv_std[d] = Real(1) / std::sqrt(var[d] + eps);
  for (std::size_t r = 0; r < x.size(); r += D)
    for (std::size_t d = 0; d < D; ++d) {
      xhat[r + d] = (x[r + d] - mu[d]) * inv_std[d];
      y[r + d] = xhat[r + d] * g[d] + be[d];
    }
  for (std::size_t d = 0; d < D; ++d) {
    running.mean[d] = momentum * running.mean[d] + (Real(1) - momentum) * mu[d];
    running.var[d] = momentum * running.var[d] + (Real(1) - momentum) * var[d];
  }
  return make_result<Real>(
      input.shape(), std::move(y), {input.node_ptr(), scale.node_ptr(), shift.node_ptr()},
      [D, N, inv_std, xhat = std::move(xhat)](Node<Real>& out) {
        auto& xin = input_of(out, 0);
        auto& sc = input_of(out, 1);
        auto& sh = input_of(out, 2);
        std::vector<Real> sum_g(D, Real(0)), sum_gx(D, Real(0));
        for (std::size_t r = 0; r < out.grad.size(); r += D)
          for (std::size_t d = 0; d < D; ++d) {
            sum_g[d] += out.grad[r + d];
            sum_gx[d] += out.grad[r + d] * xhat[r + d];
          }
        if (sc.requires_grad) {
          sc.ensure_grad();
          for (std::size_t d = 0; d < D; ++d) sc.grad[d] += sum_gx[d];
        }
        if (sh.requires_grad) {
          sh.ensure_grad();
          for (std::size_t d = 0; d < D; ++d) sh.grad[d] += sum_g[d];
        }
        if (xin.requires_grad) {
          xin.ensure_grad();
          const Real n = Real(N);
          // sums over dxhat are gamma * sums over grad
          std::vector<Real> k0(D), k1(D);
          for (std::size_t d = 0; d < D; ++d) {
            k0[d] = sc.value[d] * inv_std[d];
            k1[d] = sc.value[d] * inv_std[d] / n;
          }
          for (std::size_t r = 0; r < out.grad.size(); r += D)
            for (std::size_t d = 0; d < D; ++d) {
              const std::size_t i = r + d;
              xin.grad[i] += k0[d] * out.grad[i] - k1[d] * (sum_g[d] + xhat[i] * sum_gx[d]);
            }
        }
      });
}

template <typename Real>
Tensor<Real> elu(const Tensor<Real>& input, Real alpha) {
  return unary(
      input, [alpha](Real x) { return x > 0 ? x : alpha * std::expm1(x); },
      [alpha](Real x, Real y) { return x > 0 ? Real(1) : y + alpha; });
}

template <typename Real>
Tensor<Real> softplus(const Tensor<Real>& input) {
  return unary(
      input,
      [](Real z) { return std::max(z, Real(0)) + std::log1p(std::exp(-std::abs(z))); },
      [](Real z, Real) {
        // logistic sigmoid, stable on both tails
        if (z >= 0) return Real(1) / (Real(1) + std::exp(-z));
        const Real e = std::exp(z);
        return e / (Real(1) + e);
      });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& input) {
  return unary(input, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& input) {
  return unary(input, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& input) {
  return unary(input, [](Real x) { return -x; }, [](Real, Real) { return Real(-1); });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& input, Real factor) {
  return unary(
      input, [factor](Real x) { return x * factor; }, [factor](Real, Real) { return factor; });
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<Real> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i];
  return make_result<Real>(a.shape(), std::move(y), {a.node_ptr(), b.node_ptr()},
                           [](Node<Real>& out) {
                             for (std::size_t k = 0; k < 2; ++k) {
                               auto& in = input_of(out, k);
                               if (!in.requires_grad) continue;
                               in.ensure_grad();
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                 in.grad[i] += out.grad[i];
                             }
                           });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<Real> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] - b.values()[i];
  return make_result<Real>(a.shape(), std::move(y), {a.node_ptr(), b.node_ptr()},
                           [](Node<Real>& out) {
                             for (std::size_t k = 0; k < 2; ++k) {
                               auto& in = input_of(out, k);
                               if (!in.requires_grad) continue;
                               in.ensure_grad();
                               const Real sgn = k == 0 ? Real(1) : Real(-1);
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                 in.grad[i] += sgn * out.grad[i];
                             }
                           });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<Real> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] * b.values()[i];
  return make_result<Real>(a.shape(), std::move(y), {a.node_ptr(), b.node_ptr()},
                           [](Node<Real>& out) {
                             auto& x = input_of(out, 0);
                             auto& z = input_of(out, 1);
                             if (x.requires_grad) {
                               x.ensure_grad();
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                 x.grad[i] += out.grad[i] * z.value[i];
                             }
                             if (z.requires_grad) {
                               z.ensure_grad();
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                 z.grad[i] += out.grad[i] * x.value[i];
                             }
                           });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& input) {
  Real s = 0;
  for (Real v : input.values()) s += v;
  return make_result<Real>({1}, {s}, {input.node_ptr()}, [](Node<Real>& out) {
    auto& in = input_of(out, 0);
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (auto& g : in.grad) g += out.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& input) {
  return scale(sum(input), Real(1) / Real(input.size()));
}

template <typename Real>
Tensor<Real> sum_squares(const Tensor<Real>& input) {
  Real s = 0;
  for (Real v : input.values()) s += v * v;
  return make_result<Real>({1}, {s}, {input.node_ptr()}, [](Node<Real>& out) {
    auto& in = input_of(out, 0);
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (std::size_t i = 0; i < in.grad.size(); ++i) in.grad[i] += Real(2) * in.value[i] * out.grad[0];
  });
}

template <typename Real>
Tensor<Real> dense(const Tensor<Real>& input, const Tensor<Real>& weights, const Tensor<Real>& bias) {
  require_rank(input.shape(), 2, "dense input");
  require_rank(weights.shape(), 2, "dense weights");
  const std::size_t B = input.dim(0), I = input.dim(1), O = weights.dim(1);
  if (weights.dim(0) != I) {
    throw ShapeError("dense: input features " + std::to_string(I) + " != weight rows " +
                     std::to_string(weights.dim(0)));
  }
  if (bias.defined() && bias.size() != O) {
    throw ShapeError("dense: bias length " + std::to_string(bias.size()) + " != outputs " +
                     std::to_string(O));
  }
  const auto& x = input.values();
  const auto& w = weights.values();
  std::vector<Real> y(B * O, Real(0));
  if (bias.defined()) {
    for (std::size_t b = 0; b < B; ++b) std::copy(bias.values().begin(), bias.values().end(), &y[b * O]);
  }
  mat_map<Real>(y.data(), B, O).noalias() += cmat_map<Real>(x.data(), B, I) * cmat_map<Real>(w.data(), I, O);
  std::vector<NodePtr<Real>> inputs{input.node_ptr(), weights.node_ptr()};
  if (bias.defined()) inputs.push_back(bias.node_ptr());
  return make_result<Real>({B, O}, std::move(y), std::move(inputs), [=](Node<Real>& out) {
    auto& xin = input_of(out, 0);
    auto& win = input_of(out, 1);
    const auto G = cmat_map<Real>(out.grad.data(), B, O);
    if (xin.requires_grad) {
      xin.ensure_grad();
      mat_map<Real>(xin.grad.data(), B, I).noalias() += G * cmat_map<Real>(win.value.data(), I, O).transpose();
    }
    if (win.requires_grad) {
      win.ensure_grad();
      mat_map<Real>(win.grad.data(), I, O).noalias() += cmat_map<Real>(xin.value.data(), B, I).transpose() * G;
    }
    if (out.inputs.size() > 2) {
      auto& bin = input_of(out, 2);
      if (bin.requires_grad) {
        bin.ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t o = 0; o < O; ++o) bin.grad[o] += out.grad[b * O + o];
      }
    }
  });
}

template <typename Real>
std::vector<Real> softmax_rows(const Tensor<Real>& logits) {
  require_rank(logits.shape(), 2, "softmax logits");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<Real> p(B * K);
  for (std::size_t b = 0; b < B; ++b) {
    const Real* z = &logits.values()[b * K];
    const Real m = *std::max_element(z, z + K);
    Real s = 0;
    for (std::size_t k = 0; k < K; ++k) s += (p[b * K + k] = std::exp(z[k] - m));
    for (std::size_t k = 0; k < K; ++k) p[b * K + k] /= s;
  }
  return p;
}

template <typename Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (K < 2) throw ConfigError("softmax_cross_entropy: need at least 2 classes");
  if (labels.size() != B) throw ShapeError("softmax_cross_entropy: label count != batch size");
  for (int y : labels) {
    if (y < 0 || std::size_t(y) >= K) throw ConfigError("softmax_cross_entropy: label out of range");
  }
  const std::vector<Real> p = softmax_rows(logits);
  Real loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const Real* z = &logits.values()[b * K];
    const Real m = *std::max_element(z, z + K);
    Real s = 0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - m);
    loss += m + std::log(s) - z[labels[b]];
  }
  loss /= Real(B);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<Real>({1}, {loss}, {logits.node_ptr()}, [=](Node<Real>& out) {
    auto& in = input_of(out, 0);
    if (!in.requires_grad) return;
    in.ensure_grad();
    const Real g = out.grad[0] / Real(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k) {
        const Real y = std::size_t(lab[b]) == k ? Real(1) : Real(0);
        in.grad[b * K + k] += g * (p[b * K + k] - y);
      }
  });
}

template <typename Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits, const Tensor<Real>& one_hot) {
  require_same_shape(logits.shape(), one_hot.shape(), "softmax_cross_entropy");
  const std::size_t B = one_hot.dim(0), K = one_hot.dim(1);
  std::vector<int> labels(B);
  for (std::size_t b = 0; b < B; ++b) {
    int hot = -1;
    Real total = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const Real v = one_hot.values()[b * K + k];
      total += v;
      if (v == Real(1)) hot = int(k);
      else if (v != Real(0)) hot = -2;
    }
    if (hot < 0 || total != Real(1)) {
      throw ConfigError("softmax_cross_entropy: row " + std::to_string(b) + " is not one-hot");
    }
    labels[b] = hot;
  }
  return softmax_cross_entropy(logits, std::span<const int>(labels));
}

template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& input, Real rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= Real(0) && rate < Real(1))) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(double(rate)));
  }
  if (mode == Mode::Eval || rate == Real(0)) {
    return unary(input, [](Real x) { return x; }, [](Real, Real) { return Real(1); });
  }
  const Real keep_scale = Real(1) / (Real(1) - rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Real> mask(input.size());
  for (auto& m : mask) m = u(rng) < double(rate) ? Real(0) : keep_scale;
  std::vector<Real> y(input.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = input.values()[i] * mask[i];
  return make_result<Real>(input.shape(), std::move(y), {input.node_ptr()},
                           [mask = std::move(mask)](Node<Real>& out) {
                             auto& in = input_of(out, 0);
                             if (!in.requires_grad) return;
                             in.ensure_grad();
                             for (std::size_t i = 0; i < mask.size(); ++i)
                               in.grad[i] += out.grad[i] * mask[i];
                           });
}

template <typename Real>
Tensor<Real> gradient_reversal(const Tensor<Real>& input, Real factor) {
  return make_result<Real>(input.shape(), input.values(), {input.node_ptr()},
                           [factor](Node<Real>& out) {
                             auto& in = input_of(out, 0);
                             if (!in.requires_grad) return;
                             in.ensure_grad();
                             for (std::size_t i = 0; i < out.grad.size(); ++i)
                               in.grad[i] -= factor * out.grad[i];
                           });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& input, Shape shape) {
  if (shape_volume(shape) != input.size()) {
    throw ShapeError("reshape: " + shape_string(input.shape()) + " -> " + shape_string(shape));
  }
  return make_result<Real>(std::move(shape), input.values(), {input.node_ptr()},
                           [](Node<Real>& out) {
                             auto& in = input_of(out, 0);
                             if (!in.requires_grad) return;
                             in.ensure_grad();
                             for (std::size_t i = 0; i < out.grad.size(); ++i)
                               in.grad[i] += out.grad[i];
                           });
}

template <typename Real>
Tensor<Real> flatten(const Tensor<Real>& input) {
  const std::size_t B = input.dim(0);
  return reshape(input, {B, input.size() / B});
}

template <typename Real>
Tensor<Real> concat_last(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& t : parts) {
    Shape l(t.shape().begin(), t.shape().end() - 1);
    if (l != lead) {
      throw ShapeError("concat_last: leading extents differ " + shape_string(parts[0].shape()) +
                       " vs " + shape_string(t.shape()));
    }
    widths.push_back(t.shape().back());
    total += t.shape().back();
  }
  const std::size_t rows = shape_volume(lead);
  std::vector<Real> y(rows * total);
  std::vector<NodePtr<Real>> inputs;
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(&v[r * widths[k]], widths[k], &y[r * total + off]);
    off += widths[k];
    inputs.push_back(parts[k].node_ptr());
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_result<Real>(std::move(shape), std::move(y), std::move(inputs),
                           [rows, total, widths](Node<Real>& out) {
                             std::size_t off = 0;
                             for (std::size_t k = 0; k < widths.size(); ++k) {
                               auto& in = input_of(out, k);
                               if (in.requires_grad) {
                                 in.ensure_grad();
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < widths[k]; ++c)
                                     in.grad[r * widths[k] + c] += out.grad[r * total + off + c];
                               }
                               off += widths[k];
                             }
                           });
}

template <typename Real>
Tensor<Real> slice_last(const Tensor<Real>& input, std::size_t begin, std::size_t end) {
  const std::size_t D = input.shape().back();
  if (begin >= end || end > D) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside depth " + std::to_string(D));
  }
  const std::size_t rows = input.size() / D, w = end - begin;
  std::vector<Real> y(rows * w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(&input.values()[r * D + begin], w, &y[r * w]);
  Shape shape = input.shape();
  shape.back() = w;
  return make_result<Real>(std::move(shape), std::move(y), {input.node_ptr()},
                           [rows, w, D, begin](Node<Real>& out) {
                             auto& in = input_of(out, 0);
                             if (!in.requires_grad) return;
                             in.ensure_grad();
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < w; ++c)
                                 in.grad[r * D + begin + c] += out.grad[r * w + c];
                           });
}

template <typename Real>
Tensor<Real> gather_batch(const Tensor<Real>& input, std::span<const std::size_t> order) {
  const std::size_t B = input.dim(0), row = input.size() / B;
  for (auto o : order) {
    if (o >= B) throw ShapeError("gather_batch: index out of range");
  }
  std::vector<Real> y(order.size() * row);
  for (std::size_t i = 0; i < order.size(); ++i)
    std::copy_n(&input.values()[order[i] * row], row, &y[i * row]);
  Shape shape = input.shape();
  shape[0] = order.size();
  std::vector<std::size_t> ord(order.begin(), order.end());
  return make_result<Real>(std::move(shape), std::move(y), {input.node_ptr()},
                           [ord, row](Node<Real>& out) {
                             auto& in = input_of(out, 0);
                             if (!in.requires_grad) return;
                             in.ensure_grad();
                             for (std::size_t i = 0; i < ord.size(); ++i)
                               for (std::size_t c = 0; c < row; ++c)
                                 in.grad[ord[i] * row + c] += out.grad[i * row + c];
                           });
}

template <typename Real>
Tensor<Real> broadcast_spatial(const Tensor<Real>& input, std::size_t height, std::size_t width) {
  require_rank(input.shape(), 2, "broadcast_spatial input");
  const std::size_t B = input.dim(0), D = input.dim(1), P = height * width;
  std::vector<Real> y(B * P * D);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p) std::copy_n(&input.values()[b * D], D, &y[(b * P + p) * D]);
  return make_result<Real>({B, height, width, D}, std::move(y), {input.node_ptr()},
                           [B, P, D](Node<Real>& out) {
                             auto& in = input_of(out, 0);
                             if (!in.requires_grad) return;
                             in.ensure_grad();
                             for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t p = 0; p < P; ++p)
                                 for (std::size_t d = 0; d < D; ++d)
                                   in.grad[b * D + d] += out.grad[(b * P + p) * D + d];
                           });
}

template <typename Real>
Tensor<Real> log_mean_exp(const Tensor<Real>& input) {
  const auto& x = input.values();
  if (x.empty()) throw ShapeError("log_mean_exp: empty input");
  const Real m = *std::max_element(x.begin(), x.end());
  std::vector<Real> w(x.size());
  Real s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (w[i] = std::exp(x[i] - m));
  const Real value = m + std::log(s / Real(x.size()));
  for (auto& v : w) v /= s;
  return make_result<Real>({1}, {value}, {input.node_ptr()},
                           [w = std::move(w)](Node<Real>& out) {
                             auto& in = input_of(out, 0);
                             if (!in.requires_grad) return;
                             in.ensure_grad();
                             for (std::size_t i = 0; i < w.size(); ++i) in.grad[i] += out.grad[0] * w[i];
                           });
}

#define SICR_INSTANTIATE_OPS(R)                                                                  \
  template Tensor<R> conv2d(const Tensor<R>&, const Tensor<R>&, Stride2, Padding);              \
  template Tensor<R> depthwise_conv2d(const Tensor<R>&, const Tensor<R>&, Stride2, Padding);    \
  template Tensor<R> separable_conv2d(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&,     \
                                      Stride2, Padding);                                         \
  template Tensor<R> add_bias(const Tensor<R>&, const Tensor<R>&);                              \
  template Tensor<R> max_pool2d(const Tensor<R>&, Window2, Stride2);                            \
  template Tensor<R> avg_pool2d(const Tensor<R>&, Window2, Stride2);                            \
  template Tensor<R> batch_norm(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&,           \
                                BatchNormStats<R>&, Mode, R, R);                                 \
  template Tensor<R> elu(const Tensor<R>&, R);                                                  \
  template Tensor<R> softplus(const Tensor<R>&);                                                \
  template Tensor<R> exp(const Tensor<R>&);                                                     \
  template Tensor<R> log(const Tensor<R>&);                                                     \
  template Tensor<R> neg(const Tensor<R>&);                                                     \
  template Tensor<R> scale(const Tensor<R>&, R);                                                \
  template Tensor<R> add(const Tensor<R>&, const Tensor<R>&);                                   \
  template Tensor<R> sub(const Tensor<R>&, const Tensor<R>&);                                   \
  template Tensor<R> mul(const Tensor<R>&, const Tensor<R>&);                                   \
  template Tensor<R> sum(const Tensor<R>&);                                                     \
  template Tensor<R> mean(const Tensor<R>&);                                                    \
  template Tensor<R> sum_squares(const Tensor<R>&);                                             \
  template Tensor<R> dense(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&);               \
  template Tensor<R> softmax_cross_entropy(const Tensor<R>&, std::span<const int>);             \
  template Tensor<R> softmax_cross_entropy(const Tensor<R>&, const Tensor<R>&);                 \
  template std::vector<R> softmax_rows(const Tensor<R>&);                                       \
  template Tensor<R> dropout(const Tensor<R>&, R, Mode, std::mt19937_64&);                      \
  template Tensor<R> gradient_reversal(const Tensor<R>&, R);                                    \
  template Tensor<R> reshape(const Tensor<R>&, Shape);                                          \
  template Tensor<R> flatten(const Tensor<R>&);                                                 \
  template Tensor<R> concat_last(const std::vector<Tensor<R>>&);                                \
  template Tensor<R> slice_last(const Tensor<R>&, std::size_t, std::size_t);                    \
  template Tensor<R> gather_batch(const Tensor<R>&, std::span<const std::size_t>);              \
  template Tensor<R> broadcast_spatial(const Tensor<R>&, std::size_t, std::size_t);             \
  template Tensor<R> log_mean_exp(const Tensor<R>&);

SICR_INSTANTIATE_OPS(float)
SICR_INSTANTIATE_OPS(double)

#undef SICR_INSTANTIATE_OPS

}  // namespace sicr::diff
