#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nnpass/tensor.hpp"

namespace nnpass {

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return TensorT<T>::make_result(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& n) {
    auto& ga = n.parents[0]->grad;
    auto& gb = n.parents[1]->grad;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i];
      gb[i] += n.grad[i];
    }
  });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return TensorT<T>::make_result(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& n) {
    auto& ga = n.parents[0]->grad;
    auto& gb = n.parents[1]->grad;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i];
      gb[i] -= n.grad[i];
    }
  });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return TensorT<T>::make_result(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& n) {
    auto& ga = n.parents[0]->grad;
    auto& gb = n.parents[1]->grad;
    const auto& va = n.parents[0]->value;
    const auto& vb = n.parents[1]->value;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i] * vb[i];
      gb[i] += n.grad[i] * va[i];
    }
  });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return TensorT<T>::make_result(a.shape(), std::move(out), {a}, [s](TensorNode<T>& n) {
    auto& ga = n.parents[0]->grad;
    for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * s;
  });
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return TensorT<T>::make_result({1}, {acc}, {a}, [](TensorNode<T>& n) {
    auto& ga = n.parents[0]->grad;
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[0];
  });
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<T> out = a.data();
  return TensorT<T>::make_result(std::move(shape), std::move(out), {a}, [](TensorNode<T>& n) {
    auto& ga = n.parents[0]->grad;
    for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
  });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
  std::vector<T> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  return TensorT<T>::make_result(a.shape(), std::move(out), {a}, [](TensorNode<T>& n) {
    auto& ga = n.parents[0]->grad;
    const auto& va = n.parents[0]->value;
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (va[i] > T(0)) ga[i] += n.grad[i];
  });
}

// Cross-correlation (deep-learning convention), NCHW layout, no bias term;
// per-channel offsets come from the affine layers instead.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4)
    throw ShapeError("conv2d expects rank-4 input and kernel");
  if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
  if (padding < 0) throw ShapeError("conv2d: padding must be nonnegative");
  const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = kernel.dim(0), KCin = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
  if (Cin != KCin)
    throw ShapeError("conv2d: input channels " + std::to_string(Cin) + " do not match kernel channels " +
                     std::to_string(KCin));
  const int oh_num = H + 2 * padding - KH;
  const int ow_num = W + 2 * padding - KW;
  if (oh_num < 0 || ow_num < 0)
    throw ShapeError("conv2d: kernel larger than padded input " + shape_str(input.shape()));
  // Floor division: trailing rows/columns that no window reaches are dropped.
  const int OH = oh_num / stride + 1;
  const int OW = ow_num / stride + 1;

  std::vector<T> out(static_cast<size_t>(N) * Cout * OH * OW, T(0));
  const auto& x = input.data();
  const auto& w = kernel.data();
  const size_t xs_n = static_cast<size_t>(Cin) * H * W;
  const size_t ws_co = static_cast<size_t>(Cin) * KH * KW;
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Cout; ++co)
      for (int oh = 0; oh < OH; ++oh) {
        const int ih0 = oh * stride - padding;
        const int kh_lo = std::max(0, -ih0);
        const int kh_hi = std::min(KH, H - ih0);
        for (int ow = 0; ow < OW; ++ow) {
          const int iw0 = ow * stride - padding;
          const int kw_lo = std::max(0, -iw0);
          const int kw_hi = std::min(KW, W - iw0);
          T acc = T(0);
          for (int ci = 0; ci < Cin; ++ci) {
            const T* xp = x.data() + n * xs_n + static_cast<size_t>(ci) * H * W;
            const T* wp = w.data() + co * ws_co + static_cast<size_t>(ci) * KH * KW;
            for (int kh = kh_lo; kh < kh_hi; ++kh) {
              const T* xrow = xp + static_cast<size_t>(ih0 + kh) * W + iw0;
              const T* wrow = wp + static_cast<size_t>(kh) * KW;
              for (int kw = kw_lo; kw < kw_hi; ++kw) acc += xrow[kw] * wrow[kw];
            }
          }
          out[((static_cast<size_t>(n) * Cout + co) * OH + oh) * OW + ow] = acc;
        }
      }

  auto back = [stride, padding, N, Cin, H, W, Cout, KH, KW, OH, OW](TensorNode<T>& node) {
    auto& gx = node.parents[0]->grad;
    auto& gw = node.parents[1]->grad;
    const auto& x = node.parents[0]->value;
    const auto& w = node.parents[1]->value;
    const auto& go = node.grad;
    const size_t xs_n = static_cast<size_t>(Cin) * H * W;
    const size_t ws_co = static_cast<size_t>(Cin) * KH * KW;
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Cout; ++co)
        for (int oh = 0; oh < OH; ++oh) {
          const int ih0 = oh * stride - padding;
          const int kh_lo = std::max(0, -ih0);
          const int kh_hi = std::min(KH, H - ih0);
          for (int ow = 0; ow < OW; ++ow) {
            const int iw0 = ow * stride - padding;
            const int kw_lo = std::max(0, -iw0);
            const int kw_hi = std::min(KW, W - iw0);
            const T g = go[((static_cast<size_t>(n) * Cout + co) * OH + oh) * OW + ow];
            if (g == T(0)) continue;
            for (int ci = 0; ci < Cin; ++ci) {
              const size_t xb = n * xs_n + static_cast<size_t>(ci) * H * W;
              const size_t wb = co * ws_co + static_cast<size_t>(ci) * KH * KW;
              for (int kh = kh_lo; kh < kh_hi; ++kh) {
                const size_t xr = xb + static_cast<size_t>(ih0 + kh) * W + iw0;
                const size_t wr = wb + static_cast<size_t>(kh) * KW;
                for (int kw = kw_lo; kw < kw_hi; ++kw) {
                  gx[xr + kw] += g * w[wr + kw];
                  gw[wr + kw] += g * x[xr + kw];
                }
              }
            }
          }
        }
  };
  return TensorT<T>::make_result({N, Cout, OH, OW}, std::move(out), {input, kernel}, back);
}

template <typename T>
TensorT<T> dense_affine(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1)
    throw ShapeError("dense_affine expects input[N,Din], weight[Dout,Din], bias[Dout]");
  const int N = input.dim(0), Din = input.dim(1);
  const int Dout = weight.dim(0);
  if (weight.dim(1) != Din || bias.dim(0) != Dout)
    throw ShapeError("dense_affine: inner dimensions disagree, input " + shape_str(input.shape()) +
                     ", weight " + shape_str(weight.shape()));
  std::vector<T> out(static_cast<size_t>(N) * Dout);
  for (int n = 0; n < N; ++n)
    for (int j = 0; j < Dout; ++j) {
      T acc = bias.data()[static_cast<size_t>(j)];
      const T* xr = input.data().data() + static_cast<size_t>(n) * Din;
      const T* wr = weight.data().data() + static_cast<size_t>(j) * Din;
      for (int i = 0; i < Din; ++i) acc += wr[i] * xr[i];
      out[static_cast<size_t>(n) * Dout + j] = acc;
    }
  auto back = [N, Din, Dout](TensorNode<T>& node) {
    auto& gx = node.parents[0]->grad;
    auto& gw = node.parents[1]->grad;
    auto& gb = node.parents[2]->grad;
    const auto& x = node.parents[0]->value;
    const auto& w = node.parents[1]->value;
    const auto& go = node.grad;
    for (int n = 0; n < N; ++n)
      for (int j = 0; j < Dout; ++j) {
        const T g = go[static_cast<size_t>(n) * Dout + j];
        gb[static_cast<size_t>(j)] += g;
        for (int i = 0; i < Din; ++i) {
          gx[static_cast<size_t>(n) * Din + i] += g * w[static_cast<size_t>(j) * Din + i];
          gw[static_cast<size_t>(j) * Din + i] += g * x[static_cast<size_t>(n) * Din + i];
        }
      }
  };
  return TensorT<T>::make_result({N, Dout}, std::move(out), {input, weight, bias}, back);
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& input) {
  if (input.rank() != 4) throw ShapeError("global_avg_pool expects rank-4 input");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int HW = H * W;
  std::vector<T> out(static_cast<size_t>(N) * C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = input.data().data() + (static_cast<size_t>(n) * C + c) * HW;
      T acc = T(0);
      for (int i = 0; i < HW; ++i) acc += p[i];
      out[static_cast<size_t>(n) * C + c] = acc / static_cast<T>(HW);
    }
  auto back = [N, C, HW](TensorNode<T>& node) {
    auto& gx = node.parents[0]->grad;
    const auto& go = node.grad;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T g = go[static_cast<size_t>(n) * C + c] / static_cast<T>(HW);
        T* p = gx.data() + (static_cast<size_t>(n) * C + c) * HW;
        for (int i = 0; i < HW; ++i) p[i] += g;
      }
  };
  return TensorT<T>::make_result({N, C}, std::move(out), {input}, back);
}

// Per-channel mean over batch and spatial positions, [N,C,H,W] -> [C].
template <typename T>
TensorT<T> channel_mean(const TensorT<T>& input) {
  if (input.rank() != 4) throw ShapeError("channel_mean expects rank-4 input");
  const int N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  const T denom = static_cast<T>(N) * static_cast<T>(HW);
  std::vector<T> out(static_cast<size_t>(C), T(0));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = input.data().data() + (static_cast<size_t>(n) * C + c) * HW;
      T acc = T(0);
      for (int i = 0; i < HW; ++i) acc += p[i];
      out[static_cast<size_t>(c)] += acc;
    }
  for (int c = 0; c < C; ++c) out[static_cast<size_t>(c)] /= denom;
  auto back = [N, C, HW, denom](TensorNode<T>& node) {
    auto& gx = node.parents[0]->grad;
    const auto& go = node.grad;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T g = go[static_cast<size_t>(c)] / denom;
        T* p = gx.data() + (static_cast<size_t>(n) * C + c) * HW;
        for (int i = 0; i < HW; ++i) p[i] += g;
      }
  };
  return TensorT<T>::make_result({C}, std::move(out), {input}, back);
}

// [C] -> [N,C,H,W] by repetition.
template <typename T>
TensorT<T> channel_broadcast(const TensorT<T>& v, int N, int H, int W) {
  if (v.rank() != 1) throw ShapeError("channel_broadcast expects a rank-1 vector");
  const int C = v.dim(0);
  const int HW = H * W;
  std::vector<T> out(static_cast<size_t>(N) * C * HW);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T val = v.data()[static_cast<size_t>(c)];
      T* p = out.data() + (static_cast<size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) p[i] = val;
    }
  auto back = [N, C, HW](TensorNode<T>& node) {
    auto& gv = node.parents[0]->grad;
    const auto& go = node.grad;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T* p = go.data() + (static_cast<size_t>(n) * C + c) * HW;
        T acc = T(0);
        for (int i = 0; i < HW; ++i) acc += p[i];
        gv[static_cast<size_t>(c)] += acc;
      }
  };
  return TensorT<T>::make_result({N, C, H, W}, std::move(out), {v}, back);
}

// y[n,c,h,w] = gamma[c]·x[n,c,h,w] + beta[c]; differentiable in all three.
template <typename T>
TensorT<T> channel_affine(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta) {
  if (x.rank() != 4) throw ShapeError("channel_affine expects rank-4 input");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != C || beta.dim(0) != C)
    throw ShapeError("channel_affine: gamma/beta must be rank-1 of length " + std::to_string(C));
  std::vector<T> out(x.numel());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T g = gamma.data()[static_cast<size_t>(c)];
      const T b = beta.data()[static_cast<size_t>(c)];
      const T* p = x.data().data() + (static_cast<size_t>(n) * C + c) * HW;
      T* q = out.data() + (static_cast<size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) q[i] = g * p[i] + b;
    }
  auto back = [N, C, HW](TensorNode<T>& node) {
    auto& gx = node.parents[0]->grad;
    auto& gg = node.parents[1]->grad;
    auto& gb = node.parents[2]->grad;
    const auto& x = node.parents[0]->value;
    const auto& gamma = node.parents[1]->value;
    const auto& go = node.grad;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T g = gamma[static_cast<size_t>(c)];
        const size_t base = (static_cast<size_t>(n) * C + c) * HW;
        T acc_g = T(0), acc_b = T(0);
        for (int i = 0; i < HW; ++i) {
          const T gi = go[base + i];
          gx[base + i] += g * gi;
          acc_g += gi * x[base + i];
          acc_b += gi;
        }
        gg[static_cast<size_t>(c)] += acc_g;
        gb[static_cast<size_t>(c)] += acc_b;
      }
  };
  return TensorT<T>::make_result(x.shape(), std::move(out), {x, gamma, beta}, back);
}

// Elementwise 1/sqrt(x + eps) on a vector; used by the normalization path.
template <typename T>
TensorT<T> rsqrt_eps(const TensorT<T>& x, T eps) {
  std::vector<T> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = T(1) / std::sqrt(x.data()[i] + eps);
  return TensorT<T>::make_result(x.shape(), std::move(out), {x}, [eps](TensorNode<T>& n) {
    auto& gx = n.parents[0]->grad;
    const auto& vx = n.parents[0]->value;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const T s = vx[i] + eps;
      gx[i] += n.grad[i] * (T(-0.5) / (s * std::sqrt(s)));
    }
  });
}

template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects logits[N,K]");
  const int N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(N));
  for (int n = 0; n < N; ++n)
    if (labels[static_cast<size_t>(n)] < 0 || labels[static_cast<size_t>(n)] >= K)
      throw LabelError("label " + std::to_string(labels[static_cast<size_t>(n)]) + " outside [0," +
                       std::to_string(K) + ")");
  T loss = T(0);
  for (int n = 0; n < N; ++n) {
    const T* z = logits.data().data() + static_cast<size_t>(n) * K;
    T zmax = z[0];
    for (int k = 1; k < K; ++k) zmax = std::max(zmax, z[k]);
    T se = T(0);
    for (int k = 0; k < K; ++k) se += std::exp(z[k] - zmax);
    loss += std::log(se) + zmax - z[labels[static_cast<size_t>(n)]];
  }
  loss /= static_cast<T>(N);
  auto back = [N, K, labels](TensorNode<T>& node) {
    auto& gz = node.parents[0]->grad;
    const auto& z = node.parents[0]->value;
    const T g = node.grad[0] / static_cast<T>(N);
    for (int n = 0; n < N; ++n) {
      const T* zr = z.data() + static_cast<size_t>(n) * K;
      T zmax = zr[0];
      for (int k = 1; k < K; ++k) zmax = std::max(zmax, zr[k]);
      T se = T(0);
      for (int k = 0; k < K; ++k) se += std::exp(zr[k] - zmax);
      for (int k = 0; k < K; ++k) {
        T p = std::exp(zr[k] - zmax) / se;
        if (k == labels[static_cast<size_t>(n)]) p -= T(1);
        gz[static_cast<size_t>(n) * K + k] += g * p;
      }
    }
  };
  return TensorT<T>::make_result({1}, {loss}, {logits}, back);
}

inline std::vector<int> argmax_rows(const std::vector<float>& logits, int N, int K) {
  std::vector<int> out(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (logits[static_cast<size_t>(n) * K + k] > logits[static_cast<size_t>(n) * K + best]) best = k;
    out[static_cast<size_t>(n)] = best;
  }
  return out;
}

// Central-difference gradient audit. Returns the max relative error across
// elements of x; callers assert against their tolerance.
template <typename T>
double finite_diff_check(const std::function<TensorT<T>(const TensorT<T>&)>& f,
                         const TensorT<T>& x, T step) {
  if (!(step > T(0))) throw RangeError("finite_diff_check: step must be positive");
  TensorT<T> xv(x.shape(), x.data());
  xv.set_requires_grad(true);
  TensorT<T> y = f(xv);
  if (y.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
  backward(y);
  const std::vector<T> analytic = xv.grad();

  double worst = 0.0;
  NoGradGuard ng;
  for (size_t i = 0; i < x.numel(); ++i) {
    TensorT<T> xp(x.shape(), x.data());
    TensorT<T> xm(x.shape(), x.data());
    xp.data()[i] += step;
    xm.data()[i] -= step;
    const double fp = static_cast<double>(f(xp).item());
    const double fm = static_cast<double>(f(xm).item());
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericsError("finite_diff_check: non-finite evaluation");
    const double central = (fp - fm) / (2.0 * static_cast<double>(step));
    const double a = static_cast<double>(analytic[i]);
    const double err = std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace nnpass
