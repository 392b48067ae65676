#pragma once
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "onedm/core/gemm.hpp"
#include "onedm/core/tensor.hpp"
#include "onedm/nn/params.hpp"

namespace onedm {

// Reverse-mode tape. One tape per forward pass (per sample); parameter
// gradients accumulate into an external flat buffer so batch reduction
// order stays under the caller's control. Templated so the same graph
// runs in float for training and double for finite-difference checks.
template <class T>
class Tape {
 public:
  Tape(const ParamStore<T>* ps, std::vector<T>* param_grad)
      : ps_(ps), pgrad_(param_grad) {
    nodes_.reserve(1024);
    if (training()) tape_.reserve(1024);
  }

  bool training() const { return pgrad_ != nullptr; }

  const Tensor<T>& val(int i) const { return nodes_[size_t(i)].val; }
  Tensor<T>& grad(int i) { return nodes_[size_t(i)].grad; }

  int constant(Tensor<T> v) { return push(std::move(v)); }

  int param(ParamId id) {
    const auto& info = ps_->info(id);
    Tensor<T> v = Tensor<T>::uninit(info.shape);
    const T* src = ps_->ptr(id);
    std::copy(src, src + info.count, v.data());
    int n = push(std::move(v));
    if (training()) {
      size_t off = info.offset, cnt = info.count;
      tape_.push_back([this, n, off, cnt] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        T* dst = pgrad_->data() + off;
        for (size_t i = 0; i < cnt; ++i) dst[i] += g[i];
      });
    }
    return n;
  }

  // ---- elementwise ----

  int add(int a, int b) {
    Tensor<T> v = nodes_[size_t(a)].val;
    const Tensor<T>& bv = nodes_[size_t(b)].val;
    for (size_t i = 0; i < v.numel(); ++i) v[i] += bv[i];
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, b] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        acc(a, g);
        acc(b, g);
      });
    return n;
  }

  int scale(int a, T s) {
    Tensor<T> v = nodes_[size_t(a)].val;
    for (auto& x : v.v) x *= s;
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, s] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        Tensor<T> da = g;
        for (auto& x : da.v) x *= s;
        acc(a, da);
      });
    return n;
  }

  int mul(int a, int b) {
    Tensor<T> v = nodes_[size_t(a)].val;
    const Tensor<T>& bv = nodes_[size_t(b)].val;
    for (size_t i = 0; i < v.numel(); ++i) v[i] *= bv[i];
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, b] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        Tensor<T> da = g, db = g;
        const Tensor<T>& av = nodes_[size_t(a)].val;
        const Tensor<T>& bv2 = nodes_[size_t(b)].val;
        for (size_t i = 0; i < g.numel(); ++i) {
          da[i] *= bv2[i];
          db[i] *= av[i];
        }
        acc(a, da);
        acc(b, db);
      });
    return n;
  }

  int silu(int a) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    Tensor<T> v(x.shape);
    for (size_t i = 0; i < x.numel(); ++i) {
      T s = sigmoid_s(x[i]);
      v[i] = x[i] * s;
    }
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& x = nodes_[size_t(a)].val;
        Tensor<T> da(x.shape);
        for (size_t i = 0; i < x.numel(); ++i) {
          T s = sigmoid_s(x[i]);
          da[i] = g[i] * s * (T(1) + x[i] * (T(1) - s));
        }
        acc(a, da);
      });
    return n;
  }

  int relu(int a) {
    Tensor<T> v = nodes_[size_t(a)].val;
    for (auto& x : v.v) x = x > T(0) ? x : T(0);
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& x = nodes_[size_t(a)].val;
        Tensor<T> da(x.shape);
        for (size_t i = 0; i < x.numel(); ++i) da[i] = x[i] > T(0) ? g[i] : T(0);
        acc(a, da);
      });
    return n;
  }

  int sigmoid(int a) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    Tensor<T> v(x.shape);
    for (size_t i = 0; i < x.numel(); ++i) v[i] = sigmoid_s(x[i]);
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& y = nodes_[size_t(n)].val;
        Tensor<T> da(y.shape);
        for (size_t i = 0; i < y.numel(); ++i)
          da[i] = g[i] * y[i] * (T(1) - y[i]);
        acc(a, da);
      });
    return n;
  }

  // ---- shape plumbing ----

  int reshape(int a, std::vector<int> shape) {
    Tensor<T> v(std::move(shape), nodes_[size_t(a)].val.v);
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        Tensor<T> da(nodes_[size_t(a)].val.shape, g.v);
        acc(a, da);
      });
    return n;
  }

  // (C,H,W) -> (H*W, C)
  int chw_to_tokens(int a) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    int C = x.dim(0), H = x.dim(1), W = x.dim(2), HW = H * W;
    Tensor<T> v({HW, C});
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < HW; ++i) v.at(i, c) = x[size_t(c) * HW + i];
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, C, H, W, HW] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        Tensor<T> da({C, H, W});
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < HW; ++i) da[size_t(c) * HW + i] = g.at(i, c);
        acc(a, da);
      });
    return n;
  }

  // (HW, C) -> (C,H,W)
  int tokens_to_chw(int a, int H, int W) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    int HW = x.dim(0), C = x.dim(1);
    Tensor<T> v({C, H, W});
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < HW; ++i) v[size_t(c) * HW + i] = x.at(i, c);
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, C, HW] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        Tensor<T> da({HW, C});
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < HW; ++i) da.at(i, c) = g[size_t(c) * HW + i];
        acc(a, da);
      });
    return n;
  }

  int concat_ch(int a, int b) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    const Tensor<T>& y = nodes_[size_t(b)].val;
    int H = x.dim(1), W = x.dim(2);
    Tensor<T> v({x.dim(0) + y.dim(0), H, W});
    std::copy(x.v.begin(), x.v.end(), v.v.begin());
    std::copy(y.v.begin(), y.v.end(), v.v.begin() + x.numel());
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, b] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& x = nodes_[size_t(a)].val;
        const Tensor<T>& y = nodes_[size_t(b)].val;
        Tensor<T> da(x.shape), db(y.shape);
        std::copy(g.v.begin(), g.v.begin() + x.numel(), da.v.begin());
        std::copy(g.v.begin() + x.numel(), g.v.end(), db.v.begin());
        acc(a, da);
        acc(b, db);
      });
    return n;
  }

  // stack N row vectors (1,D) into (N,D)
  int concat_rows(const std::vector<int>& rows) {
    int D = nodes_[size_t(rows[0])].val.dim(1);
    int N = int(rows.size());
    Tensor<T> v({N, D});
    for (int i = 0; i < N; ++i) {
      const Tensor<T>& r = nodes_[size_t(rows[size_t(i)])].val;
      std::copy(r.v.begin(), r.v.end(), v.data() + size_t(i) * D);
    }
    int n = push(std::move(v));
    if (training()) {
      auto rs = std::make_shared<std::vector<int>>(rows);
      tape_.push_back([this, n, D, rs] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        for (size_t i = 0; i < rs->size(); ++i) {
          Tensor<T> dr({1, D});
          std::copy(g.data() + i * size_t(D), g.data() + (i + 1) * size_t(D),
                    dr.data());
          acc((*rs)[i], dr);
        }
      });
    }
    return n;
  }

  int upsample2x(int a) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor<T> v({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx)
          v.at(c, y, xx) = x.at(c, y / 2, xx / 2);
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, C, H, W] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        Tensor<T> da({C, H, W});
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < 2 * H; ++y)
            for (int xx = 0; xx < 2 * W; ++xx)
              da.at(c, y / 2, xx / 2) += g.at(c, y, xx);
        acc(a, da);
      });
    return n;
  }

  // (4C,H,W) -> (C,2H,2W); the four input blocks are the 2x2 subpixels
  int pixel_shuffle2(int a) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    int C4 = x.dim(0), H = x.dim(1), W = x.dim(2), C = C4 / 4;
    Tensor<T> v({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          for (int s = 0; s < 4; ++s)
            v.at(c, 2 * y + s / 2, 2 * xx + s % 2) = x.at(4 * c + s, y, xx);
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, C, H, W] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        Tensor<T> da({4 * C, H, W});
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
              for (int s = 0; s < 4; ++s)
                da.at(4 * c + s, y, xx) = g.at(c, 2 * y + s / 2, 2 * xx + s % 2);
        acc(a, da);
      });
    return n;
  }

  // x (C,H,W) + v[C] broadcast over pixels (timestep injection)
  int add_channel_bias(int a, int bias) {
    Tensor<T> v = nodes_[size_t(a)].val;
    const Tensor<T>& bv = nodes_[size_t(bias)].val;
    int C = v.dim(0);
    size_t HW = v.numel() / size_t(C);
    for (int c = 0; c < C; ++c)
      for (size_t i = 0; i < HW; ++i) v[size_t(c) * HW + i] += bv[size_t(c)];
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, bias, C, HW] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        acc(a, g);
        Tensor<T> db({C});
        for (int c = 0; c < C; ++c) {
          T s = T(0);
          for (size_t i = 0; i < HW; ++i) s += g[size_t(c) * HW + i];
          db[size_t(c)] = s;
        }
        acc(bias, db);
      });
    return n;
  }

  // ---- linear algebra ----

  // y[N,Do] = x[N,Di] @ W[Di,Do] + b[Do]
  int linear(int x, int w, int b) {
    const Tensor<T>& xv = nodes_[size_t(x)].val;
    const Tensor<T>& wv = nodes_[size_t(w)].val;
    const Tensor<T>& bv = nodes_[size_t(b)].val;
    int N = xv.dim(0), Di = xv.dim(1), Do = wv.dim(1);
    Tensor<T> v({N, Do});
    gemm_nn(N, Do, Di, xv.data(), wv.data(), v.data());
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < Do; ++j) v.at(i, j) += bv[size_t(j)];
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, x, w, b, N, Di, Do] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& xv = nodes_[size_t(x)].val;
        const Tensor<T>& wv = nodes_[size_t(w)].val;
        Tensor<T> dx({N, Di}), dw({Di, Do}), db({Do});
        gemm_nt(N, Di, Do, g.data(), wv.data(), dx.data());
        gemm_tn(Di, Do, N, xv.data(), g.data(), dw.data());
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < Do; ++j) db[size_t(j)] += g.at(i, j);
        acc(x, dx);
        acc(w, dw);
        acc(b, db);
      });
    return n;
  }

  // 3x3 conv, padding 1, stride 1 or 2. x (Cin,H,W), w (Cout,Cin,3,3), b (Cout)
  int conv2d(int x, int w, int b, int stride) {
    const Tensor<T>& xv = nodes_[size_t(x)].val;
    const Tensor<T>& wv = nodes_[size_t(w)].val;
    const Tensor<T>& bv = nodes_[size_t(b)].val;
    int Cin = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    int Cout = wv.dim(0);
    int Ho = (H + 2 - 3) / stride + 1, Wo = (W + 2 - 3) / stride + 1;
    int K = Cin * 9, N = Ho * Wo;
    Tensor<T> cols({K, N});
    im2col(xv, stride, Ho, Wo, cols);
    Tensor<T> v({Cout, Ho, Wo});
    gemm_nn(Cout, N, K, wv.data(), cols.data(), v.data());
    for (int c = 0; c < Cout; ++c)
      for (int i = 0; i < N; ++i) v[size_t(c) * N + i] += bv[size_t(c)];
    int n = push(std::move(v));
    if (training()) {
      auto colsp = std::make_shared<Tensor<T>>(std::move(cols));
      tape_.push_back([this, n, x, w, b, stride, Cin, H, W, Cout, Ho, Wo, K, N,
                       colsp] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& wv = nodes_[size_t(w)].val;
        Tensor<T> dw({Cout, Cin, 3, 3}), db({Cout});
        gemm_nt(Cout, K, N, g.data(), colsp->data(), dw.data());
        for (int c = 0; c < Cout; ++c) {
          T s = T(0);
          for (int i = 0; i < N; ++i) s += g[size_t(c) * N + i];
          db[size_t(c)] = s;
        }
        Tensor<T> dcols({K, N});
        gemm_tn(K, N, Cout, wv.data(), g.data(), dcols.data());
        Tensor<T> dx({Cin, H, W});
        col2im(dcols, stride, Ho, Wo, dx);
        acc(x, dx);
        acc(w, dw);
        acc(b, db);
      });
    }
    return n;
  }

  // 1x1 conv with stride (used for residual shortcuts)
  int conv1x1(int x, int w, int b, int stride) {
    const Tensor<T>& xv = nodes_[size_t(x)].val;
    const Tensor<T>& wv = nodes_[size_t(w)].val;  // (Cout, Cin)
    const Tensor<T>& bv = nodes_[size_t(b)].val;
    int Cin = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    int Cout = wv.dim(0);
    int Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;
    int N = Ho * Wo;
    Tensor<T> cols({Cin, N});
    for (int c = 0; c < Cin; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx)
          cols.at(c, y * Wo + xx) = xv.at(c, y * stride, xx * stride);
    Tensor<T> v({Cout, Ho, Wo});
    gemm_nn(Cout, N, Cin, wv.data(), cols.data(), v.data());
    for (int c = 0; c < Cout; ++c)
      for (int i = 0; i < N; ++i) v[size_t(c) * N + i] += bv[size_t(c)];
    int n = push(std::move(v));
    if (training()) {
      auto colsp = std::make_shared<Tensor<T>>(std::move(cols));
      tape_.push_back([this, n, x, w, b, stride, Cin, H, W, Cout, Ho, Wo, N,
                       colsp] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& wv = nodes_[size_t(w)].val;
        Tensor<T> dw({Cout, Cin}), db({Cout});
        gemm_nt(Cout, Cin, N, g.data(), colsp->data(), dw.data());
        for (int c = 0; c < Cout; ++c) {
          T s = T(0);
          for (int i = 0; i < N; ++i) s += g[size_t(c) * N + i];
          db[size_t(c)] = s;
        }
        Tensor<T> dcols({Cin, N});
        gemm_tn(Cin, N, Cout, wv.data(), g.data(), dcols.data());
        Tensor<T> dx({Cin, H, W});
        for (int c = 0; c < Cin; ++c)
          for (int y = 0; y < Ho; ++y)
            for (int xx = 0; xx < Wo; ++xx)
              dx.at(c, y * stride, xx * stride) = dcols.at(c, y * Wo + xx);
        acc(x, dx);
        acc(w, dw);
        acc(b, db);
      });
    }
    return n;
  }

  // ---- normalization ----

  // GroupNorm over (C,H,W); gamma/beta per channel
  int groupnorm(int x, int gamma, int beta, int groups) {
    const Tensor<T>& xv = nodes_[size_t(x)].val;
    const Tensor<T>& gv = nodes_[size_t(gamma)].val;
    const Tensor<T>& bv = nodes_[size_t(beta)].val;
    int C = xv.dim(0);
    size_t HW = xv.numel() / size_t(C);
    int cpg = C / groups;
    size_t m = size_t(cpg) * HW;
    Tensor<T> v(xv.shape);
    Tensor<T> mean({groups}), istd({groups});
    for (int g = 0; g < groups; ++g) {
      const T* base = xv.data() + size_t(g) * m;
      T mu = T(0);
      for (size_t i = 0; i < m; ++i) mu += base[i];
      mu /= T(m);
      T var = T(0);
      for (size_t i = 0; i < m; ++i) {
        T d = base[i] - mu;
        var += d * d;
      }
      var /= T(m);
      T is = T(1) / std::sqrt(var + T(kNormEps));
      mean[size_t(g)] = mu;
      istd[size_t(g)] = is;
      T* out = v.data() + size_t(g) * m;
      for (int cc = 0; cc < cpg; ++cc) {
        int c = g * cpg + cc;
        T ga = gv[size_t(c)], be = bv[size_t(c)];
        for (size_t i = 0; i < HW; ++i) {
          size_t idx = size_t(cc) * HW + i;
          out[idx] = (base[idx] - mu) * is * ga + be;
        }
      }
    }
    int n = push(std::move(v));
    if (training()) {
      auto stats = std::make_shared<std::pair<Tensor<T>, Tensor<T>>>(
          std::move(mean), std::move(istd));
      tape_.push_back([this, n, x, gamma, beta, groups, C, HW, cpg, m, stats] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& xv = nodes_[size_t(x)].val;
        const Tensor<T>& gv = nodes_[size_t(gamma)].val;
        Tensor<T> dx(xv.shape), dgamma({C}), dbeta({C});
        for (int gi = 0; gi < groups; ++gi) {
          T mu = stats->first[size_t(gi)], is = stats->second[size_t(gi)];
          const T* xb = xv.data() + size_t(gi) * m;
          const T* gb = g.data() + size_t(gi) * m;
          // dgamma/dbeta, then the two reduction terms of the input grad
          T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
          for (int cc = 0; cc < cpg; ++cc) {
            int c = gi * cpg + cc;
            T ga = gv[size_t(c)];
            T dg = T(0), db = T(0);
            for (size_t i = 0; i < HW; ++i) {
              size_t idx = size_t(cc) * HW + i;
              T xhat = (xb[idx] - mu) * is;
              dg += gb[idx] * xhat;
              db += gb[idx];
              T dxhat = gb[idx] * ga;
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
            dgamma[size_t(c)] += dg;
            dbeta[size_t(c)] += db;
          }
          T* dxb = dx.data() + size_t(gi) * m;
          T inv_m = T(1) / T(m);
          for (int cc = 0; cc < cpg; ++cc) {
            int c = gi * cpg + cc;
            T ga = gv[size_t(c)];
            for (size_t i = 0; i < HW; ++i) {
              size_t idx = size_t(cc) * HW + i;
              T xhat = (xb[idx] - mu) * is;
              T dxhat = gb[idx] * ga;
              dxb[idx] =
                  is * (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
            }
          }
        }
        acc(x, dx);
        acc(gamma, dgamma);
        acc(beta, dbeta);
      });
    }
    return n;
  }

  // LayerNorm over the last dim of (N,D)
  int layernorm(int x, int gamma, int beta) {
    const Tensor<T>& xv = nodes_[size_t(x)].val;
    const Tensor<T>& gv = nodes_[size_t(gamma)].val;
    const Tensor<T>& bv = nodes_[size_t(beta)].val;
    int N = xv.dim(0), D = xv.dim(1);
    Tensor<T> v({N, D}), mean({N}), istd({N});
    for (int i = 0; i < N; ++i) {
      const T* row = xv.data() + size_t(i) * D;
      T mu = T(0);
      for (int j = 0; j < D; ++j) mu += row[j];
      mu /= T(D);
      T var = T(0);
      for (int j = 0; j < D; ++j) {
        T d = row[j] - mu;
        var += d * d;
      }
      var /= T(D);
      T is = T(1) / std::sqrt(var + T(kNormEps));
      mean[size_t(i)] = mu;
      istd[size_t(i)] = is;
      T* out = v.data() + size_t(i) * D;
      for (int j = 0; j < D; ++j)
        out[j] = (row[j] - mu) * is * gv[size_t(j)] + bv[size_t(j)];
    }
    int n = push(std::move(v));
    if (training()) {
      auto stats = std::make_shared<std::pair<Tensor<T>, Tensor<T>>>(
          std::move(mean), std::move(istd));
      tape_.push_back([this, n, x, gamma, beta, N, D, stats] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& xv = nodes_[size_t(x)].val;
        const Tensor<T>& gv = nodes_[size_t(gamma)].val;
        Tensor<T> dx({N, D}), dgamma({D}), dbeta({D});
        for (int i = 0; i < N; ++i) {
          const T* row = xv.data() + size_t(i) * D;
          const T* grow = g.data() + size_t(i) * D;
          T mu = stats->first[size_t(i)], is = stats->second[size_t(i)];
          T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
          for (int j = 0; j < D; ++j) {
            T xhat = (row[j] - mu) * is;
            T dxhat = grow[j] * gv[size_t(j)];
            dgamma[size_t(j)] += grow[j] * xhat;
            dbeta[size_t(j)] += grow[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          T* dxrow = dx.data() + size_t(i) * D;
          T inv_d = T(1) / T(D);
          for (int j = 0; j < D; ++j) {
            T xhat = (row[j] - mu) * is;
            T dxhat = grow[j] * gv[size_t(j)];
            dxrow[j] =
                is * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
          }
        }
        acc(x, dx);
        acc(gamma, dgamma);
        acc(beta, dbeta);
      });
    }
    return n;
  }

  // ---- attention ----

  struct MhaWeights {
    int wq, bq, wk, bk, wv, bv, wo, bo;
  };

  // q_in (Lq, Dq), kv_in (Lkv, Dkv); inner width = Dq split over `heads`.
  // Wq (Dq,Dq), Wk/Wv (Dkv,Dq), Wo (Dq,Dq).
  int mha(int q_in, int kv_in, const MhaWeights& mw, int heads) {
    int Q = linear(q_in, mw.wq, mw.bq);
    int K = linear(kv_in, mw.wk, mw.bk);
    int V = linear(kv_in, mw.wv, mw.bv);
    int attn = scaled_dot_attention(Q, K, V, heads);
    return linear(attn, mw.wo, mw.bo);
  }

  // core attention with softmax; fused backward
  int scaled_dot_attention(int q, int k, int vv, int heads) {
    const Tensor<T>& Q = nodes_[size_t(q)].val;
    const Tensor<T>& K = nodes_[size_t(k)].val;
    const Tensor<T>& V = nodes_[size_t(vv)].val;
    int Lq = Q.dim(0), Lk = K.dim(0), D = Q.dim(1);
    int dh = D / heads;
    T inv_scale = T(1) / std::sqrt(T(dh));
    Tensor<T> out({Lq, D});
    // P rows stored per head for the backward pass
    auto probs = std::make_shared<Tensor<T>>(std::vector<int>{heads, Lq, Lk});
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < Lq; ++i) {
        const T* qrow = Q.data() + size_t(i) * D + size_t(h) * dh;
        T* prow = probs->data() + (size_t(h) * Lq + i) * Lk;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < Lk; ++j) {
          const T* krow = K.data() + size_t(j) * D + size_t(h) * dh;
          T s = T(0);
          for (int d = 0; d < dh; ++d) s += qrow[d] * krow[d];
          s *= inv_scale;
          prow[j] = s;
          mx = std::max(mx, s);
        }
        T denom = T(0);
        for (int j = 0; j < Lk; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          denom += prow[j];
        }
        T inv_denom = T(1) / denom;
        T* orow = out.data() + size_t(i) * D + size_t(h) * dh;
        for (int d = 0; d < dh; ++d) orow[d] = T(0);
        for (int j = 0; j < Lk; ++j) {
          prow[j] *= inv_denom;
          const T* vrow = V.data() + size_t(j) * D + size_t(h) * dh;
          T p = prow[j];
          for (int d = 0; d < dh; ++d) orow[d] += p * vrow[d];
        }
      }
    }
    int n = push(std::move(out));
    if (training()) {
      tape_.push_back([this, n, q, k, vv, heads, Lq, Lk, D, dh, inv_scale,
                       probs] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& Q = nodes_[size_t(q)].val;
        const Tensor<T>& K = nodes_[size_t(k)].val;
        const Tensor<T>& V = nodes_[size_t(vv)].val;
        Tensor<T> dQ(Q.shape), dK(K.shape), dV(V.shape);
        std::vector<T> dp(static_cast<size_t>(Lk));
        for (int h = 0; h < heads; ++h) {
          for (int i = 0; i < Lq; ++i) {
            const T* grow = g.data() + size_t(i) * D + size_t(h) * dh;
            const T* prow = probs->data() + (size_t(h) * Lq + i) * Lk;
            // dP and dV
            T dot = T(0);
            for (int j = 0; j < Lk; ++j) {
              const T* vrow = V.data() + size_t(j) * D + size_t(h) * dh;
              T s = T(0);
              for (int d = 0; d < dh; ++d) s += grow[d] * vrow[d];
              dp[size_t(j)] = s;
              dot += s * prow[j];
              T* dvrow = dV.data() + size_t(j) * D + size_t(h) * dh;
              T p = prow[j];
              for (int d = 0; d < dh; ++d) dvrow[d] += p * grow[d];
            }
            // softmax backward then the scale factor
            const T* qrow = Q.data() + size_t(i) * D + size_t(h) * dh;
            T* dqrow = dQ.data() + size_t(i) * D + size_t(h) * dh;
            for (int j = 0; j < Lk; ++j) {
              T ds = prow[j] * (dp[size_t(j)] - dot) * inv_scale;
              const T* krow = K.data() + size_t(j) * D + size_t(h) * dh;
              T* dkrow = dK.data() + size_t(j) * D + size_t(h) * dh;
              for (int d = 0; d < dh; ++d) {
                dqrow[d] += ds * krow[d];
                dkrow[d] += ds * qrow[d];
              }
            }
          }
        }
        acc(q, dQ);
        acc(k, dK);
        acc(vv, dV);
      });
    }
    return n;
  }

  // ---- reductions ----

  int mean_rows(int a) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    int N = x.dim(0), D = x.dim(1);
    Tensor<T> v({D});
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < D; ++j) v[size_t(j)] += x.at(i, j);
    T inv_n = T(1) / T(N);
    for (auto& e : v.v) e *= inv_n;
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, N, D] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        Tensor<T> da({N, D});
        T inv_n = T(1) / T(N);
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < D; ++j) da.at(i, j) = g[size_t(j)] * inv_n;
        acc(a, da);
      });
    return n;
  }

  int l2_normalize(int a) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    T nrm2 = T(0);
    for (const auto& e : x.v) nrm2 += e * e;
    T nrm = std::sqrt(nrm2 + T(1e-24));
    Tensor<T> v = x;
    for (auto& e : v.v) e /= nrm;
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, a, nrm] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& y = nodes_[size_t(n)].val;
        T dot = T(0);
        for (size_t i = 0; i < g.numel(); ++i) dot += g[i] * y[i];
        Tensor<T> da(y.shape);
        for (size_t i = 0; i < g.numel(); ++i)
          da[i] = (g[i] - y[i] * dot) / nrm;
        acc(a, da);
      });
    return n;
  }

  // F (d,c) rows scaled by w (d,1)
  int row_scale(int f, int w) {
    const Tensor<T>& fv = nodes_[size_t(f)].val;
    const Tensor<T>& wv = nodes_[size_t(w)].val;
    int d = fv.dim(0), c = fv.dim(1);
    Tensor<T> v({d, c});
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < c; ++j) v.at(i, j) = fv.at(i, j) * wv[size_t(i)];
    int n = push(std::move(v));
    if (training())
      tape_.push_back([this, n, f, w, d, c] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& fv = nodes_[size_t(f)].val;
        const Tensor<T>& wv = nodes_[size_t(w)].val;
        Tensor<T> df({d, c}), dw(nodes_[size_t(w)].val.shape);
        for (int i = 0; i < d; ++i) {
          T s = T(0);
          for (int j = 0; j < c; ++j) {
            df.at(i, j) = g.at(i, j) * wv[size_t(i)];
            s += g.at(i, j) * fv.at(i, j);
          }
          dw[size_t(i)] = s;
        }
        acc(f, df);
        acc(w, dw);
      });
    return n;
  }

  // scalar node: mean((a - target)^2), target is a plain tensor
  int mse_to(int a, Tensor<T> target) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    T s = T(0);
    for (size_t i = 0; i < x.numel(); ++i) {
      T d = x[i] - target[i];
      s += d * d;
    }
    s /= T(x.numel());
    Tensor<T> v({1});
    v[0] = s;
    int n = push(std::move(v));
    if (training()) {
      auto tp = std::make_shared<Tensor<T>>(std::move(target));
      tape_.push_back([this, n, a, tp] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        const Tensor<T>& x = nodes_[size_t(a)].val;
        T c = T(2) * g[0] / T(x.numel());
        Tensor<T> da(x.shape);
        for (size_t i = 0; i < x.numel(); ++i) da[i] = c * (x[i] - (*tp)[i]);
        acc(a, da);
      });
    }
    return n;
  }

  // mean cross-entropy of logits (N,C) against integer labels
  int softmax_xent(int a, std::vector<int> labels) {
    const Tensor<T>& x = nodes_[size_t(a)].val;
    int N = x.dim(0), C = x.dim(1);
    auto probs = std::make_shared<Tensor<T>>(std::vector<int>{N, C});
    T loss = T(0);
    for (int i = 0; i < N; ++i) {
      const T* row = x.data() + size_t(i) * C;
      T mx = row[0];
      for (int j = 1; j < C; ++j) mx = std::max(mx, row[j]);
      T denom = T(0);
      for (int j = 0; j < C; ++j) {
        T e = std::exp(row[j] - mx);
        probs->at(i, j) = e;
        denom += e;
      }
      for (int j = 0; j < C; ++j) probs->at(i, j) /= denom;
      loss -= std::log(std::max(probs->at(i, labels[size_t(i)]), T(1e-30)));
    }
    loss /= T(N);
    Tensor<T> v({1});
    v[0] = loss;
    int n = push(std::move(v));
    if (training()) {
      auto lp = std::make_shared<std::vector<int>>(std::move(labels));
      tape_.push_back([this, n, a, N, C, probs, lp] {
        const Tensor<T>& g = nodes_[size_t(n)].grad;
        if (g.numel() == 0) return;
        Tensor<T> da({N, C});
        T c = g[0] / T(N);
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < C; ++j) {
            T p = probs->at(i, j);
            da.at(i, j) = c * (p - ((*lp)[size_t(i)] == j ? T(1) : T(0)));
          }
        acc(a, da);
      });
    }
    return n;
  }

  // ---- backward driver ----

  void backward(const std::vector<std::pair<int, Tensor<T>>>& seeds) {
    if (!training()) throw std::logic_error("Tape::backward in inference mode");
    for (const auto& [node, seed] : seeds) acc(node, seed);
    for (size_t i = tape_.size(); i-- > 0;) tape_[i]();
  }

  size_t n_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // empty until touched
  };

  static constexpr double kNormEps = 1e-5;

  static T sigmoid_s(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                     : std::exp(x) / (T(1) + std::exp(x));
  }

  int push(Tensor<T> v) {
    nodes_.push_back(Node{std::move(v), Tensor<T>{}});
    return int(nodes_.size() - 1);
  }

  void acc(int node, const Tensor<T>& g) {
    Node& nd = nodes_[size_t(node)];
    if (nd.grad.numel() == 0) {
      nd.grad = g;
      nd.grad.shape = nd.val.shape;
      return;
    }
    for (size_t i = 0; i < g.numel(); ++i) nd.grad[i] += g[i];
  }

  static void im2col(const Tensor<T>& x, int stride, int Ho, int Wo,
                     Tensor<T>& cols) {
    int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    int N = Ho * Wo;
    for (int c = 0; c < Cin; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          T* dst = cols.data() + size_t((c * 3 + ky) * 3 + kx) * N;
          for (int oy = 0; oy < Ho; ++oy) {
            int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= H) {
              for (int ox = 0; ox < Wo; ++ox) dst[oy * Wo + ox] = T(0);
              continue;
            }
            const T* src = x.data() + (size_t(c) * H + iy) * W;
            for (int ox = 0; ox < Wo; ++ox) {
              int ix = ox * stride + kx - 1;
              dst[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
            }
          }
        }
  }

  static void col2im(const Tensor<T>& cols, int stride, int Ho, int Wo,
                     Tensor<T>& dx) {
    int Cin = dx.dim(0), H = dx.dim(1), W = dx.dim(2);
    int N = Ho * Wo;
    for (int c = 0; c < Cin; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const T* src = cols.data() + size_t((c * 3 + ky) * 3 + kx) * N;
          for (int oy = 0; oy < Ho; ++oy) {
            int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= H) continue;
            T* dst = dx.data() + (size_t(c) * H + iy) * W;
            for (int ox = 0; ox < Wo; ++ox) {
              int ix = ox * stride + kx - 1;
              if (ix >= 0 && ix < W) dst[ix] += src[oy * Wo + ox];
            }
          }
        }
  }

  const ParamStore<T>* ps_;
  std::vector<T>* pgrad_;
  std::vector<Node> nodes_;
  std::vector<std::function<void()>> tape_;
};

}  // namespace onedm
