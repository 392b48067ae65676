#pragma once
#include <string>
#include <vector>

#include "onedm/core/errors.hpp"
#include "onedm/core/tensor.hpp"
#include "onedm/glyph_forge.hpp"
#include "onedm/model/dims.hpp"
#include "onedm/nn/sinusoid.hpp"
#include "onedm/nn/tape.hpp"

namespace onedm {

// largest group count <= 8 that divides C
inline int gn_groups(int C) {
  for (int g = std::min(8, C); g >= 1; --g)
    if (C % g == 0) return g;
  return 1;
}

template <class T>
struct MhaParams {
  ParamId wq, bq, wk, bk, wv, bv, wo, bo;

  MhaParams() = default;
  MhaParams(ParamStore<T>& ps, const std::string& pfx, int dq, int dkv) {
    wq = ps.add(pfx + "/wq", {dq, dq}, Init::XavierLinear);
    bq = ps.add(pfx + "/bq", {dq}, Init::Zeros);
    wk = ps.add(pfx + "/wk", {dkv, dq}, Init::XavierLinear);
    bk = ps.add(pfx + "/bk", {dq}, Init::Zeros);
    wv = ps.add(pfx + "/wv", {dkv, dq}, Init::XavierLinear);
    bv = ps.add(pfx + "/bv", {dq}, Init::Zeros);
    wo = ps.add(pfx + "/wo", {dq, dq}, Init::XavierLinear);
    bo = ps.add(pfx + "/bo", {dq}, Init::Zeros);
  }

  typename Tape<T>::MhaWeights nodes(Tape<T>& t) const {
    return {t.param(wq), t.param(bq), t.param(wk), t.param(bk),
            t.param(wv), t.param(bv), t.param(wo), t.param(bo)};
  }
};

// pre-LN transformer encoder layer: x += MHA(LN(x)); x += MLP(LN(x))
template <class T>
struct TransformerLayer {
  int heads = 1;
  MhaParams<T> mha;
  ParamId ln1g, ln1b, ln2g, ln2b, w1, b1, w2, b2;

  TransformerLayer() = default;
  TransformerLayer(ParamStore<T>& ps, const std::string& pfx, int c, int heads_)
      : heads(heads_), mha(ps, pfx + "/attn", c, c) {
    ln1g = ps.add(pfx + "/ln1/g", {c}, Init::Ones);
    ln1b = ps.add(pfx + "/ln1/b", {c}, Init::Zeros);
    ln2g = ps.add(pfx + "/ln2/g", {c}, Init::Ones);
    ln2b = ps.add(pfx + "/ln2/b", {c}, Init::Zeros);
    w1 = ps.add(pfx + "/mlp/w1", {c, 2 * c}, Init::XavierLinear);
    b1 = ps.add(pfx + "/mlp/b1", {2 * c}, Init::Zeros);
    w2 = ps.add(pfx + "/mlp/w2", {2 * c, c}, Init::XavierLinear);
    b2 = ps.add(pfx + "/mlp/b2", {c}, Init::Zeros);
  }

  int forward(Tape<T>& t, int x) const {
    int h = t.layernorm(x, t.param(ln1g), t.param(ln1b));
    int attn = t.mha(h, h, mha.nodes(t), heads);
    x = t.add(x, attn);
    int m = t.layernorm(x, t.param(ln2g), t.param(ln2b));
    m = t.linear(m, t.param(w1), t.param(b1));
    m = t.silu(m);
    m = t.linear(m, t.param(w2), t.param(b2));
    return t.add(x, m);
  }
};

// stride-2 residual conv unit: y = conv3x3_s2(silu(gn(x))) + conv1x1_s2(x)
template <class T>
struct ResDown {
  ParamId gng, gnb, cw, cb, sw, sb;
  int groups = 1;

  ResDown() = default;
  ResDown(ParamStore<T>& ps, const std::string& pfx, int cin, int cout) {
    groups = gn_groups(cin);
    gng = ps.add(pfx + "/gn/g", {cin}, Init::Ones);
    gnb = ps.add(pfx + "/gn/b", {cin}, Init::Zeros);
    cw = ps.add(pfx + "/conv/w", {cout, cin, 3, 3}, Init::KaimingConv);
    cb = ps.add(pfx + "/conv/b", {cout}, Init::Zeros);
    sw = ps.add(pfx + "/skip/w", {cout, cin}, Init::XavierLinear);
    sb = ps.add(pfx + "/skip/b", {cout}, Init::Zeros);
  }

  int forward(Tape<T>& t, int x) const {
    int h = t.groupnorm(x, t.param(gng), t.param(gnb), groups);
    h = t.silu(h);
    h = t.conv2d(h, t.param(cw), t.param(cb), 2);
    int s = t.conv1x1(x, t.param(sw), t.param(sb), 2);
    return t.add(h, s);
  }
};

// CNN (3 stride-2 residual blocks, /8) + transformer stack over the d tokens.
// Two independently parameterized instances serve the spatial and the
// high-frequency branches.
template <class T>
struct StyleEncoder {
  ModelDims dims;
  ResDown<T> b1, b2, b3;
  std::vector<TransformerLayer<T>> layers;

  StyleEncoder() = default;
  StyleEncoder(ParamStore<T>& ps, const std::string& pfx, const ModelDims& d)
      : dims(d) {
    int c = d.c;
    b1 = ResDown<T>(ps, pfx + "/b1", 1, c / 4);
    b2 = ResDown<T>(ps, pfx + "/b2", c / 4, c / 2);
    b3 = ResDown<T>(ps, pfx + "/b3", c / 2, c);
    for (int i = 0; i < d.enc_layers_style; ++i)
      layers.emplace_back(ps, pfx + "/t" + std::to_string(i), c, d.heads);
  }

  // img (H,W) in [0,1] -> tokens (d, c)
  int forward(Tape<T>& t, const Tensor<T>& img) const {
    if (img.dim(0) != dims.canvas_h || img.dim(1) != dims.canvas_w)
      throw DataError("encode_style: image does not match the model canvas");
    int x = t.constant(Tensor<T>({1, dims.canvas_h, dims.canvas_w}, img.v));
    x = b1.forward(t, x);
    x = b2.forward(t, x);
    x = b3.forward(t, x);
    x = t.chw_to_tokens(x);  // (d, c), no positions on the style axis
    for (const auto& l : layers) x = l.forward(t, x);
    return x;
  }
};

// per-glyph conv embed + sinusoidal positions + transformer stack
template <class T>
struct ContentEncoder {
  ModelDims dims;
  ParamId c1w, c1b, gng, gnb, c2w, c2b, fw, fb;
  int groups = 1;
  std::vector<TransformerLayer<T>> layers;
  bool use_positions = true;  // wiring-test knob

  ContentEncoder() = default;
  ContentEncoder(ParamStore<T>& ps, const std::string& pfx, const ModelDims& d)
      : dims(d) {
    int c8 = std::max(1, d.c / 8), c4 = std::max(2, d.c / 4);
    c1w = ps.add(pfx + "/c1/w", {c8, 1, 3, 3}, Init::KaimingConv);
    c1b = ps.add(pfx + "/c1/b", {c8}, Init::Zeros);
    groups = gn_groups(c8);
    gng = ps.add(pfx + "/gn/g", {c8}, Init::Ones);
    gnb = ps.add(pfx + "/gn/b", {c8}, Init::Zeros);
    c2w = ps.add(pfx + "/c2/w", {c4, c8, 3, 3}, Init::KaimingConv);
    c2b = ps.add(pfx + "/c2/b", {c4}, Init::Zeros);
    int flat = c4 * (d.glyph_px / 4) * (d.glyph_px / 4);
    fw = ps.add(pfx + "/fc/w", {flat, d.c}, Init::XavierLinear);
    fb = ps.add(pfx + "/fc/b", {d.c}, Init::Zeros);
    for (int i = 0; i < d.enc_layers_content; ++i)
      layers.emplace_back(ps, pfx + "/t" + std::to_string(i), d.c, d.heads);
  }

  // glyphs: L binary canvases (glyph_px x glyph_px) -> (L, c)
  int forward(Tape<T>& t, const std::vector<Tensor<T>>& glyphs) const {
    if (glyphs.empty()) throw DataError("encode_content: empty glyph sequence");
    std::vector<int> rows;
    rows.reserve(glyphs.size());
    for (const auto& g : glyphs) {
      int x = t.constant(Tensor<T>({1, dims.glyph_px, dims.glyph_px}, g.v));
      x = t.conv2d(x, t.param(c1w), t.param(c1b), 2);
      x = t.groupnorm(x, t.param(gng), t.param(gnb), groups);
      x = t.silu(x);
      x = t.conv2d(x, t.param(c2w), t.param(c2b), 2);
      x = t.silu(x);
      x = t.reshape(x, {1, int(t.val(x).numel())});
      rows.push_back(t.linear(x, t.param(fw), t.param(fb)));
    }
    int x = t.concat_rows(rows);
    if (use_positions)
      x = t.add(x, t.constant(position_table<T>(int(glyphs.size()), dims.c)));
    for (const auto& l : layers) x = l.forward(t, x);
    return x;
  }
};

// per-position pass rate: w_i = sigmoid(FC(f_i)), rows scaled by w_i
template <class T>
struct GateLayer {
  ParamId w, b;

  GateLayer() = default;
  GateLayer(ParamStore<T>& ps, const std::string& pfx, int c) {
    w = ps.add(pfx + "/w", {c, 1}, Init::XavierLinear);
    b = ps.add(pfx + "/b", {1}, Init::Zeros);
  }

  // returns {gated F, gate units node}
  std::pair<int, int> forward(Tape<T>& t, int f_spa) const {
    int logits = t.linear(f_spa, t.param(w), t.param(b));  // (d,1)
    int gate = t.sigmoid(logits);
    return {t.row_scale(f_spa, gate), gate};
  }
};

// mean-pool over tokens -> MLP -> unit sphere. ReLU keeps the map positively
// homogeneous so zero-bias configs are scale-invariant end to end.
template <class T>
struct ProjHead {
  ParamId w1, b1, w2, b2;

  ProjHead() = default;
  ProjHead(ParamStore<T>& ps, const std::string& pfx, int c, int p) {
    w1 = ps.add(pfx + "/w1", {c, c}, Init::XavierLinear);
    b1 = ps.add(pfx + "/b1", {c}, Init::Zeros);
    w2 = ps.add(pfx + "/w2", {c, p}, Init::XavierLinear);
    b2 = ps.add(pfx + "/b2", {p}, Init::Zeros);
  }

  int forward(Tape<T>& t, int f) const {
    int pooled = t.mean_rows(f);
    int x = t.reshape(pooled, {1, t.val(f).dim(1)});
    x = t.linear(x, t.param(w1), t.param(b1));
    x = t.relu(x);
    x = t.linear(x, t.param(w2), t.param(b2));
    return t.l2_normalize(x);
  }
};

// Supervised-contrastive loss on the unit-sphere embeddings: for each anchor
// with at least one same-writer positive, the mean -log softmax over all other
// batch members; anchors without positives are skipped and the average runs
// over contributing anchors only. Optionally returns d loss / d z.
template <class T>
T lap_nce_loss(const std::vector<Tensor<T>>& z, const std::vector<int>& writer,
               T tau, std::vector<Tensor<T>>* dz = nullptr) {
  if (tau <= T(0)) throw UsageError("lap_nce_loss: parameter error, tau <= 0");
  int N = int(z.size());
  if (N < 2 || writer.size() != z.size())
    throw UsageError("lap_nce_loss: batch error, need N >= 2 with writer ids");
  int P = int(z[0].numel());

  if (dz) {
    dz->assign(size_t(N), Tensor<T>(std::vector<int>{P}));
  }

  // pairwise inner products
  std::vector<T> s(size_t(N) * N, T(0));
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      if (i == j) continue;
      T d = T(0);
      for (int k = 0; k < P; ++k) d += z[size_t(i)][size_t(k)] * z[size_t(j)][size_t(k)];
      s[size_t(i) * N + j] = d;
    }

  // first pass to count contributing anchors
  int n_contrib = 0;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j)
      if (j != i && writer[size_t(j)] == writer[size_t(i)]) {
        ++n_contrib;
        break;
      }
  }
  if (n_contrib == 0) return T(0);

  T loss = T(0);
  std::vector<T> soft(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    int npos = 0;
    for (int j = 0; j < N; ++j)
      if (j != i && writer[size_t(j)] == writer[size_t(i)]) ++npos;
    if (npos == 0) continue;

    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < N; ++j)
      if (j != i) mx = std::max(mx, s[size_t(i) * N + j] / tau);
    T denom = T(0);
    for (int j = 0; j < N; ++j) {
      if (j == i) continue;
      soft[size_t(j)] = std::exp(s[size_t(i) * N + j] / tau - mx);
      denom += soft[size_t(j)];
    }
    T lse = mx + std::log(denom);
    T anchor = T(0);
    for (int j = 0; j < N; ++j)
      if (j != i && writer[size_t(j)] == writer[size_t(i)])
        anchor += s[size_t(i) * N + j] / tau - lse;
    loss -= anchor / T(npos);

    if (dz) {
      T c = T(1) / (T(n_contrib) * tau);
      for (int j = 0; j < N; ++j) {
        if (j == i) continue;
        T pos = writer[size_t(j)] == writer[size_t(i)] ? T(1) / T(npos) : T(0);
        T coef = c * (soft[size_t(j)] / denom - pos);
        for (int k = 0; k < P; ++k) {
          (*dz)[size_t(i)][size_t(k)] += coef * z[size_t(j)][size_t(k)];
          (*dz)[size_t(j)][size_t(k)] += coef * z[size_t(i)][size_t(k)];
        }
      }
    }
  }
  return loss / T(n_contrib);
}

}  // namespace onedm
