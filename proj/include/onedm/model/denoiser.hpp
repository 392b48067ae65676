#pragma once
#include <string>
#include <vector>

#include "onedm/model/dims.hpp"
#include "onedm/model/encoders.hpp"
#include "onedm/nn/sinusoid.hpp"
#include "onedm/nn/tape.hpp"

namespace onedm {

// sinusoid -> linear -> silu -> linear, shared across all blocks of one pass
template <class T>
struct TimeEmbed {
  int width = 0;
  ParamId w1, b1, w2, b2;

  TimeEmbed() = default;
  TimeEmbed(ParamStore<T>& ps, const std::string& pfx, int t_emb)
      : width(t_emb) {
    w1 = ps.add(pfx + "/w1", {t_emb, t_emb}, Init::XavierLinear);
    b1 = ps.add(pfx + "/b1", {t_emb}, Init::Zeros);
    w2 = ps.add(pfx + "/w2", {t_emb, t_emb}, Init::XavierLinear);
    b2 = ps.add(pfx + "/b2", {t_emb}, Init::Zeros);
  }

  int forward(Tape<T>& t, int step) const {
    int x = t.constant(
        Tensor<T>({1, width}, sinusoid_embedding<T>(step, width).v));
    x = t.linear(x, t.param(w1), t.param(b1));
    x = t.silu(x);
    return t.linear(x, t.param(w2), t.param(b2));
  }
};

// single-conv residual unit with a per-block timestep bias:
//   h = conv3x3(silu(gn(x))) + time_bias ; out = h + skip(x)
template <class T>
struct ResBlock {
  int cin = 0, cout = 0, groups = 1;
  ParamId gng, gnb, cw, cb, tw, tb, sw = -1, sb = -1;

  ResBlock() = default;
  ResBlock(ParamStore<T>& ps, const std::string& pfx, int cin_, int cout_,
           int t_emb)
      : cin(cin_), cout(cout_), groups(gn_groups(cin_)) {
    gng = ps.add(pfx + "/gn/g", {cin}, Init::Ones);
    gnb = ps.add(pfx + "/gn/b", {cin}, Init::Zeros);
    cw = ps.add(pfx + "/conv/w", {cout, cin, 3, 3}, Init::KaimingConv);
    cb = ps.add(pfx + "/conv/b", {cout}, Init::Zeros);
    tw = ps.add(pfx + "/time/w", {t_emb, cout}, Init::XavierLinear);
    tb = ps.add(pfx + "/time/b", {cout}, Init::Zeros);
    if (cin != cout) {
      sw = ps.add(pfx + "/skip/w", {cout, cin}, Init::XavierLinear);
      sb = ps.add(pfx + "/skip/b", {cout}, Init::Zeros);
    }
  }

  int forward(Tape<T>& t, int x, int temb) const {
    int h = t.groupnorm(x, t.param(gng), t.param(gnb), groups);
    h = t.silu(h);
    h = t.conv2d(h, t.param(cw), t.param(cb), 1);
    int bias = t.linear(temb, t.param(tw), t.param(tb));
    h = t.add_channel_bias(h, t.reshape(bias, {cout}));
    int s = cin == cout ? x : t.conv1x1(x, t.param(sw), t.param(sb), 1);
    return t.add(h, s);
  }
};

// residual cross-attention over the condition tokens; only the query side is
// normalized so an untrained block stays close to identity
template <class T>
struct CrossAttnBlock {
  int heads = 1;
  ParamId lng, lnb;
  MhaParams<T> mha;

  CrossAttnBlock() = default;
  CrossAttnBlock(ParamStore<T>& ps, const std::string& pfx, int C, int cond_c,
                 int heads_)
      : mha(ps, pfx + "/attn", C, cond_c) {
    heads = heads_;
    while (heads > 1 && C % heads != 0) --heads;
    lng = ps.add(pfx + "/ln/g", {C}, Init::Ones);
    lnb = ps.add(pfx + "/ln/b", {C}, Init::Zeros);
  }

  int forward(Tape<T>& t, int x, int cond) const {
    int H = t.val(x).dim(1), W = t.val(x).dim(2);
    int tok = t.chw_to_tokens(x);
    int q = t.layernorm(tok, t.param(lng), t.param(lnb));
    int o = t.mha(q, cond, mha.nodes(t), heads);
    return t.tokens_to_chw(t.add(tok, o), H, W);
  }
};

// x0-predicting U-Net. A stride-2 stem keeps every conv off the full canvas,
// a matching pixel-shuffle head restores it. Condition tokens enter through
// cross-attention at the bottleneck and the deepest decoder level.
template <class T>
struct Denoiser {
  ModelDims dims;
  int head_c = 0;
  TimeEmbed<T> time;
  ParamId stem_w, stem_b;
  std::vector<ResBlock<T>> enc;
  std::vector<ParamId> down_w, down_b;
  ResBlock<T> mid1, mid2;
  CrossAttnBlock<T> xattn_mid, xattn_dec;
  std::vector<ParamId> up_w, up_b;
  std::vector<ResBlock<T>> dec;
  ParamId head1_w, head1_b, head_gng, head_gnb, head2_w, head2_b;

  Denoiser() = default;
  Denoiser(ParamStore<T>& ps, const std::string& pfx, const ModelDims& d)
      : dims(d), time(ps, pfx + "/time", d.t_emb) {
    const auto& w = d.unet_widths;
    int n = int(w.size());
    stem_w = ps.add(pfx + "/stem/w", {w[0], 1, 3, 3}, Init::KaimingConv);
    stem_b = ps.add(pfx + "/stem/b", {w[0]}, Init::Zeros);
    for (int i = 0; i + 1 < n; ++i) {
      std::string lv = pfx + "/enc" + std::to_string(i);
      enc.emplace_back(ps, lv, w[size_t(i)], w[size_t(i)], d.t_emb);
      down_w.push_back(ps.add(lv + "/down/w", {w[size_t(i) + 1], w[size_t(i)], 3, 3},
                              Init::KaimingConv));
      down_b.push_back(ps.add(lv + "/down/b", {w[size_t(i) + 1]}, Init::Zeros));
    }
    mid1 = ResBlock<T>(ps, pfx + "/mid1", w.back(), w.back(), d.t_emb);
    xattn_mid = CrossAttnBlock<T>(ps, pfx + "/xmid", w.back(), d.c, d.heads);
    mid2 = ResBlock<T>(ps, pfx + "/mid2", w.back(), w.back(), d.t_emb);
    for (int i = n - 2; i >= 0; --i) {
      std::string lv = pfx + "/dec" + std::to_string(i);
      up_w.push_back(ps.add(lv + "/up/w", {w[size_t(i)], w[size_t(i) + 1], 3, 3},
                            Init::KaimingConv));
      up_b.push_back(ps.add(lv + "/up/b", {w[size_t(i)]}, Init::Zeros));
      dec.emplace_back(ps, lv, 2 * w[size_t(i)], w[size_t(i)], d.t_emb);
    }
    xattn_dec = CrossAttnBlock<T>(ps, pfx + "/xdec", w[size_t(n) - 2], d.c, d.heads);
    head_c = std::max(4, w[0] / 4);
    head1_w = ps.add(pfx + "/head1/w", {4 * head_c, w[0], 3, 3}, Init::KaimingConv);
    head1_b = ps.add(pfx + "/head1/b", {4 * head_c}, Init::Zeros);
    head_gng = ps.add(pfx + "/headgn/g", {head_c}, Init::Ones);
    head_gnb = ps.add(pfx + "/headgn/b", {head_c}, Init::Zeros);
    // a zero-initialized output conv would block gradient into the condition
    // path on the first step, so the head starts at ordinary conv scale
    head2_w = ps.add(pfx + "/head2/w", {1, head_c, 3, 3}, Init::KaimingConv);
    head2_b = ps.add(pfx + "/head2/b", {1}, Init::Zeros);
  }

  // x_t: (1,H,W) node in [-1,1] coordinates; cond: (L,c) node -> x0hat (1,H,W)
  int forward(Tape<T>& t, int x_t, int step, int cond) const {
    const Tensor<T>& xv = t.val(x_t);
    if (xv.ndim() != 3 || xv.dim(0) != 1 || xv.dim(1) != dims.canvas_h ||
        xv.dim(2) != dims.canvas_w)
      throw DataError("predict_x0: input does not match the model canvas");
    if (step < 1) throw UsageError("predict_x0: timestep must be >= 1");
    int n = int(dims.unet_widths.size());
    int temb = time.forward(t, step);
    int x = t.conv2d(x_t, t.param(stem_w), t.param(stem_b), 2);
    std::vector<int> skips;
    for (int i = 0; i + 1 < n; ++i) {
      x = enc[size_t(i)].forward(t, x, temb);
      skips.push_back(x);
      x = t.conv2d(x, t.param(down_w[size_t(i)]), t.param(down_b[size_t(i)]), 2);
    }
    x = mid1.forward(t, x, temb);
    x = xattn_mid.forward(t, x, cond);
    x = mid2.forward(t, x, temb);
    for (int k = 0; k < n - 1; ++k) {
      int lvl = n - 2 - k;
      x = t.upsample2x(x);
      x = t.conv2d(x, t.param(up_w[size_t(k)]), t.param(up_b[size_t(k)]), 1);
      x = t.concat_ch(x, skips[size_t(lvl)]);
      x = dec[size_t(k)].forward(t, x, temb);
      if (lvl == n - 2) x = xattn_dec.forward(t, x, cond);
    }
    x = t.conv2d(x, t.param(head1_w), t.param(head1_b), 1);
    x = t.pixel_shuffle2(x);
    x = t.groupnorm(x, t.param(head_gng), t.param(head_gnb), gn_groups(head_c));
    x = t.silu(x);
    return t.conv2d(x, t.param(head2_w), t.param(head2_b), 1);
  }
};

}  // namespace onedm
