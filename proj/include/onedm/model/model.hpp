#pragma once
#include <string>
#include <vector>

#include "onedm/core/errors.hpp"
#include "onedm/core/rng.hpp"
#include "onedm/freq_filter.hpp"
#include "onedm/glyph_forge.hpp"
#include "onedm/model/denoiser.hpp"
#include "onedm/model/dims.hpp"
#include "onedm/model/encoders.hpp"
#include "onedm/model/fusion.hpp"

namespace onedm {

// Wiring variants for the component study. Every variant registers the full
// parameter set so checkpoints stay layout-compatible; only the forward
// routing and the contrastive term differ.
enum class Ablation { Full, NoGate, NoLap, NoLapNCE, RawNCE };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoGate: return "no-gate";
    case Ablation::NoLap: return "no-lap";
    case Ablation::NoLapNCE: return "no-lapnce";
    case Ablation::RawNCE: return "raw-nce";
  }
  throw UsageError("bad ablation value");
}

inline Ablation ablation_parse(const std::string& s) {
  for (Ablation a : {Ablation::Full, Ablation::NoGate, Ablation::NoLap,
                     Ablation::NoLapNCE, Ablation::RawNCE})
    if (s == ablation_name(a)) return a;
  throw UsageError("unknown ablation: " + s +
                   " (full, no-gate, no-lap, no-lapnce, raw-nce)");
}

template <class T>
struct CondNodes {
  int g = -1;        // fused condition tokens (L, c)
  int z = -1;        // unit style embedding (1, p)
  int gate = -1;     // gate units (d, 1), -1 when the gate is bypassed
  int f_spa = -1;    // spatial style tokens (d, c)
  int f_fre = -1;    // high-frequency style tokens (d, c), -1 when absent
  int style_kv = -1; // combined style tokens the fusion attends over (d, c)
};

template <class T>
class Model {
 public:
  ModelDims dims;
  Ablation ablation = Ablation::Full;

  Model(const ModelDims& d, Ablation ab) : dims(d), ablation(ab) {
    d.validate();
    style_spa_ = StyleEncoder<T>(ps_, "style_spa", d);
    style_fre_ = StyleEncoder<T>(ps_, "style_fre", d);
    gate_ = GateLayer<T>(ps_, "gate", d.c);
    proj_ = ProjHead<T>(ps_, "proj", d.c, d.p);
    content_ = ContentEncoder<T>(ps_, "content", d);
    fusion_ = Fusion<T>(ps_, "fusion", d);
    denoiser_ = Denoiser<T>(ps_, "denoiser", d);
    null_cond_ = ps_.add("null_cond", {1, d.c}, Init::XavierLinear);
    ps_.finalize();
  }

  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  void init(Rng& rng) { ps_.init_params(rng); }

  Tape<T> make_tape(std::vector<T>* grad = nullptr) const {
    return Tape<T>(&ps_, grad);
  }

  // whether the contrastive loss is part of this variant's objective
  bool contrastive_on() const {
    return ablation == Ablation::Full || ablation == Ablation::NoGate ||
           ablation == Ablation::RawNCE;
  }

  std::vector<Tensor<T>> glyphs_of(const std::string& text) const {
    if (text.empty()) throw DataError("glyphs_of: empty text");
    std::vector<Tensor<T>> out;
    out.reserve(text.size());
    for (char ch : text) {
      if (charset_index(ch) < 0)
        throw DataError(std::string("glyphs_of: character not in charset: '") +
                        ch + "'");
      out.push_back(glyph_canvas(ch).template cast<T>());
    }
    return out;
  }

  // style side only: branches, gate, embedding. g stays -1.
  CondNodes<T> encode_style(Tape<T>& t, const Tensor<T>& style_img) const {
    CondNodes<T> cn;
    cn.f_spa = style_spa_.forward(t, style_img);

    bool freq_branch =
        ablation != Ablation::NoLap && ablation != Ablation::RawNCE;
    if (freq_branch) {
      Image hf = laplacian_highfreq(style_img.template cast<float>());
      cn.f_fre = style_fre_.forward(t, hf.template cast<T>());
    }

    if (ablation != Ablation::NoGate) {
      auto [gated, gate] = gate_.forward(t, cn.f_spa);
      cn.style_kv = gated;
      cn.gate = gate;
    } else {
      cn.style_kv = cn.f_spa;
    }
    if (freq_branch) cn.style_kv = t.add(cn.style_kv, cn.f_fre);
    cn.z = proj_.forward(t, freq_branch ? cn.f_fre : cn.f_spa);
    return cn;
  }

  CondNodes<T> encode_condition(Tape<T>& t, const Tensor<T>& style_img,
                                const std::string& text) const {
    CondNodes<T> cn = encode_style(t, style_img);
    int e = content_.forward(t, glyphs_of(text));
    cn.g = fusion_.forward(t, e, cn.style_kv);
    return cn;
  }

  int null_condition(Tape<T>& t) const { return t.param(null_cond_); }

  // x_t in [-1,1] coordinates; returns the x0 estimate node (1,H,W)
  int predict_x0(Tape<T>& t, int x_t, int step, int cond) const {
    return denoiser_.forward(t, x_t, step, cond);
  }

  // inference-only style embedding for retrieval
  Tensor<T> style_embedding(const Tensor<T>& style_img) const {
    Tape<T> t = make_tape();
    CondNodes<T> cn = encode_style(t, style_img);
    return t.val(cn.z);
  }

 private:
  ParamStore<T> ps_;
  StyleEncoder<T> style_spa_, style_fre_;
  GateLayer<T> gate_;
  ProjHead<T> proj_;
  ContentEncoder<T> content_;
  Fusion<T> fusion_;
  Denoiser<T> denoiser_;
  ParamId null_cond_ = -1;
};

}  // namespace onedm
