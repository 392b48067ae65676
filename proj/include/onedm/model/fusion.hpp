#pragma once
#include <string>

#include "onedm/core/errors.hpp"
#include "onedm/model/dims.hpp"
#include "onedm/model/encoders.hpp"
#include "onedm/nn/tape.hpp"

namespace onedm {

// Style-content fusion, two attention hops with pre-normalized inputs and no
// residual wrap: content queries attend over the combined style tokens, then
// the sum of that readout and the content embedding self-attends into the
// final condition sequence.
template <class T>
struct Fusion {
  int heads = 1;
  MhaParams<T> cross, self;
  ParamId ln1g, ln1b, ln2g, ln2b, ln3g, ln3b;

  Fusion() = default;
  Fusion(ParamStore<T>& ps, const std::string& pfx, const ModelDims& d)
      : heads(d.heads),
        cross(ps, pfx + "/cross", d.c, d.c),
        self(ps, pfx + "/self", d.c, d.c) {
    ln1g = ps.add(pfx + "/ln1/g", {d.c}, Init::Ones);
    ln1b = ps.add(pfx + "/ln1/b", {d.c}, Init::Zeros);
    ln2g = ps.add(pfx + "/ln2/g", {d.c}, Init::Ones);
    ln2b = ps.add(pfx + "/ln2/b", {d.c}, Init::Zeros);
    ln3g = ps.add(pfx + "/ln3/g", {d.c}, Init::Ones);
    ln3b = ps.add(pfx + "/ln3/b", {d.c}, Init::Zeros);
  }

  // content tokens e (L,c) query the combined style tokens (d,c) -> O (L,c)
  int cross_attend(Tape<T>& t, int e, int style) const {
    if (t.val(e).dim(1) != t.val(style).dim(1))
      throw DataError("fusion error: style/content width mismatch");
    int q = t.layernorm(e, t.param(ln1g), t.param(ln1b));
    int kv = t.layernorm(style, t.param(ln2g), t.param(ln2b));
    return t.mha(q, kv, cross.nodes(t), heads);
  }

  // g = SelfAttention(O + E), still (L,c)
  int self_attend(Tape<T>& t, int o, int e) const {
    if (t.val(o).shape != t.val(e).shape)
      throw DataError("fusion error: O/E shape mismatch");
    int x = t.layernorm(t.add(o, e), t.param(ln3g), t.param(ln3b));
    return t.mha(x, x, self.nodes(t), heads);
  }

  int forward(Tape<T>& t, int e, int style) const {
    int o = cross_attend(t, e, style);
    return self_attend(t, o, e);
  }
};

}  // namespace onedm
