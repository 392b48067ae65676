#pragma once
#include <string>
#include <vector>

#include "onedm/core/errors.hpp"

namespace onedm {

// Network size knobs. "desk" is the scale the acceptance experiments run at;
// "paper" mirrors the published configuration (same code path, bigger dims).
struct ModelDims {
  int canvas_h = 32;
  int canvas_w = 128;
  int c = 128;                // feature width
  int heads = 4;
  int p = 64;                 // style embedding dim
  int enc_layers_content = 2;
  int enc_layers_style = 3;
  int conv_downsample = 8;    // style tokens d = (H/8)*(W/8)
  std::vector<int> unet_widths = {32, 64, 128};
  int t_emb = 128;            // timestep embedding width after the MLP
  int glyph_px = 16;

  int style_tokens() const {
    return (canvas_h / conv_downsample) * (canvas_w / conv_downsample);
  }

  void validate() const {
    if (c % heads != 0) throw UsageError("dims: c must be divisible by heads");
    if (canvas_h % conv_downsample != 0 || canvas_w % conv_downsample != 0)
      throw UsageError("dims: downsample must divide the canvas");
    if (unet_widths.size() < 2) throw UsageError("dims: need >= 2 unet widths");
    // the U-Net stem halves the canvas, then each extra width halves again
    int need = 2 << (int(unet_widths.size()) - 1);
    if (canvas_h % need != 0 || canvas_w % need != 0)
      throw UsageError("dims: canvas too small for the U-Net depth");
  }

  static ModelDims desk() { return ModelDims{}; }

  static ModelDims paper() {
    ModelDims d;
    d.c = 512;
    d.heads = 8;
    d.p = 64;
    d.unet_widths = {64, 128, 256};
    d.t_emb = 256;
    return d;
  }

  // for gradient checks and fast unit tests
  static ModelDims tiny() {
    ModelDims d;
    d.canvas_h = 8;
    d.canvas_w = 16;
    d.c = 8;
    d.heads = 2;
    d.p = 8;
    d.unet_widths = {4, 8};
    d.t_emb = 8;
    return d;
  }

  static ModelDims preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    if (name == "tiny") return tiny();
    throw UsageError("unknown dims preset: " + name);
  }
};

}  // namespace onedm
