#pragma once
#include <string>

#include "onedm/core/rng.hpp"
#include "onedm/diffusion.hpp"
#include "onedm/image.hpp"
#include "onedm/model/model.hpp"

namespace onedm {

struct SampleOptions {
  int steps = 50;          // DDIM subsequence length; DDPM always walks the full chain
  double guidance = 0.25;  // 0 skips the unconditional pass entirely
  std::string sampler = "ddim";  // "ddim" | "ddpm"
  uint64_t seed = 1;
};

// Full reverse chain conditioned on one style reference and a text string.
// The style image must match the model canvas. Returns a [0,1] image
// quantized the same way the corpus is, so byte comparisons are meaningful.
Image sample_word(const Model<float>& model, const DiffusionSchedule& sched,
                  const Image& style_ref, const std::string& text,
                  const SampleOptions& opt);

}  // namespace onedm
