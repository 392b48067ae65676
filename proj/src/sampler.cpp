#include "onedm/eval/sampler.hpp"

#include <algorithm>

namespace onedm {

namespace {

// one denoiser evaluation on a throwaway inference tape
Tensor<float> predict(const Model<float>& model, const Tensor<float>& x_t,
                      int t, const Tensor<float>& cond) {
  Tape<float> tape = model.make_tape();
  int xn = tape.constant(x_t);
  int cn = tape.constant(cond);
  int x0 = model.predict_x0(tape, xn, t, cn);
  return tape.val(x0);
}

Tensor<float> guided_x0(const Model<float>& model, const Tensor<float>& x_t,
                        int t, const Tensor<float>& g,
                        const Tensor<float>& null_g, double w) {
  Tensor<float> c = predict(model, x_t, t, g);
  if (w != 0.0) {
    Tensor<float> u = predict(model, x_t, t, null_g);
    c = cfg_mix(c, u, w);
  }
  for (size_t i = 0; i < c.numel(); ++i)
    c[i] = std::clamp(c[i], -1.0f, 1.0f);
  return c;
}

}  // namespace

Image sample_word(const Model<float>& model, const DiffusionSchedule& sched,
                  const Image& style_ref, const std::string& text,
                  const SampleOptions& opt) {
  if (opt.sampler != "ddim" && opt.sampler != "ddpm")
    throw UsageError("sample: unknown sampler: " + opt.sampler +
                     " (ddim, ddpm)");
  if (opt.steps < 1) throw UsageError("sample: steps must be >= 1");

  int H = model.dims.canvas_h, W = model.dims.canvas_w;

  // condition values once; every denoiser call gets them as constants
  Tensor<float> g, null_g;
  {
    Tape<float> enc = model.make_tape();
    CondNodes<float> cn = model.encode_condition(enc, style_ref, text);
    g = enc.val(cn.g);
    null_g = enc.val(model.null_condition(enc));
  }

  Rng rng(opt.seed);
  Tensor<float> x({1, H, W});
  for (size_t i = 0; i < x.numel(); ++i) x[i] = float(rng.normal());

  if (opt.sampler == "ddim") {
    std::vector<int> ts = ddim_timesteps(sched.T, opt.steps);
    for (size_t i = 0; i < ts.size(); ++i) {
      int t = ts[i];
      int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
      Tensor<float> x0 = guided_x0(model, x, t, g, null_g, opt.guidance);
      x = ddim_step(x, x0, t, t_prev, sched);
    }
  } else {
    for (int t = sched.T; t >= 1; --t) {
      Tensor<float> x0 = guided_x0(model, x, t, g, null_g, opt.guidance);
      // drawn even for the final step (where it is ignored) so the noise
      // stream is a fixed function of (seed, T) alone
      Tensor<float> eps({1, H, W});
      for (size_t i = 0; i < eps.numel(); ++i) eps[i] = float(rng.normal());
      x = ddpm_step(x, x0, t, eps, sched);
    }
  }

  Image out({H, W});
  for (size_t i = 0; i < out.numel(); ++i)
    out[i] = 0.5f * (x[i] + 1.0f);
  snap_u8(out);
  return out;
}

}  // namespace onedm
