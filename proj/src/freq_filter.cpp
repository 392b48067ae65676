#include "onedm/freq_filter.hpp"

#include <algorithm>
#include <cmath>

#include "onedm/core/errors.hpp"

namespace onedm {

Image convolve_2d(const Image& img, const Kernel3x3& k) {
  if (img.ndim() != 2 || img.dim(0) < 3 || img.dim(1) < 3)
    throw DataError("convolve_2d: image must be at least 3x3");
  int H = img.dim(0), W = img.dim(1);
  Image out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float acc = 0.f;
      for (int ky = -1; ky <= 1; ++ky)
        for (int kx = -1; kx <= 1; ++kx) {
          int yy = std::clamp(y + ky, 0, H - 1);
          int xx = std::clamp(x + kx, 0, W - 1);
          acc += k.k[ky + 1][kx + 1] * img.at(yy, xx);
        }
      out.at(y, x) = acc;
    }
  return out;
}

Image laplacian_highfreq(const Image& img) {
  Image resp = convolve_2d(img, LAPLACIAN4);
  float mx = 0.f;
  for (auto& p : resp.v) {
    p = std::fabs(p);
    mx = std::max(mx, p);
  }
  float denom = std::max(mx, 1e-8f);
  for (auto& p : resp.v) p /= denom;
  return resp;
}

}  // namespace onedm
