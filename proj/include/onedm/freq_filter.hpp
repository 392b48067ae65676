#pragma once
#include "onedm/core/tensor.hpp"

namespace onedm {

struct Kernel3x3 {
  float k[3][3];
};

// 4-neighbor discrete Laplacian
inline constexpr Kernel3x3 LAPLACIAN4{{{0.f, 1.f, 0.f},
                                       {1.f, -4.f, 1.f},
                                       {0.f, 1.f, 0.f}}};

// Raw signed response, replicate padding, same dims as input.
Image convolve_2d(const Image& img, const Kernel3x3& k);

// |Laplacian response| normalized by its per-image max (eps-guarded), so the
// stroke contours come out bright in [0,1].
Image laplacian_highfreq(const Image& img);

}  // namespace onedm
