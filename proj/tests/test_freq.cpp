#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "onedm/core/errors.hpp"
#include "onedm/core/rng.hpp"
#include "onedm/freq_filter.hpp"

using namespace onedm;

namespace {
// independent reference: same math, written as the obvious clamped loop
Image ref_convolve(const Image& img, const Kernel3x3& k) {
  int H = img.dim(0), W = img.dim(1);
  Image out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float s = 0.f;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int yy = std::clamp(y + dy, 0, H - 1);
          int xx = std::clamp(x + dx, 0, W - 1);
          s += k.k[dy + 1][dx + 1] * img.at(yy, xx);
        }
      out.at(y, x) = s;
    }
  return out;
}
}  // namespace

TEST_CASE("convolution matches the reference loop bit for bit") {
  Rng r(77);
  Kernel3x3 skew{{{0.5f, -1.f, 2.f}, {0.25f, 3.f, -0.75f}, {1.5f, 0.f, -2.f}}};
  for (auto dims : {std::pair{3, 3}, {4, 7}, {32, 128}}) {
    Image img({dims.first, dims.second});
    for (auto& p : img.v) p = float(r.uniform());
    for (const Kernel3x3& k : {LAPLACIAN4, skew}) {
      Image got = convolve_2d(img, k);
      Image want = ref_convolve(img, k);
      REQUIRE(got.shape == want.shape);
      CHECK(got.v == want.v);
    }
  }
}

TEST_CASE("convolution rejects images smaller than the kernel") {
  Image tiny({2, 5});
  CHECK_THROWS_AS(convolve_2d(tiny, LAPLACIAN4), DataError);
  Image thin({5, 2});
  CHECK_THROWS_AS(convolve_2d(thin, LAPLACIAN4), DataError);
}

TEST_CASE("laplacian kernel is the 4-neighbor stencil") {
  CHECK(LAPLACIAN4.k[1][1] == -4.f);
  CHECK(LAPLACIAN4.k[0][1] == 1.f);
  CHECK(LAPLACIAN4.k[1][0] == 1.f);
  CHECK(LAPLACIAN4.k[1][2] == 1.f);
  CHECK(LAPLACIAN4.k[2][1] == 1.f);
  CHECK(LAPLACIAN4.k[0][0] == 0.f);
  CHECK(LAPLACIAN4.k[0][2] == 0.f);
  CHECK(LAPLACIAN4.k[2][0] == 0.f);
  CHECK(LAPLACIAN4.k[2][2] == 0.f);
}

TEST_CASE("highfreq map is |response| / max, flat images give zeros") {
  Image flat({5, 9});
  flat.fill(0.7f);
  Image h = laplacian_highfreq(flat);
  for (float p : h.v) CHECK(p == 0.f);

  // single bright pixel: center response -4, neighbors 1, normalized by 4
  Image dot({5, 5});
  dot.at(2, 2) = 1.f;
  Image hd = laplacian_highfreq(dot);
  CHECK(hd.at(2, 2) == 1.f);
  CHECK(hd.at(1, 2) == 0.25f);
  CHECK(hd.at(2, 1) == 0.25f);
  CHECK(hd.at(0, 0) == 0.f);
  float mx = *std::max_element(hd.v.begin(), hd.v.end());
  CHECK(mx == 1.f);
  for (float p : hd.v) CHECK(p >= 0.f);
}

TEST_CASE("highfreq lights stroke contours, not stroke interiors") {
  // a thick horizontal bar: interior rows have zero vertical curvature
  Image bar({9, 9});
  for (int y = 3; y <= 5; ++y)
    for (int x = 0; x < 9; ++x) bar.at(y, x) = 1.f;
  Image h = laplacian_highfreq(bar);
  CHECK(h.at(4, 4) == 0.f);   // interior
  CHECK(h.at(3, 4) > 0.f);    // edge
  CHECK(h.at(2, 4) > 0.f);    // just outside
  CHECK(h.at(0, 4) == 0.f);   // far background
}
