#pragma once
#include <string>

#include "onedm/core/tensor.hpp"

namespace onedm {

// Style proxies. All three binarize at half the image maximum, so they are
// exactly invariant under intensity rescalings that preserve that mask.
// Blank images (no positive pixel) raise DataError.

// shear factor in [-0.8, 0.8] whose removal makes strokes most vertical,
// measured by the sum of squared per-column mask counts; ties resolve
// toward 0
double estimate_slant(const Image& img);

// 2 * area / perimeter of the binarized ink, in pixels
double estimate_thickness(const Image& img);

// mean intensity of the pixels inside the ink mask
double estimate_ink(const Image& img);

// Fraction of glyph slots whose best-correlating template is the expected
// character. Slots come from a small search over the renderer's layout
// family (start column, advance, five shear candidates); each slot window is
// scored by normalized cross-correlation against all 36 glyph templates.
double content_accuracy(const Image& img, const std::string& text);

}  // namespace onedm
