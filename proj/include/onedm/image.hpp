#pragma once
#include <string>

#include "onedm/core/tensor.hpp"

namespace onedm {

// 8-bit binary PGM (P5). Pixels are stored as gray/255 in [0,1]; writing
// rounds to the nearest 1/255 step, so images quantized with snap_u8 round
// trip bit-exactly.
void save_pgm(const std::string& path, const Image& img);
Image load_pgm(const std::string& path);

// clamp to [0,1] and snap every pixel onto the 1/255 grid
void snap_u8(Image& img);

// stack a on top of b with a 1px separator row (for visual dumps)
Image vstack_with_rule(const Image& a, const Image& b);

}  // namespace onedm
