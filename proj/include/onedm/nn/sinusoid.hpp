#pragma once
#include <cmath>

#include "onedm/core/tensor.hpp"

namespace onedm {

// Standard sin/cos embedding: dim/2 frequencies on a geometric ladder.
// Used both for timestep conditioning and content-token positions.
template <class T>
Tensor<T> sinusoid_embedding(double pos, int dim) {
  Tensor<T> out({dim});
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    out[size_t(i)] = T(std::sin(pos * freq));
    out[size_t(half + i)] = T(std::cos(pos * freq));
  }
  return out;
}

template <class T>
Tensor<T> position_table(int length, int dim) {
  Tensor<T> out({length, dim});
  for (int p = 0; p < length; ++p) {
    Tensor<T> row = sinusoid_embedding<T>(double(p), dim);
    for (int j = 0; j < dim; ++j) out.at(p, j) = row[size_t(j)];
  }
  return out;
}

}  // namespace onedm
