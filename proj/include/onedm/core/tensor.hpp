#pragma once
#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <numeric>
#include <type_traits>
#include <vector>

namespace onedm {

// 64-byte aligned allocator for numeric buffers. Keeping every buffer on the
// same alignment class pins the SIMD peeling inside the gemm kernels, so a
// repeated forward pass is bit-identical instead of drifting with whatever
// address the heap happened to hand out.
template <class T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, size_t n) {
    ::operator delete(p, n * sizeof(T), kAlign);
  }
  // Default-insertion leaves scalars uninitialized; resize(n) then becomes a
  // cheap way to get scratch space that the caller overwrites in full.
  // assign/push_back still value-construct through the ordinary overload.
  template <class U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  bool operator==(const AlignedAlloc&) const { return true; }
  bool operator!=(const AlignedAlloc&) const { return false; }
};

template <class T>
using avec = std::vector<T, AlignedAlloc<T>>;

// Dense row-major tensor. Shapes are small so a std::vector<int> is fine.
template <class T>
struct Tensor {
  std::vector<int> shape;
  avec<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(numel_of(shape), T(0));
  }
  Tensor(std::vector<int> s, avec<T> data)
      : shape(std::move(s)), v(std::move(data)) {
    assert((size_t)numel_of(shape) == v.size());
  }

  // Skips the zero fill. Only for buffers every element of which is written
  // before any read; accumulator targets must use the zeroing constructor.
  static Tensor uninit(std::vector<int> s) {
    Tensor t;
    size_t n = numel_of(s);
    t.shape = std::move(s);
    t.v.resize(n);
    return t;
  }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) n *= size_t(d);
    return n;
  }

  size_t numel() const { return v.size(); }
  int dim(int i) const { return shape[size_t(i)]; }
  int ndim() const { return int(shape.size()); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator[](size_t i) { return v[i]; }
  const T& operator[](size_t i) const { return v[i]; }

  // 2d / 3d accessors for the common cases
  T& at(int i, int j) { return v[size_t(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return v[size_t(i) * shape[1] + j]; }
  T& at(int i, int j, int k) {
    return v[(size_t(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return v[(size_t(i) * shape[1] + j) * shape[2] + k];
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
    return out;
  }
};

using Image = Tensor<float>;  // shape {H, W}, values in [0,1]

}  // namespace onedm
