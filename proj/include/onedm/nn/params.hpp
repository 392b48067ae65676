#pragma once
#include <cmath>
#include <string>
#include <vector>

#include "onedm/core/errors.hpp"
#include "onedm/core/rng.hpp"
#include "onedm/core/tensor.hpp"

namespace onedm {

using ParamId = int;

enum class Init { Zeros, Ones, KaimingConv, XavierLinear };

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  size_t offset = 0;
  size_t count = 0;
  Init init = Init::Zeros;
};

// Flat parameter pool. Modules register entries at construction time; the
// registration order fixes both the init stream and the checkpoint layout.
template <class T>
class ParamStore {
 public:
  ParamId add(const std::string& name, std::vector<int> shape, Init init) {
    if (finalized_) throw std::logic_error("ParamStore: add after finalize");
    for (const auto& e : entries_)
      if (e.name == name) throw std::logic_error("duplicate param " + name);
    ParamInfo info;
    info.name = name;
    info.shape = std::move(shape);
    info.count = Tensor<T>::numel_of(info.shape);
    info.init = init;
    entries_.push_back(std::move(info));
    return ParamId(entries_.size() - 1);
  }

  void finalize() {
    size_t off = 0;
    for (auto& e : entries_) {
      e.offset = off;
      off += e.count;
    }
    data_.assign(off, T(0));
    finalized_ = true;
  }

  void init_params(Rng rng) {
    check_final();
    for (const auto& e : entries_) {
      T* p = data_.data() + e.offset;
      switch (e.init) {
        case Init::Zeros:
          for (size_t i = 0; i < e.count; ++i) p[i] = T(0);
          break;
        case Init::Ones:
          for (size_t i = 0; i < e.count; ++i) p[i] = T(1);
          break;
        case Init::KaimingConv: {
          // shape [Cout, Cin, kh, kw]
          size_t fan_in = e.count / size_t(e.shape[0]);
          double s = std::sqrt(2.0 / double(fan_in));
          for (size_t i = 0; i < e.count; ++i) p[i] = T(rng.normal(0.0, s));
          break;
        }
        case Init::XavierLinear: {
          // shape [Din, Dout]
          double s = std::sqrt(6.0 / double(e.shape[0] + e.shape[1]));
          for (size_t i = 0; i < e.count; ++i) p[i] = T(rng.uniform(-s, s));
          break;
        }
      }
    }
  }

  size_t size() const {
    check_final();
    return data_.size();
  }
  int n_entries() const { return int(entries_.size()); }
  const ParamInfo& info(ParamId id) const { return entries_[size_t(id)]; }
  const std::vector<ParamInfo>& entries() const { return entries_; }

  T* ptr(ParamId id) {
    check_final();
    return data_.data() + entries_[size_t(id)].offset;
  }
  const T* ptr(ParamId id) const {
    check_final();
    return data_.data() + entries_[size_t(id)].offset;
  }
  avec<T>& raw() { return data_; }
  const avec<T>& raw() const { return data_; }

  ParamId find(const std::string& name) const {
    for (size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return ParamId(i);
    return -1;
  }

  template <class U>
  void copy_into(ParamStore<U>& dst) const {
    // layouts must match (same module construction order)
    if (dst.size() != data_.size())
      throw std::logic_error("ParamStore::copy_into: size mismatch");
    for (size_t i = 0; i < data_.size(); ++i) dst.raw()[i] = U(data_[i]);
  }

 private:
  void check_final() const {
    if (!finalized_) throw std::logic_error("ParamStore: not finalized");
  }
  std::vector<ParamInfo> entries_;
  avec<T> data_;
  bool finalized_ = false;
};

}  // namespace onedm
