#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "onedm/core/errors.hpp"

namespace onedm {

// On-disk layout:
//   bytes 0..7    magic "ODMCKPT1"
//   bytes 8..11   u32le header length
//   header        JSON: format_version, dtype, config, step, epoch,
//                 best_loss, entries [{name, shape, offset}]
//   payload       all entries back to back, f32 little endian
//   trailer       u32le CRC-32 of the payload bytes
// Entry offsets are byte offsets into the payload.

struct CkptEntry {
  std::string name;
  std::vector<int> shape;
  uint64_t offset = 0;

  uint64_t count() const {
    uint64_t n = 1;
    for (int d : shape) n *= uint64_t(d);
    return n;
  }
};

struct Checkpoint {
  std::string config_text;
  int64_t step = 0;
  int epoch = 0;
  double best_loss = 0.0;
  std::vector<CkptEntry> entries;
  std::vector<float> payload;

  void add(const std::string& name, std::vector<int> shape, const float* data);
  const CkptEntry& entry(const std::string& name) const;
  const float* data_of(const CkptEntry& e) const { return payload.data() + e.offset / 4; }
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

uint32_t crc32_bytes(const void* data, size_t n);

}  // namespace onedm
