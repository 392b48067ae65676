#include "onedm/train/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace onedm {

static const char kMagic[8] = {'O', 'D', 'M', 'C', 'K', 'P', 'T', '1'};
static constexpr int kFormatVersion = 1;

uint32_t crc32_bytes(const void* data, size_t n) {
  static uint32_t table[256];
  static bool ready = false;
  if (!ready) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    ready = true;
  }
  uint32_t crc = 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

void Checkpoint::add(const std::string& name, std::vector<int> shape,
                     const float* data) {
  CkptEntry e;
  e.name = name;
  e.shape = std::move(shape);
  e.offset = payload.size() * 4;
  entries.push_back(e);
  payload.insert(payload.end(), data, data + entries.back().count());
}

const CkptEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw DataError("checkpoint: missing entry " + name);
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json h;
  h["format_version"] = kFormatVersion;
  h["dtype"] = "f32le";
  h["config"] = ck.config_text;
  h["step"] = ck.step;
  h["epoch"] = ck.epoch;
  h["best_loss"] = ck.best_loss;
  auto& ents = h["entries"] = nlohmann::json::array();
  for (const auto& e : ck.entries)
    ents.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}});
  std::string header = h.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot open for write: " + path);
  f.write(kMagic, 8);
  uint32_t hlen = uint32_t(header.size());
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(header.data(), std::streamsize(header.size()));
  const char* pay = reinterpret_cast<const char*>(ck.payload.data());
  size_t pbytes = ck.payload.size() * 4;
  f.write(pay, std::streamsize(pbytes));
  uint32_t crc = crc32_bytes(pay, pbytes);
  f.write(reinterpret_cast<const char*>(&crc), 4);
  if (!f) throw DataError("checkpoint: write failure: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open: " + path);
  std::string blob((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());

  if (blob.size() < 12 || std::memcmp(blob.data(), kMagic, 8) != 0)
    throw DataError("checkpoint: bad magic: " + path);
  uint32_t hlen = 0;
  std::memcpy(&hlen, blob.data() + 8, 4);
  if (blob.size() < 12 + size_t(hlen) + 4)
    throw DataError("checkpoint: truncated header: " + path);

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(blob.begin() + 12, blob.begin() + 12 + hlen);
  } catch (const std::exception& e) {
    throw DataError(std::string("checkpoint: header parse failure: ") + e.what());
  }

  Checkpoint ck;
  try {
    int ver = h.at("format_version").get<int>();
    if (ver != kFormatVersion)
      throw DataError("checkpoint: unsupported format version " +
                      std::to_string(ver));
    if (h.at("dtype").get<std::string>() != "f32le")
      throw DataError("checkpoint: unsupported dtype");
    ck.config_text = h.at("config").get<std::string>();
    ck.step = h.at("step").get<int64_t>();
    ck.epoch = h.at("epoch").get<int>();
    ck.best_loss = h.at("best_loss").get<double>();
    for (const auto& je : h.at("entries")) {
      CkptEntry e;
      e.name = je.at("name").get<std::string>();
      e.shape = je.at("shape").get<std::vector<int>>();
      e.offset = je.at("offset").get<uint64_t>();
      ck.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: header parse failure: ") + e.what());
  }

  size_t pbytes = blob.size() - 12 - hlen - 4;
  if (pbytes % 4 != 0)
    throw DataError("checkpoint: integrity failure, payload not float sized");
  // entries must tile the payload exactly in order
  uint64_t cursor = 0;
  for (const auto& e : ck.entries) {
    for (int d : e.shape)
      if (d <= 0) throw DataError("checkpoint: integrity failure, bad shape in " + e.name);
    if (e.offset != cursor)
      throw DataError("checkpoint: integrity failure, offset gap at " + e.name);
    cursor += e.count() * 4;
  }
  if (cursor != pbytes)
    throw DataError("checkpoint: integrity failure, entries cover " +
                    std::to_string(cursor) + " bytes, payload has " +
                    std::to_string(pbytes));

  const char* pay = blob.data() + 12 + hlen;
  uint32_t stored = 0;
  std::memcpy(&stored, blob.data() + blob.size() - 4, 4);
  uint32_t actual = crc32_bytes(pay, pbytes);
  if (stored != actual) throw DataError("checkpoint: CRC mismatch: " + path);

  ck.payload.resize(pbytes / 4);
  std::memcpy(ck.payload.data(), pay, pbytes);
  return ck;
}

}  // namespace onedm
