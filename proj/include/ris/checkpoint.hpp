#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ris/tensor.hpp"

namespace ris {

// CRC-32 (IEEE 802.3 polynomial, reflected), table-driven.
inline std::uint32_t crc32(const void* data, std::size_t len,
                           std::uint32_t crc = 0) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const unsigned char*>(data);
  crc ^= 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

// Checkpoint layout (all integers little-endian):
//   magic "RISCKPT", u32 format version
//   u32 parameter record count, then records
//   u32 optimizer record count, then records
//   u64 config JSON length, JSON bytes
//   u32 CRC-32 of everything before it
// One record: u32 name length, name bytes, u8 dtype ('f' or 'd'), u32 rank,
// u64 extents, raw little-endian row-major payload.
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename I>
  void integer(I v) {
    raw(&v, sizeof v);  // little-endian host assumed, checked at load
  }
  void str(const std::string& s) {
    integer<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> b) : buf_(std::move(b)) {}
  void raw(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint: truncated file");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename I>
  I integer() {
    I v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = integer<std::uint32_t>();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::size_t pos() const { return pos_; }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

template <typename T>
void write_record(ByteWriter& w, const std::string& name, const Tensor<T>& t) {
  w.str(name);
  w.integer<std::uint8_t>(sizeof(T) == 4 ? 'f' : 'd');
  w.integer<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
  for (int e : t.shape) w.integer<std::uint64_t>(static_cast<std::uint64_t>(e));
  w.raw(t.data.data(), t.data.size() * sizeof(T));
}

template <typename T>
std::pair<std::string, Tensor<T>> read_record(ByteReader& r) {
  const std::string name = r.str();
  const auto dtype = r.integer<std::uint8_t>();
  const char expected = sizeof(T) == 4 ? 'f' : 'd';
  if (dtype != static_cast<std::uint8_t>(expected))
    throw std::runtime_error("checkpoint: record '" + name +
                             "' has mismatched precision");
  const auto rank = r.integer<std::uint32_t>();
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<int>(r.integer<std::uint64_t>());
  Tensor<T> t(shape);
  r.raw(t.data.data(), t.data.size() * sizeof(T));
  return {name, std::move(t)};
}

}  // namespace detail

template <typename T>
struct CheckpointData {
  std::vector<std::pair<std::string, Tensor<T>>> params;
  std::vector<std::pair<std::string, Tensor<T>>> optimizer;
  nlohmann::json config;
};

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointData<T>& data) {
  detail::ByteWriter w;
  w.raw("RISCKPT", 7);
  w.integer<std::uint32_t>(kCheckpointVersion);
  w.integer<std::uint32_t>(static_cast<std::uint32_t>(data.params.size()));
  for (const auto& [name, t] : data.params) detail::write_record(w, name, t);
  w.integer<std::uint32_t>(static_cast<std::uint32_t>(data.optimizer.size()));
  for (const auto& [name, t] : data.optimizer) detail::write_record(w, name, t);
  const std::string cfg = data.config.dump();
  w.integer<std::uint64_t>(cfg.size());
  w.raw(cfg.data(), cfg.size());
  const std::uint32_t crc = crc32(w.bytes().data(), w.bytes().size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  out.write(reinterpret_cast<const char*>(&crc), sizeof crc);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

template <typename T>
CheckpointData<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() < 7 + sizeof(std::uint32_t) * 2)
    throw std::runtime_error("load_checkpoint: file too short: " + path);

  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  bytes.resize(bytes.size() - 4);
  if (crc32(bytes.data(), bytes.size()) != stored_crc)
    throw std::runtime_error("load_checkpoint: CRC mismatch, file corrupt: " + path);

  detail::ByteReader r(std::move(bytes));
  char magic[7];
  r.raw(magic, 7);
  if (std::memcmp(magic, "RISCKPT", 7) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const auto version = r.integer<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported format version " +
                             std::to_string(version) + " in " + path);

  CheckpointData<T> data;
  const auto n_params = r.integer<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_params; ++i)
    data.params.push_back(detail::read_record<T>(r));
  const auto n_opt = r.integer<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_opt; ++i)
    data.optimizer.push_back(detail::read_record<T>(r));
  const auto cfg_len = r.integer<std::uint64_t>();
  std::string cfg(cfg_len, '\0');
  r.raw(cfg.data(), cfg_len);
  data.config = nlohmann::json::parse(cfg);
  return data;
}

}  // namespace ris
