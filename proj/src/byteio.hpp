#pragma once

// Little/big-endian helpers for the binary formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace grm::io {

using Bytes = std::vector<unsigned char>;

inline void put_u32le(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_u64le(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f64le(Bytes& out, double v) { put_u64le(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_i32le(Bytes& out, std::int32_t v) {
  put_u32le(out, static_cast<std::uint32_t>(v));
}

/// Sequential reader that reports byte offsets on truncation.
class Reader {
 public:
  Reader(const Bytes& data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) {
      throw std::runtime_error(what_ + ": truncated at byte " + std::to_string(pos_) +
                               ": need " + std::to_string(n) + " more bytes, have " +
                               std::to_string(remaining()));
    }
  }

  std::uint32_t u32be() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }

  std::uint32_t u32le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }

  std::uint64_t u64le() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }

  double f64le() { return std::bit_cast<double>(u64le()); }
  std::int32_t i32le() { return static_cast<std::int32_t>(u32le()); }

  unsigned char byte() {
    need(1);
    return data_[pos_++];
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const Bytes& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

/// Writes to `path.tmp` then renames over `path`.
inline void write_atomic(const std::filesystem::path& path, const void* data,
                         std::size_t size) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_atomic(const std::filesystem::path& path, const std::string& text) {
  write_atomic(path, text.data(), text.size());
}

inline void write_atomic(const std::filesystem::path& path, const Bytes& bytes) {
  write_atomic(path, bytes.data(), bytes.size());
}

}  // namespace grm::io
