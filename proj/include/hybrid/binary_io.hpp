#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "hybrid/error.hpp"

namespace hybrid::io {

static_assert(std::endian::native == std::endian::little,
              "binary codecs assume a little-endian host");

/// Append-only little-endian encoder.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f32s(const std::vector<float>& v) { raw(v.data(), v.size() * sizeof(float)); }

  const std::string& data() const noexcept { return buf_; }

 private:
  void raw(const void* p, std::size_t len) {
    const auto* c = static_cast<const char*>(p);
    buf_.append(c, len);
  }
  std::string buf_;
};

/// Bounds-checked little-endian decoder; every failure reports its offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  std::string_view bytes(std::size_t len, const char* what) {
    require(len, what);
    auto s = data_.substr(pos_, len);
    pos_ += len;
    return s;
  }
  std::uint8_t u8(const char* what) { return read<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return read<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return read<std::uint32_t>(what); }

  void f32s(std::vector<float>& out, std::size_t count, const char* what) {
    if (count > remaining() / sizeof(float)) {
      throw FormatError(std::string("truncated ") + what, pos_);
    }
    out.resize(count);
    std::memcpy(out.data(), data_.data() + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
  }

 private:
  template <class T>
  T read(const char* what) {
    require(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void require(std::size_t len, const char* what) const {
    if (len > remaining()) throw FormatError(std::string("truncated ") + what, pos_);
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return data;
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

}  // namespace hybrid::io
