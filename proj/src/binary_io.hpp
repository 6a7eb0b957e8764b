#pragma once

// Little-endian byte buffers for the checkpoint and dataset containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mixmatch/error.hpp"

namespace mixmatch::io {

template <class T>
T to_little_endian(T value) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
    std::memcpy(&value, raw, sizeof(T));
  }
  return value;
}

class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    static_assert(std::is_arithmetic_v<T>);
    value = to_little_endian(value);
    bytes(&value, sizeof(T));
  }
  void bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    buffer_.insert(buffer_.end(), p, p + size);
  }
  const std::vector<unsigned char>& buffer() const { return buffer_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buffer_.data()),
              static_cast<std::streamsize>(buffer_.size()));
    if (!out) throw FormatError("write failed: " + path.string());
  }

 private:
  std::vector<unsigned char> buffer_;
};

class ByteReader {
 public:
  ByteReader(std::vector<unsigned char> data, std::string source)
      : data_(std::move(data)), source_(std::move(source)) {}

  template <class T>
  T get() {
    static_assert(std::is_arithmetic_v<T>);
    T value;
    bytes(&value, sizeof(T));
    return to_little_endian(value);
  }
  void bytes(void* out, std::size_t size) {
    if (size > data_.size() - pos_) {
      throw FormatError(source_ + ": truncated (needed " + std::to_string(size) +
                        " bytes at offset " + std::to_string(pos_) + ")");
    }
    std::memcpy(out, data_.data() + pos_, size);
    pos_ += size;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
  std::string source_;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace mixmatch::io
