#pragma once

// Versioned binary container used for checkpoints.  A blob is a magic tag, a
// format version, and a sequence of named sections:
//
//   "RTXB" u32 version, then per section:
//   u32 name length, name bytes, u64 payload length, payload bytes
//
// Numeric payloads are little-endian host representation (the toolchain
// targets x86-64 only).  Unknown versions and truncated files are rejected.

#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace retex {

class BlobError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kBlobVersion = 1;

class BlobWriter {
 public:
  void add_bytes(const std::string& name, const void* data, std::size_t size);
  void add_string(const std::string& name, const std::string& text);
  void add_u64(const std::string& name, std::uint64_t value);
  template <typename T>
  void add_array(const std::string& name, std::span<const T> values) {
    add_bytes(name, values.data(), values.size() * sizeof(T));
  }
  void write(const std::string& path) const;

 private:
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> sections_;
};

class BlobReader {
 public:
  explicit BlobReader(const std::string& path);

  bool has(const std::string& name) const;
  const std::string& path() const { return path_; }
  std::span<const std::uint8_t> get_bytes(const std::string& name) const;
  std::string get_string(const std::string& name) const;
  std::uint64_t get_u64(const std::string& name) const;
  template <typename T>
  std::vector<T> get_array(const std::string& name) const {
    auto bytes = get_bytes(name);
    if (bytes.size() % sizeof(T) != 0)
      throw BlobError("blob section \"" + name + "\": size " +
                      std::to_string(bytes.size()) + " is not a multiple of " +
                      std::to_string(sizeof(T)));
    std::vector<T> out(bytes.size() / sizeof(T));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
  }

 private:
  std::string path_;
  std::vector<std::uint8_t> data_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> index_;  // offset, size
};

}  // namespace retex
