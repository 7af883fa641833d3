#include "retex/blob_io.hpp"

#include <cstring>
#include <fstream>

namespace retex {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'X', 'B'};

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.insert(out.end(), reinterpret_cast<const std::uint8_t*>(&v),
             reinterpret_cast<const std::uint8_t*>(&v) + 4);
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  out.insert(out.end(), reinterpret_cast<const std::uint8_t*>(&v),
             reinterpret_cast<const std::uint8_t*>(&v) + 8);
}

}  // namespace

void BlobWriter::add_bytes(const std::string& name, const void* data,
                           std::size_t size) {
  for (const auto& [n, payload] : sections_)
    if (n == name) throw BlobError("duplicate blob section \"" + name + "\"");
  std::vector<std::uint8_t> payload(size);
  if (size) std::memcpy(payload.data(), data, size);
  sections_.emplace_back(name, std::move(payload));
}

void BlobWriter::add_string(const std::string& name, const std::string& text) {
  add_bytes(name, text.data(), text.size());
}

void BlobWriter::add_u64(const std::string& name, std::uint64_t value) {
  add_bytes(name, &value, sizeof(value));
}

void BlobWriter::write(const std::string& path) const {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  append_u32(out, kBlobVersion);
  for (const auto& [name, payload] : sections_) {
    append_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    append_u64(out, payload.size());
    out.insert(out.end(), payload.begin(), payload.end());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw BlobError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw BlobError("write failed: " + path);
}

BlobReader::BlobReader(const std::string& path) : path_(path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw BlobError("cannot open: " + path);
  data_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > data_.size())
      throw BlobError("truncated blob: " + path);
  };
  need(8);
  if (std::memcmp(data_.data(), kMagic, 4) != 0)
    throw BlobError("not a blob file: " + path);
  std::uint32_t version;
  std::memcpy(&version, data_.data() + 4, 4);
  if (version != kBlobVersion)
    throw BlobError("unsupported blob version " + std::to_string(version) + ": " +
                    path);
  pos = 8;
  while (pos < data_.size()) {
    need(4);
    std::uint32_t name_len;
    std::memcpy(&name_len, data_.data() + pos, 4);
    pos += 4;
    need(name_len);
    std::string name(reinterpret_cast<const char*>(data_.data() + pos), name_len);
    pos += name_len;
    need(8);
    std::uint64_t payload_len;
    std::memcpy(&payload_len, data_.data() + pos, 8);
    pos += 8;
    need(payload_len);
    if (index_.count(name))
      throw BlobError("duplicate blob section \"" + name + "\": " + path);
    index_[name] = {pos, static_cast<std::size_t>(payload_len)};
    pos += payload_len;
  }
}

bool BlobReader::has(const std::string& name) const { return index_.count(name) > 0; }

std::span<const std::uint8_t> BlobReader::get_bytes(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw BlobError("missing blob section \"" + name + "\"");
  return {data_.data() + it->second.first, it->second.second};
}

std::string BlobReader::get_string(const std::string& name) const {
  auto bytes = get_bytes(name);
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

std::uint64_t BlobReader::get_u64(const std::string& name) const {
  auto bytes = get_bytes(name);
  if (bytes.size() != 8)
    throw BlobError("blob section \"" + name + "\" is not a u64");
  std::uint64_t v;
  std::memcpy(&v, bytes.data(), 8);
  return v;
}

}  // namespace retex
