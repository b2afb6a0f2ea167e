#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "muse/error.hpp"

namespace muse {

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr uint64_t kFnvPrime = 0x100000001b3ULL;

inline uint64_t fnv1a64(const void *data, size_t n, uint64_t h = kFnvOffset) {
  const auto *p = static_cast<const unsigned char *>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::string checksum_hex(uint64_t h) {
  static const char *digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[size_t(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

inline uint64_t file_checksum(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open file for checksum: " + path);
  uint64_t h = kFnvOffset;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), std::streamsize(buf.size()));
    h = fnv1a64(buf.data(), size_t(in.gcount()), h);
  }
  return h;
}

inline std::string file_checksum_hex(const std::string &path) {
  return checksum_hex(file_checksum(path));
}

}  // namespace muse
