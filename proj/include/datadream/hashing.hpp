// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace datadream {

// 64-bit FNV-1a, used for artifact provenance and integrity checks.
class Fnv1a64 {
 public:
  Fnv1a64& update(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a64& update(std::string_view s) { return update(s.data(), s.size()); }
  template <class T>
  Fnv1a64& update_pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    return update(&v, sizeof(v));
  }
  uint64_t digest() const { return state_; }

 private:
  uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline uint64_t hash_bytes(const void* data, size_t n) { return Fnv1a64().update(data, n).digest(); }
inline uint64_t hash_string(std::string_view s) { return Fnv1a64().update(s).digest(); }

std::string hash_hex(uint64_t h);
uint64_t hash_file(const std::filesystem::path& path);

}  // namespace datadream
