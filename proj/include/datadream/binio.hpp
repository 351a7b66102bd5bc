// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "datadream/errors.hpp"
#include "datadream/types.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

namespace datadream {

// Little-endian binary container primitives shared by adapter banks,
// model checkpoints, and other weight files. Matrices are stored
// row-major as 32-bit floats regardless of the in-memory scalar.
class BinWriter {
 public:
  explicit BinWriter(const std::filesystem::path& path);
  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void magic(const char m[4]) { raw(m, 4); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void bytes(const std::string& s) { raw(s.data(), s.size()); }
  template <class S>
  void matrix_f32(const MatX<S>& m) {
    u32(static_cast<uint32_t>(m.rows()));
    u32(static_cast<uint32_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) {
        float v = static_cast<float>(m(i, j));
        raw(&v, 4);
      }
  }
  void close();

 private:
  void raw(const void* p, size_t n);
  std::ofstream out_;
  std::filesystem::path path_;
};

class BinReader {
 public:
  // `what` names the artifact in error messages.
  BinReader(const std::filesystem::path& path, std::string what);
  uint8_t u8();
  uint32_t u32();
  uint64_t u64();
  void expect_magic(const char m[4]);
  std::string str();
  template <class S>
  MatX<S> matrix_f32() {
    const uint32_t rows = u32();
    const uint32_t cols = u32();
    if (static_cast<uint64_t>(rows) * cols > (1ULL << 28))
      throw IntegrityError(what_ + ": implausible matrix size, file corrupt");
    MatX<S> m(rows, cols);
    for (uint32_t i = 0; i < rows; ++i)
      for (uint32_t j = 0; j < cols; ++j) {
        float v;
        raw(&v, 4);
        m(i, j) = static_cast<S>(v);
      }
    return m;
  }
  std::string bytes(size_t n) {
    std::string s(n, '\0');
    if (n > 0) raw(s.data(), n);
    return s;
  }
  bool at_end();
  const std::string& what() const { return what_; }

 private:
  void raw(void* p, size_t n);
  std::ifstream in_;
  std::string what_;
};

}  // namespace datadream
