// SPDX-License-Identifier: Apache-2.0
#include "datadream/binio.hpp"

#include <cstring>

namespace datadream {

BinWriter::BinWriter(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
  if (!out_) throw DataError("cannot open for writing: " + path.string());
}

void BinWriter::raw(const void* p, size_t n) {
  out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out_) throw DataError("write failed: " + path_.string());
}

void BinWriter::close() {
  out_.close();
  if (!out_) throw DataError("close failed: " + path_.string());
}

BinReader::BinReader(const std::filesystem::path& path, std::string what)
    : in_(path, std::ios::binary), what_(std::move(what)) {
  if (!in_) throw DataError(what_ + ": cannot open " + path.string());
}

void BinReader::raw(void* p, size_t n) {
  in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in_.gcount()) != n)
    throw IntegrityError(what_ + ": file truncated");
}

uint8_t BinReader::u8() {
  uint8_t v;
  raw(&v, 1);
  return v;
}

uint32_t BinReader::u32() {
  uint32_t v;
  raw(&v, 4);
  return v;
}

uint64_t BinReader::u64() {
  uint64_t v;
  raw(&v, 8);
  return v;
}

void BinReader::expect_magic(const char m[4]) {
  char got[4];
  raw(got, 4);
  if (std::memcmp(got, m, 4) != 0)
    throw FormatError(what_ + ": bad magic, not a " + std::string(m, 4) + " file");
}

std::string BinReader::str() {
  const uint32_t n = u32();
  if (n > (1u << 24)) throw IntegrityError(what_ + ": implausible string length, file corrupt");
  std::string s(n, '\0');
  if (n > 0) raw(s.data(), n);
  return s;
}

bool BinReader::at_end() {
  return in_.peek() == std::char_traits<char>::eof();
}

}  // namespace datadream
