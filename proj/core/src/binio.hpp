#pragma once

// Little-endian binary IO helpers shared by the mesh/feature/checkpoint file
// formats. Explicit byte order keeps the files portable across hosts.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "sunet/errors.hpp"

namespace sunet::binio {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataFormatError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataFormatError("cannot open for reading: " + path);
  return is;
}

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
  write_u32(os, static_cast<uint32_t>(v));
  write_u32(os, static_cast<uint32_t>(v >> 32));
}

inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<uint32_t>(v)); }
inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<uint64_t>(v)); }

inline uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw DataFormatError(std::string("truncated file while reading ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t read_u64(std::istream& is, const char* what) {
  uint64_t lo = read_u32(is, what);
  uint64_t hi = read_u32(is, what);
  return lo | (hi << 32);
}

inline float read_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(read_u32(is, what));
}
inline double read_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(read_u64(is, what));
}

inline void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char* magic, const std::string& path) {
  char got[4] = {};
  if (!is.read(got, 4) || got[0] != magic[0] || got[1] != magic[1] || got[2] != magic[2] ||
      got[3] != magic[3])
    throw DataFormatError("bad magic in " + path + " (expected " + magic + ")");
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
  uint32_t n = read_u32(is, what);
  if (n > (1u << 20)) throw DataFormatError(std::string("implausible string length in ") + what);
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw DataFormatError(std::string("truncated string in ") + what);
  return s;
}

}  // namespace sunet::binio
