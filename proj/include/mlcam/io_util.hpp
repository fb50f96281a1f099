#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>

#include "mlcam/error.hpp"

namespace mlcam {

// Little-endian fixed-width primitives for the checkpoint format.

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void write_u16_le(std::ostream& os, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

inline void write_u8(std::ostream& os, std::uint8_t v) {
  os.put(static_cast<char>(v));
}

inline void write_f64_le(std::ostream& os, double v) {
  write_u64_le(os, std::bit_cast<std::uint64_t>(v));
}

inline void read_exact(std::istream& is, char* buf, std::size_t n, const char* what) {
  is.read(buf, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw DataError(std::string("checkpoint: truncated while reading ") + what);
  }
}

inline std::uint64_t read_u64_le(std::istream& is, const char* what) {
  char b[8];
  read_exact(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
  return v;
}

inline std::uint32_t read_u32_le(std::istream& is, const char* what) {
  char b[4];
  read_exact(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
  return v;
}

inline std::uint16_t read_u16_le(std::istream& is, const char* what) {
  char b[2];
  read_exact(is, b, 2, what);
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(b[0]) |
                                    (static_cast<std::uint8_t>(b[1]) << 8));
}

inline std::uint8_t read_u8(std::istream& is, const char* what) {
  char b;
  read_exact(is, &b, 1, what);
  return static_cast<std::uint8_t>(b);
}

inline double read_f64_le(std::istream& is, const char* what) {
  return std::bit_cast<double>(read_u64_le(is, what));
}

// Shortest round-tripping decimal form; CSV values parse back bit-exact.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace mlcam
