#ifndef REFSR_BINARY_IO_HPP_
#define REFSR_BINARY_IO_HPP_

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "refsr/error.hpp"

namespace refsr::binary {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
inline T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b.data(), sizeof(T));
  }
  return v;
}

template <typename T>
inline void write_le(std::ostream& os, T v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void write_u8(std::ostream& os, std::uint8_t v) { write_le(os, v); }
inline void write_u16(std::ostream& os, std::uint16_t v) { write_le(os, v); }
inline void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
inline void write_f32(std::ostream& os, float v) { write_le(os, v); }

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

template <typename T>
inline T read_le(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw FormatError(std::string(what) + ": unexpected end of file");
  return byteswap_if_big(v);
}

inline std::uint8_t read_u8(std::istream& is, const char* what) { return read_le<std::uint8_t>(is, what); }
inline std::uint16_t read_u16(std::istream& is, const char* what) { return read_le<std::uint16_t>(is, what); }
inline std::uint32_t read_u32(std::istream& is, const char* what) { return read_le<std::uint32_t>(is, what); }
inline float read_f32(std::istream& is, const char* what) { return read_le<float>(is, what); }

inline void expect_magic(std::istream& is, std::string_view magic, const char* what) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (is.gcount() != static_cast<std::streamsize>(magic.size()) || got != magic)
    throw FormatError(std::string(what) + ": bad magic, expected \"" + std::string(magic) + "\"");
}

inline std::string read_string(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n))
    throw FormatError(std::string(what) + ": unexpected end of file");
  return s;
}

}  // namespace refsr::binary

#endif  // REFSR_BINARY_IO_HPP_
