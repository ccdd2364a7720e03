#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "epgn/error.hpp"

// Little-endian scalar helpers for the on-disk formats.
namespace epgn::binio {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

template <class T>
void write(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read(std::istream& in, const std::string& what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorKind::HeaderMismatch, "truncated " + what);
  return value;
}

inline void expect_magic(std::istream& in, const std::string& magic, const std::string& what) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || got != magic) throw Error(ErrorKind::HeaderMismatch, what + ": bad magic, expected " + magic);
}

}  // namespace epgn::binio
