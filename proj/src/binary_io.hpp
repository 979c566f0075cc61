#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace adaptids::detail {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void put_bytes(std::ostream& out, std::span<const std::uint8_t> bytes) {
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void put_string(std::ostream& out, const std::string& s) {
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

/// Reads exactly n bytes; returns false on short read.
inline bool get_raw(std::istream& in, void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in.gcount()) == n;
}

template <typename T>
bool get(std::istream& in, T& value) {
    return get_raw(in, &value, sizeof(T));
}

template <typename T>
void append_le(std::vector<std::uint8_t>& buf, T value) {
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buf.insert(buf.end(), bytes, bytes + sizeof(T));
}

inline std::uint16_t load_be16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

}  // namespace adaptids::detail
