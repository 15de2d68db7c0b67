#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "citrinet/error.hpp"

// Little-endian primitive encoding shared by the binary file formats.
namespace citrinet::io {

inline void put_u32(std::ostream &os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

inline void put_u64(std::ostream &os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline void put_f64(std::ostream &os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void put_u8(std::ostream &os, std::uint8_t v) { os.put(static_cast<char>(v)); }

inline void put_bytes(std::ostream &os, const std::string &s) {
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream &is, char *dst, std::size_t n) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw InputError("unexpected end of binary stream");
}

inline std::uint32_t get_u32(std::istream &is) {
    unsigned char b[4];
    read_exact(is, reinterpret_cast<char *>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream &is) {
    unsigned char b[8];
    read_exact(is, reinterpret_cast<char *>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream &is) { return std::bit_cast<double>(get_u64(is)); }

inline std::uint8_t get_u8(std::istream &is) {
    char c;
    read_exact(is, &c, 1);
    return static_cast<std::uint8_t>(c);
}

inline std::string get_bytes(std::istream &is, std::size_t n) {
    std::string s(n, '\0');
    if (n)
        read_exact(is, s.data(), n);
    return s;
}

} // namespace citrinet::io
