// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "stpyr/errors.hpp"

namespace stpyr::io {

// Little-endian primitives shared by every on-disk format.

template <typename UInt>
void put_uint(std::ostream& os, UInt v) {
    std::array<char, sizeof(UInt)> buf{};
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        buf[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
    }
    os.write(buf.data(), buf.size());
}

template <typename UInt>
UInt get_uint(std::istream& is) {
    std::array<unsigned char, sizeof(UInt)> buf{};
    is.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!is) {
        throw FormatError("unexpected end of stream");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    return static_cast<UInt>(v);
}

inline void put_u8(std::ostream& os, std::uint8_t v) { put_uint(os, v); }
inline void put_u16(std::ostream& os, std::uint16_t v) { put_uint(os, v); }
inline void put_u32(std::ostream& os, std::uint32_t v) { put_uint(os, v); }
inline void put_u64(std::ostream& os, std::uint64_t v) { put_uint(os, v); }
inline void put_f32(std::ostream& os, float v) { put_uint(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put_uint(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint8_t get_u8(std::istream& is) { return get_uint<std::uint8_t>(is); }
inline std::uint16_t get_u16(std::istream& is) { return get_uint<std::uint16_t>(is); }
inline std::uint32_t get_u32(std::istream& is) { return get_uint<std::uint32_t>(is); }
inline std::uint64_t get_u64(std::istream& is) { return get_uint<std::uint64_t>(is); }
inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_uint<std::uint32_t>(is)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_uint<std::uint64_t>(is)); }

inline void put_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), static_cast<std::streamsize>(magic.size())); }

inline void expect_magic(std::istream& is, std::string_view magic) {
    std::string got(magic.size(), '\0');
    is.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (!is || got != magic) {
        throw FormatError("bad magic: expected " + std::string(magic));
    }
}

inline void expect_version(std::istream& is, std::uint32_t expected, std::string_view what) {
    const auto v = get_u32(is);
    if (v != expected) {
        throw FormatError(std::string(what) + ": unsupported version " + std::to_string(v));
    }
}

}  // namespace stpyr::io
