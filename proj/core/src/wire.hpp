#pragma once

// Little-endian primitive encoding shared by the precision and client
// message serializers. Byte order is explicit so files and messages are
// identical across hosts.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <vector>

namespace fedbens::wire {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void require(std::size_t n) const {
        if (pos + n > bytes.size())
            throw std::runtime_error("message truncated: need " + std::to_string(n) +
                                     " bytes at offset " + std::to_string(pos));
    }
    std::uint8_t u8() {
        require(1);
        return bytes[pos++];
    }
    std::uint16_t u16() {
        require(2);
        std::uint16_t v = static_cast<std::uint16_t>(bytes[pos]) |
                          static_cast<std::uint16_t>(bytes[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        require(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace fedbens::wire
