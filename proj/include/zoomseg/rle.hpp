#pragma once

// Mask wire format: row-major run lengths alternating 0-runs and 1-runs, always starting
// with a (possibly empty) 0-run. Lengths are packed as little-endian uint32 and base64'd.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "zoomseg/core.hpp"

namespace zoomseg::rle {

class RleError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::vector<std::uint32_t> runs(const BinaryMask& m) {
    std::vector<std::uint32_t> out;
    std::uint8_t current = 0;
    std::uint32_t length = 0;
    for (auto v : m) {
        const std::uint8_t b = v ? 1 : 0;
        if (b != current) {
            out.push_back(length);
            current = b;
            length = 0;
        }
        ++length;
    }
    if (length > 0 || out.empty()) out.push_back(length);
    return out;
}

inline BinaryMask from_runs(const std::vector<std::uint32_t>& rs, int height, int width) {
    if (height < 0 || width < 0) throw RleError("negative mask dimensions");
    BinaryMask m(height, width, 0);
    std::size_t pos = 0;
    std::uint8_t value = 0;
    for (auto len : rs) {
        if (len > m.size() - pos) throw RleError("run lengths exceed the mask size");
        for (std::uint32_t k = 0; k < len; ++k) m[pos++] = value;
        value ^= 1;
    }
    if (pos != m.size()) throw RleError("run lengths do not cover the mask");
    return m;
}

inline std::string base64_encode(const std::string& bytes) {
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8) | std::uint8_t(bytes[i + 2]);
        for (int s = 18; s >= 0; s -= 6) out += kAlphabet[(v >> s) & 63];
    }
    if (i < bytes.size()) {
        std::uint32_t v = std::uint8_t(bytes[i]) << 16;
        if (i + 1 < bytes.size()) v |= std::uint8_t(bytes[i + 1]) << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

inline std::string base64_decode(const std::string& text) {
    std::array<int, 256> lut;
    lut.fill(-1);
    const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    for (std::size_t k = 0; k < alphabet.size(); ++k) lut[static_cast<unsigned char>(alphabet[k])] = static_cast<int>(k);
    std::string out;
    std::uint32_t acc = 0;
    int bits = 0;
    std::size_t padding = 0, symbols = 0;
    for (char ch : text) {
        if (ch == '\n' || ch == '\r' || ch == ' ') continue;
        if (ch == '=') {
            ++padding;
            continue;
        }
        if (padding) throw RleError("base64: data after padding");
        const int v = lut[static_cast<unsigned char>(ch)];
        if (v < 0) throw RleError("base64: invalid character");
        ++symbols;
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>((acc >> bits) & 0xff);
        }
    }
    if (padding > 2 || (symbols + padding) % 4 == 1 || (padding && (symbols + padding) % 4 != 0))
        throw RleError("base64: bad length or padding");
    return out;
}

inline std::string pack(const std::vector<std::uint32_t>& rs) {
    std::string bytes;
    bytes.reserve(rs.size() * 4);
    for (auto v : rs)
        for (int k = 0; k < 4; ++k) bytes += static_cast<char>((v >> (8 * k)) & 0xff);
    return bytes;
}

inline std::vector<std::uint32_t> unpack(const std::string& bytes) {
    if (bytes.size() % 4 != 0) throw RleError("run payload is not a multiple of 4 bytes");
    std::vector<std::uint32_t> rs(bytes.size() / 4);
    for (std::size_t i = 0; i < rs.size(); ++i) {
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[4 * i + k])) << (8 * k);
        rs[i] = v;
    }
    return rs;
}

inline std::string encode(const BinaryMask& m) { return base64_encode(pack(runs(m))); }

inline BinaryMask decode(const std::string& payload, int height, int width) { return from_runs(unpack(base64_decode(payload)), height, width); }

inline nlohmann::json to_json(const BinaryMask& m) { return {{"height", m.height()}, {"width", m.width()}, {"rle", encode(m)}}; }

inline BinaryMask from_json(const nlohmann::json& j) {
    return decode(j.at("rle").get<std::string>(), j.at("height").get<int>(), j.at("width").get<int>());
}

}  // namespace zoomseg::rle
