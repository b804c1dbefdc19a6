#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "zoomseg/core.hpp"

namespace zoomseg::io {

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit interleaved pixels as decoded from a file.
struct Bitmap {
    int height = 0;
    int width = 0;
    int channels = 0;  // 1 or 3
    std::vector<std::uint8_t> pixels;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageIoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageIoError("short write to " + path);
}

namespace detail {

struct PngReadCursor {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t offset;
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
    auto* text = static_cast<std::string*>(png_get_error_ptr(png));
    if (text) *text = msg;
    png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

inline void png_read_fn(png_structp png, png_bytep out, png_size_t n) {
    auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
    if (cur->offset + n > cur->size) png_error(png, "truncated PNG stream");
    std::memcpy(out, cur->data + cur->offset, n);
    cur->offset += n;
}

inline void png_write_fn(png_structp png, png_bytep in, png_size_t n) {
    auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    buf->insert(buf->end(), in, in + n);
}

inline void png_flush_fn(png_structp) {}

// Skips whitespace and '#' comments in a PNM header.
inline int pnm_header_int(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    long value = 0;
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        value = value * 10 + (bytes[pos] - '0');
        if (value > 1 << 24) throw ImageIoError("PNM header value too large");
        ++pos;
    }
    if (pos == start) throw ImageIoError("malformed PNM header");
    return static_cast<int>(value);
}

}  // namespace detail

inline bool is_png(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

inline Bitmap decode_png(const std::vector<std::uint8_t>& bytes) {
    if (!is_png(bytes)) throw ImageIoError("not a PNG stream");
    std::string err = "PNG decode failed";
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
    if (!png) throw ImageIoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    detail::PngReadCursor cursor{bytes.data(), bytes.size(), 0};
    Bitmap bmp;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError(err);
    }
    png_set_read_fn(png, &cursor, detail::png_read_fn);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    bmp.width = static_cast<int>(png_get_image_width(png, info));
    bmp.height = static_cast<int>(png_get_image_height(png, info));
    bmp.channels = static_cast<int>(png_get_channels(png, info));
    if (bmp.channels != 1 && bmp.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("unsupported PNG channel layout");
    }
    bmp.pixels.resize(static_cast<std::size_t>(bmp.width) * bmp.height * bmp.channels);
    rows.resize(static_cast<std::size_t>(bmp.height));
    for (int r = 0; r < bmp.height; ++r) rows[r] = bmp.pixels.data() + static_cast<std::size_t>(r) * bmp.width * bmp.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return bmp;
}

inline std::vector<std::uint8_t> encode_png(const Bitmap& bmp) {
    if (bmp.channels != 1 && bmp.channels != 3) throw ImageIoError("encode_png: channels must be 1 or 3");
    std::string err = "PNG encode failed";
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
    if (!png) throw ImageIoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    std::vector<png_bytep> rows(static_cast<std::size_t>(bmp.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIoError(err);
    }
    png_set_write_fn(png, &out, detail::png_write_fn, detail::png_flush_fn);
    png_set_IHDR(png, info, static_cast<png_uint_32>(bmp.width), static_cast<png_uint_32>(bmp.height), 8,
                 bmp.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < bmp.height; ++r) {
        rows[r] = const_cast<png_bytep>(bmp.pixels.data() + static_cast<std::size_t>(r) * bmp.width * bmp.channels);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

/// Binary (P5/P6) and ASCII (P2/P3) PGM/PPM, maxval up to 255.
inline Bitmap decode_pnm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P') throw ImageIoError("not a PNM stream");
    const char kind = static_cast<char>(bytes[1]);
    if (kind != '2' && kind != '3' && kind != '5' && kind != '6') throw ImageIoError("unsupported PNM variant");
    std::size_t pos = 2;
    Bitmap bmp;
    bmp.width = detail::pnm_header_int(bytes, pos);
    bmp.height = detail::pnm_header_int(bytes, pos);
    const int maxval = detail::pnm_header_int(bytes, pos);
    if (bmp.width <= 0 || bmp.height <= 0 || maxval <= 0 || maxval > 255) throw ImageIoError("bad PNM header");
    bmp.channels = (kind == '3' || kind == '6') ? 3 : 1;
    const std::size_t n = static_cast<std::size_t>(bmp.width) * bmp.height * bmp.channels;
    bmp.pixels.resize(n);
    const auto rescale = [maxval](int v) { return static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval); };
    if (kind == '5' || kind == '6') {
        ++pos;  // single whitespace after maxval
        if (bytes.size() < pos + n) throw ImageIoError("truncated PNM data");
        for (std::size_t i = 0; i < n; ++i) bmp.pixels[i] = rescale(bytes[pos + i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) bmp.pixels[i] = rescale(std::min(detail::pnm_header_int(bytes, pos), maxval));
    }
    return bmp;
}

inline std::vector<std::uint8_t> encode_ppm(const Bitmap& bmp) {
    std::ostringstream head;
    head << (bmp.channels == 3 ? "P6" : "P5") << "\n" << bmp.width << " " << bmp.height << "\n255\n";
    const std::string h = head.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    out.insert(out.end(), bmp.pixels.begin(), bmp.pixels.end());
    return out;
}

inline Bitmap decode_image_bytes(const std::vector<std::uint8_t>& bytes) {
    if (is_png(bytes)) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes);
    throw ImageIoError("unrecognized image format");
}

inline RasterImage to_raster(const Bitmap& bmp) {
    RasterImage img(bmp.height, bmp.width);
    for (int r = 0; r < bmp.height; ++r) {
        for (int c = 0; c < bmp.width; ++c) {
            const std::size_t base = (static_cast<std::size_t>(r) * bmp.width + c) * bmp.channels;
            for (int k = 0; k < 3; ++k) {
                const int src = bmp.channels == 3 ? k : 0;
                img.channel(k)(r, c) = static_cast<float>(bmp.pixels[base + src]) / 255.f;
            }
        }
    }
    return img;
}

inline Bitmap to_bitmap(const RasterImage& img) {
    Bitmap bmp{img.height(), img.width(), 3, {}};
    bmp.pixels.resize(static_cast<std::size_t>(bmp.height) * bmp.width * 3);
    for (int r = 0; r < bmp.height; ++r) {
        for (int c = 0; c < bmp.width; ++c) {
            for (int k = 0; k < 3; ++k) {
                const float v = std::clamp(img.channel(k)(r, c), 0.f, 1.f);
                bmp.pixels[(static_cast<std::size_t>(r) * bmp.width + c) * 3 + k] =
                    static_cast<std::uint8_t>(std::lround(v * 255.f));
            }
        }
    }
    return bmp;
}

/// Gray levels above 127 (first channel for colour files) are foreground.
inline BinaryMask to_mask(const Bitmap& bmp) {
    BinaryMask m(bmp.height, bmp.width, 0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = bmp.pixels[i * bmp.channels] > 127 ? 1 : 0;
    return m;
}

inline Bitmap mask_bitmap(const BinaryMask& m) {
    Bitmap bmp{m.height(), m.width(), 1, std::vector<std::uint8_t>(m.size())};
    for (std::size_t i = 0; i < m.size(); ++i) bmp.pixels[i] = m[i] ? 255 : 0;
    return bmp;
}

inline RasterImage decode_image(const std::vector<std::uint8_t>& bytes) { return to_raster(decode_image_bytes(bytes)); }
inline BinaryMask decode_mask(const std::vector<std::uint8_t>& bytes) { return to_mask(decode_image_bytes(bytes)); }

inline RasterImage load_image(const std::string& path) { return decode_image(read_file(path)); }
inline BinaryMask load_mask(const std::string& path) { return decode_mask(read_file(path)); }

inline bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline void save_image(const std::string& path, const RasterImage& img) {
    const auto bmp = to_bitmap(img);
    write_file(path, has_suffix(path, ".ppm") ? encode_ppm(bmp) : encode_png(bmp));
}

inline std::vector<std::uint8_t> encode_mask_png(const BinaryMask& m) { return encode_png(mask_bitmap(m)); }

inline void save_mask(const std::string& path, const BinaryMask& m) { write_file(path, encode_mask_png(m)); }

}  // namespace zoomseg::io
