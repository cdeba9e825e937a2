#pragma once

// Grayscale PNG (8/16-bit, via libpng) and raw float map I/O.
//
// Raw float format: two little-endian uint32 (width, height) followed by
// width*height little-endian float32 values, row-major.

#include <png.h>

#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "posekit/core.hpp"
#include "posekit/raster.hpp"

namespace posekit {

struct GrayImage16 {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> values;
};

struct GrayImage8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> values;
};

namespace image_detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

/// Writes `path` via a temporary file that is renamed on success.
template <typename Writer>
void atomic_write(const std::filesystem::path& path, Writer&& writer) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    try {
        writer(tmp);
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw;
    }
    std::filesystem::rename(tmp, path);
}

inline void write_png_gray(const std::filesystem::path& path, int width, int height, int bit_depth,
                           const unsigned char* rows, std::size_t row_bytes) {
    atomic_write(path, [&](const std::filesystem::path& tmp) {
        FilePtr fp(std::fopen(tmp.string().c_str(), "wb"));
        if (!fp) throw Error("cannot write PNG '" + path.string() + "'");
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw Error("libpng initialization failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw Error("libpng failed writing '" + path.string() + "'");
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                     bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        if (bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
        for (int y = 0; y < height; ++y)
            png_write_row(png, const_cast<png_bytep>(rows + static_cast<std::size_t>(y) * row_bytes));
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
        if (std::fflush(fp.get()) != 0) throw Error("write failed for '" + path.string() + "'");
    });
}

/// Reads a grayscale PNG as 16-bit samples (8-bit input is returned unscaled).
inline GrayImage16 read_png_gray(const std::filesystem::path& path, int& bit_depth_out) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open PNG '" + path.string() + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng initialization failed");
    }
    GrayImage16 img;
    std::vector<unsigned char> row;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("'" + path.string() + "' is not a readable PNG");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("'" + path.string() + "' is not an 8/16-bit grayscale PNG");
    }
    if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    row.resize(row_bytes);
    img.values.resize(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < img.width; ++x) {
            std::uint16_t v;
            if (depth == 16)
                std::memcpy(&v, row.data() + 2 * x, 2);
            else
                v = row[static_cast<std::size_t>(x)];
            img.values[static_cast<std::size_t>(y) * img.width + x] = v;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    bit_depth_out = depth;
    return img;
}

}  // namespace image_detail

inline void write_png16(const std::filesystem::path& path, const GrayImage16& img) {
    image_detail::write_png_gray(path, img.width, img.height, 16,
                                 reinterpret_cast<const unsigned char*>(img.values.data()),
                                 static_cast<std::size_t>(img.width) * 2);
}

inline void write_png8(const std::filesystem::path& path, const GrayImage8& img) {
    image_detail::write_png_gray(path, img.width, img.height, 8, img.values.data(),
                                 static_cast<std::size_t>(img.width));
}

inline GrayImage16 read_png16(const std::filesystem::path& path) {
    int depth = 0;
    auto img = image_detail::read_png_gray(path, depth);
    if (depth != 16) throw ParseError("'" + path.string() + "' is not a 16-bit PNG");
    return img;
}

inline GrayImage8 read_png8(const std::filesystem::path& path) {
    int depth = 0;
    auto img16 = image_detail::read_png_gray(path, depth);
    if (depth != 8) throw ParseError("'" + path.string() + "' is not an 8-bit PNG");
    GrayImage8 img{img16.width, img16.height, {}};
    img.values.assign(img16.values.begin(), img16.values.end());
    return img;
}

/// BOP depth image convention: stored value = depth_mm / depth_scale.
inline constexpr double kDefaultDepthScale = 0.1;

inline GrayImage16 depth_to_png16(const DepthMap& depth, double depth_scale = kDefaultDepthScale) {
    if (!(depth_scale > 0.0)) throw PreconditionError("depth scale must be > 0");
    GrayImage16 img{depth.width, depth.height, {}};
    img.values.resize(depth.values.size());
    for (std::size_t i = 0; i < depth.values.size(); ++i) {
        const double v = std::round(static_cast<double>(depth.values[i]) / depth_scale);
        if (v > 65535.0)
            throw PreconditionError("depth " + std::to_string(depth.values[i]) +
                                    " mm overflows 16 bits at depth scale " +
                                    std::to_string(depth_scale));
        img.values[i] = static_cast<std::uint16_t>(v);
    }
    return img;
}

inline DepthMap png16_to_depth(const GrayImage16& img, double depth_scale = kDefaultDepthScale) {
    DepthMap d(img.width, img.height);
    for (std::size_t i = 0; i < img.values.size(); ++i)
        d.values[i] = static_cast<float>(img.values[i] * depth_scale);
    return d;
}

inline void write_depth_png(const std::filesystem::path& path, const DepthMap& depth,
                            double depth_scale = kDefaultDepthScale) {
    write_png16(path, depth_to_png16(depth, depth_scale));
}

inline DepthMap read_depth_png(const std::filesystem::path& path,
                               double depth_scale = kDefaultDepthScale) {
    return png16_to_depth(read_png16(path), depth_scale);
}

/// Raw float map: 8-byte header (uint32 width, uint32 height), then float32 data.
inline void write_raw_float(const std::filesystem::path& path, int width, int height,
                            std::span<const float> values) {
    if (values.size() != static_cast<std::size_t>(width) * height)
        throw PreconditionError("raw float map: value count does not match dimensions");
    image_detail::atomic_write(path, [&](const std::filesystem::path& tmp) {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write '" + path.string() + "'");
        auto put32 = [&](std::uint32_t v) {
            unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 24)};
            out.write(reinterpret_cast<const char*>(b), 4);
        };
        put32(static_cast<std::uint32_t>(width));
        put32(static_cast<std::uint32_t>(height));
        for (float f : values) put32(std::bit_cast<std::uint32_t>(f));
        if (!out) throw Error("write failed for '" + path.string() + "'");
    });
}

struct RawFloatMap {
    int width = 0;
    int height = 0;
    std::vector<float> values;
};

inline RawFloatMap read_raw_float(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    auto get32 = [&](std::uint32_t& v) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
        v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
            (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        return true;
    };
    std::uint32_t w = 0, h = 0;
    if (!get32(w) || !get32(h)) throw ParseError("'" + path.string() + "': truncated header");
    RawFloatMap map{static_cast<int>(w), static_cast<int>(h), {}};
    map.values.resize(static_cast<std::size_t>(w) * h);
    for (auto& f : map.values) {
        std::uint32_t bits;
        if (!get32(bits)) throw ParseError("'" + path.string() + "': truncated data");
        f = std::bit_cast<float>(bits);
    }
    return map;
}

inline void write_depth_raw(const std::filesystem::path& path, const DepthMap& d) {
    write_raw_float(path, d.width, d.height, d.values);
}

inline DepthMap read_depth_raw(const std::filesystem::path& path) {
    auto raw = read_raw_float(path);
    DepthMap d(raw.width, raw.height);
    d.values = std::move(raw.values);
    return d;
}

}  // namespace posekit
