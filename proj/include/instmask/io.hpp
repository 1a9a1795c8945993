#pragma once

// File IO: PNG through libpng, atomic text/binary writes.

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "instmask/error.hpp"
#include "instmask/image.hpp"

namespace instmask::io {

namespace fs = std::filesystem;

// Writes to "<path>.tmp" and renames over path.
inline void write_atomic(const fs::path& path, const std::string& bytes)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const
    {
        if (f)
            std::fclose(f);
    }
};

[[noreturn]] inline void png_error_fn(png_structp png, png_const_charp msg)
{
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    if (err)
        *err = msg;
    png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

inline std::string encode_png(const Image& img)
{
    if (img.channels != 1 && img.channels != 3)
        throw ShapeError("encode_png: only gray and RGB images are supported");
    std::string err;
    std::string bytes;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
    if (!png)
        throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, info ? &info : nullptr);
        throw IoError("PNG encode failed: " + err);
    }
    png_set_write_fn(
        png, &bytes,
        [](png_structp p, png_bytep data, png_size_t len) {
            static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), len);
        },
        [](png_structp) {});
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = img.width * img.channels;
    for (std::size_t y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.data.data() + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return bytes;
}

inline void write_png(const fs::path& path, const Image& img) { write_atomic(path, encode_png(img)); }

// Reads 8-bit gray or RGB PNGs (palette and gray+alpha / RGBA are normalized).
inline Image read_png(const fs::path& path)
{
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.string().c_str(), "rb"));
    if (!f)
        throw IoError("cannot open " + path.string());
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
    if (!png)
        throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    Image img;
    std::vector<png_bytep> rows;
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        throw IoError("PNG decode failed for " + path.string() + ": " + err);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const std::size_t channels = png_get_channels(png, info);
    img = Image(png_get_image_width(png, info), png_get_image_height(png, info), channels);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        rows[y] = img.data.data() + y * img.width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace instmask::io
