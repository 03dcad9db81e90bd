#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include "art/image.hpp"

namespace art {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors by longjmp; everything that needs cleanup is created
// before setjmp and released on the normal return path.
struct PngRead {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngRead() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWrite {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWrite() { png_destroy_write_struct(&png, &info); }
};

inline void png_error_to_buffer(png_structp png, png_const_charp msg) {
    auto* buf = static_cast<char*>(png_get_error_ptr(png));
    std::snprintf(buf, 256, "%s", msg);
    png_longjmp(png, 1);
}

inline void png_quiet_warning(png_structp, png_const_charp) {}

} // namespace detail

// Reads 8- or 16-bit gray/RGB PNGs (alpha dropped, palettes expanded) into [0,1].
inline Image read_png(const std::string& path) {
    detail::FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw IoError(path + ": not a PNG file");

    char err[256] = {0};
    detail::PngRead rd;
    rd.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, detail::png_error_to_buffer,
                                    detail::png_quiet_warning);
    if (!rd.png) throw IoError("libpng initialisation failed");
    rd.info = png_create_info_struct(rd.png);
    if (!rd.info) throw IoError("libpng initialisation failed");

    Image img;
    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
    int depth = 8;
    if (setjmp(png_jmpbuf(rd.png))) throw IoError(path + ": " + err);
    png_init_io(rd.png, file.get());
    png_set_sig_bytes(rd.png, 8);
    png_read_info(rd.png, rd.info);
    const png_byte color = png_get_color_type(rd.png, rd.info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(rd.png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(rd.png, rd.info) < 8) png_set_expand_gray_1_2_4_to_8(rd.png);
    if (png_get_valid(rd.png, rd.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(rd.png);
    png_set_strip_alpha(rd.png);
    png_read_update_info(rd.png, rd.info);
    const png_uint_32 w = png_get_image_width(rd.png, rd.info), h = png_get_image_height(rd.png, rd.info);
    const int channels = png_get_channels(rd.png, rd.info);
    depth = png_get_bit_depth(rd.png, rd.info);
    const std::size_t row_bytes = png_get_rowbytes(rd.png, rd.info);
    pixels.resize(row_bytes * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * row_bytes;
    png_read_image(rd.png, rows.data());
    png_read_end(rd.png, nullptr);

    img = Image(channels, h, w);
    const double maxv = depth == 16 ? 65535.0 : 255.0;
    for (png_uint_32 y = 0; y < h; ++y)
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const std::size_t i = static_cast<std::size_t>(x) * channels + c;
                const double v = depth == 16 ? (rows[y][2 * i] << 8 | rows[y][2 * i + 1]) : rows[y][i];
                img.at(c, y, x) = static_cast<float>(v / maxv);
            }
    return img;
}

// Writes an 8-bit gray or RGB PNG; values are clamped to [0,1] and rounded.
inline void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DimensionError("write_png supports 1 or 3 channels, got " + img.shape_text());
    const Index w = img.width, h = img.height, c = img.channels;
    std::vector<png_byte> pixels(static_cast<std::size_t>(w * h * c));
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
            for (Index ch = 0; ch < c; ++ch)
                pixels[static_cast<std::size_t>((y * w + x) * c + ch)] =
                    static_cast<png_byte>(std::lround(std::clamp(img.at(ch, y, x), 0.0f, 1.0f) * 255.0f));
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (Index y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + y * w * c;

    detail::FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot open " + path + " for writing");
    char err[256] = {0};
    detail::PngWrite wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, detail::png_error_to_buffer,
                                     detail::png_quiet_warning);
    if (!wr.png) throw IoError("libpng initialisation failed");
    wr.info = png_create_info_struct(wr.png);
    if (!wr.info) throw IoError("libpng initialisation failed");
    if (setjmp(png_jmpbuf(wr.png))) throw IoError(path + ": " + err);
    png_init_io(wr.png, file.get());
    png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    png_write_image(wr.png, rows.data());
    png_write_end(wr.png, nullptr);
    if (std::fflush(file.get()) != 0) throw IoError("write failed: " + path);
}

} // namespace art
