#pragma once

#include <csetjmp>
#include <cstdio>
#include <string>
#include <vector>

#include <png.h>

#include "uncd/errors.hpp"
#include "uncd/image.hpp"

namespace uncd {

namespace detail {

inline const char* png_color_type_name(int ct) {
    switch (ct) {
        case PNG_COLOR_TYPE_GRAY: return "0 (grayscale)";
        case PNG_COLOR_TYPE_RGB: return "2 (RGB)";
        case PNG_COLOR_TYPE_PALETTE: return "3 (palette)";
        case PNG_COLOR_TYPE_GRAY_ALPHA: return "4 (grayscale+alpha)";
        case PNG_COLOR_TYPE_RGB_ALPHA: return "6 (RGBA)";
        default: return "unknown";
    }
}

struct PngReadCtx {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadCtx() {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteCtx {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteCtx() {
        if (png) png_destroy_write_struct(&png, &info);
        if (fp) std::fclose(fp);
    }
};

}  // namespace detail

/// Loads an 8-bit RGB PNG. Any other color type or bit depth is rejected with
/// an error naming the offending color type.
inline Image8 load_png(const std::string& path) {
    detail::PngReadCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "rb");
    if (!ctx.fp) throw IoError("load_png: cannot open " + path);

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw FormatError("load_png: " + path + " is not a PNG file");

    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (ctx.png) ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.png || !ctx.info) throw Error("load_png: libpng allocation failed");

    Image8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(ctx.png))) {
        throw FormatError("load_png: libpng failed while decoding " + path);
    }
    png_init_io(ctx.png, ctx.fp);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
    const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
    const int depth = png_get_bit_depth(ctx.png, ctx.info);
    const int color = png_get_color_type(ctx.png, ctx.info);
    const int interlace = png_get_interlace_type(ctx.png, ctx.info);
    if (color != PNG_COLOR_TYPE_RGB || depth != 8)
        throw FormatError("load_png: " + path + " has color type " + detail::png_color_type_name(color) +
                          " at bit depth " + std::to_string(depth) + "; only 8-bit RGB (color type 2) is supported");
    if (interlace != PNG_INTERLACE_NONE)
        throw FormatError("load_png: " + path + " is interlaced; only non-interlaced PNGs are supported");

    png_read_update_info(ctx.png, ctx.info);
    img = Image8(h, w);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.rgb.data() + std::size_t(y) * w * 3;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);
    return img;
}

/// Writes an 8-bit RGB PNG; the round trip through load_png is bit-exact.
inline void save_png(const Image8& img, const std::string& path) {
    if (img.height == 0 || img.width == 0) throw DimensionError("save_png: empty image");
    detail::PngWriteCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "wb");
    if (!ctx.fp) throw IoError("save_png: cannot open " + path + " for writing");

    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (ctx.png) ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.png || !ctx.info) throw Error("save_png: libpng allocation failed");

    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(ctx.png))) {
        throw IoError("save_png: libpng failed while encoding " + path);
    }
    png_init_io(ctx.png, ctx.fp);
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(img.rgb.data() + y * img.width * 3);
    png_write_image(ctx.png, rows.data());
    png_write_end(ctx.png, nullptr);
}

}  // namespace uncd
