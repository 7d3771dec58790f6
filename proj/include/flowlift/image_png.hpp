#pragma once

// 8-bit PNG ingestion and export via libpng. Grayscale PNGs load as C=1
// fields, color as C=3 (alpha stripped); intensities map to [0,1]. Targets
// including this header must link against libpng.

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <vector>

#include <png.h>

#include "flowlift/error.hpp"
#include "flowlift/field.hpp"

namespace flowlift {

inline Field load_png(const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.string().c_str(), "rb");
    if (!fp) throw IoError("cannot open: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("bad PNG file: " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int color_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("unsupported PNG channel layout: " + path.string());
    }

    std::vector<png_byte> row(png_get_rowbytes(png, info));
    Field out(static_cast<int>(width), static_cast<int>(height), channels);
    for (png_uint_32 v = 0; v < height; ++v) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 u = 0; u < width; ++u)
            for (int c = 0; c < channels; ++c)
                out.at(static_cast<int>(u), static_cast<int>(v), c) =
                    row[u * channels + c] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

/// Writes an 8-bit PNG (grayscale for C=1, RGB for C=3); values are clamped
/// to [0,1] and quantized by rounding.
inline void save_png(const std::filesystem::path& path, const Field& field) {
    if (field.channels != 1 && field.channels != 3)
        throw IoError("save_png: field must have 1 or 3 channels");
    std::FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw IoError("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("PNG write failed: " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(field.width),
                 static_cast<png_uint_32>(field.height), 8,
                 field.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(field.width) * field.channels);
    for (int v = 0; v < field.height; ++v) {
        for (int u = 0; u < field.width; ++u)
            for (int c = 0; c < field.channels; ++c) {
                const double x = std::clamp(field.at(u, v, c), 0.0, 1.0);
                row[static_cast<std::size_t>(u) * field.channels + c] =
                    static_cast<png_byte>(std::lround(x * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

/// Rec.601 luma for RGB inputs; grayscale fields pass through unchanged.
inline Field to_grayscale(const Field& image) {
    if (image.channels == 1) return image;
    if (image.channels != 3) throw ShapeError("to_grayscale: expected 1 or 3 channels");
    Field out(image.width, image.height, 1);
    for (int v = 0; v < image.height; ++v)
        for (int u = 0; u < image.width; ++u)
            out.at(u, v) = 0.299 * image.at(u, v, 0) + 0.587 * image.at(u, v, 1) +
                           0.114 * image.at(u, v, 2);
    return out;
}

}  // namespace flowlift
