#include "facetrace/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "facetrace/errors.hpp"

namespace facetrace {

namespace {

struct FileCloser {
    void operator()(FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

} // namespace

Image load_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp)
        throw DataError("cannot open image file: " + path.string());

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw DataError("not a PNG file: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng init failed reading " + path.string());
    }

    std::vector<png_byte> raw;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG: " + path.string());
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    // Normalize every input variant to 8-bit RGB.
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    size_t stride = png_get_rowbytes(png, info);
    raw.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y)
        rows[y] = raw.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img{int(h), int(w)};
    for (png_uint_32 y = 0; y < h; ++y)
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(int(y), int(x), c) = float(raw[y * stride + x * 3 + c]) / 255.f;
    return img;
}

void save_png(const Image& img, const std::filesystem::path& path) {
    if (img.height <= 0 || img.width <= 0)
        throw ShapeError("save_png: empty image");

    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp)
        throw DataError("cannot write image file: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng init failed writing " + path.string());
    }

    std::vector<png_byte> raw(size_t(img.height) * size_t(img.width) * 3);
    std::vector<png_bytep> rows(size_t(img.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failed: " + path.string());
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);

    for (size_t i = 0; i < raw.size(); ++i) {
        float v = std::clamp(img.px[i], 0.f, 1.f);
        raw[i] = png_byte(std::lround(v * 255.f));
    }
    for (int y = 0; y < img.height; ++y)
        rows[size_t(y)] = raw.data() + size_t(y) * size_t(img.width) * 3;

    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0)
        throw ShapeError("resize_bilinear: target size must be positive");
    if (img.height == out_h && img.width == out_w)
        return img;

    Image out(out_h, out_w);
    double sy = double(img.height) / out_h;
    double sx = double(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = int(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, img.height - 1);
        int yb = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = int(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, img.width - 1);
            int xb = std::clamp(x0 + 1, 0, img.width - 1);
            for (int c = 0; c < 3; ++c) {
                double top = img.at(ya, xa, c) * (1 - wx) + img.at(ya, xb, c) * wx;
                double bot = img.at(yb, xa, c) * (1 - wx) + img.at(yb, xb, c) * wx;
                out.at(y, x, c) = float(top * (1 - wy) + bot * wy);
            }
        }
    }
    return out;
}

} // namespace facetrace
