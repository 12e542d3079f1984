#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "surge/image.hpp"

namespace surge {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

Image load_png_file(FILE* f, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("png: allocation failure for " + path);
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<png_byte> data;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("png: failed to decode " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);

    if (depth != 8 && depth != 16 && color != PNG_COLOR_TYPE_PALETTE) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: unsupported bit depth " + std::to_string(depth) + " in " + path);
    }

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // native-endian 16-bit samples
    png_read_update_info(png, info);

    const int out_depth = png_get_bit_depth(png, info);
    const size_t rowbytes = png_get_rowbytes(png, info);
    data.resize(rowbytes * h);
    row_ptrs.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = data.data() + y * rowbytes;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(static_cast<int64_t>(h), static_cast<int64_t>(w), path);
    if (out_depth == 8) {
        for (int64_t y = 0; y < img.h; ++y) {
            const png_byte* row = data.data() + size_t(y) * rowbytes;
            for (int64_t x = 0; x < img.w; ++x)
                for (int64_t c = 0; c < 3; ++c)
                    img.at(y, x, c) = float(row[x * 3 + c]) / 255.0f;
        }
    } else {
        for (int64_t y = 0; y < img.h; ++y) {
            const uint16_t* row = reinterpret_cast<const uint16_t*>(data.data() + size_t(y) * rowbytes);
            for (int64_t x = 0; x < img.w; ++x)
                for (int64_t c = 0; c < 3; ++c)
                    img.at(y, x, c) = float(row[x * 3 + c]) / 65535.0f;
        }
    }
    return img;
}

uint32_t rd_u32(const unsigned char* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
int32_t rd_i32(const unsigned char* p) { return static_cast<int32_t>(rd_u32(p)); }
uint16_t rd_u16(const unsigned char* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

Image load_bmp_file(FILE* f, const std::string& path) {
    std::fseek(f, 0, SEEK_END);
    const long fsize = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    if (fsize < 54) throw DecodeError("bmp: file too small: " + path);
    std::vector<unsigned char> buf(static_cast<size_t>(fsize));
    if (std::fread(buf.data(), 1, buf.size(), f) != buf.size())
        throw DecodeError("bmp: short read: " + path);

    if (buf[0] != 'B' || buf[1] != 'M') throw DecodeError("bmp: bad magic: " + path);
    const uint32_t pixel_offset = rd_u32(&buf[10]);
    const uint32_t header_size = rd_u32(&buf[14]);
    if (header_size < 40) throw FormatError("bmp: unsupported header in " + path);
    const int32_t w = rd_i32(&buf[18]);
    const int32_t h_raw = rd_i32(&buf[22]);
    const uint16_t bpp = rd_u16(&buf[28]);
    const uint32_t compression = rd_u32(&buf[30]);
    if (compression != 0) throw FormatError("bmp: compressed files unsupported: " + path);
    if (bpp != 24 && bpp != 32)
        throw FormatError("bmp: unsupported bit depth " + std::to_string(bpp) + " in " + path);
    if (w <= 0 || h_raw == 0) throw DecodeError("bmp: bad dimensions in " + path);

    const bool bottom_up = h_raw > 0;
    const int64_t h = bottom_up ? h_raw : -int64_t(h_raw);
    const int64_t bytes_pp = bpp / 8;
    const int64_t stride = ((w * bytes_pp + 3) / 4) * 4;
    if (pixel_offset + size_t(stride) * size_t(h) > buf.size())
        throw DecodeError("bmp: pixel data truncated in " + path);

    Image img(h, w, path);
    for (int64_t y = 0; y < h; ++y) {
        const int64_t src_y = bottom_up ? h - 1 - y : y;
        const unsigned char* row = buf.data() + pixel_offset + size_t(src_y * stride);
        for (int64_t x = 0; x < w; ++x) {
            const unsigned char* px = row + x * bytes_pp;  // BGR(A)
            img.at(y, x, 0) = float(px[2]) / 255.0f;
            img.at(y, x, 1) = float(px[1]) / 255.0f;
            img.at(y, x, 2) = float(px[0]) / 255.0f;
        }
    }
    return img;
}

}  // namespace

Image load_image(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DecodeError("cannot open image file: " + path);
    unsigned char magic[8] = {};
    const size_t got = std::fread(magic, 1, sizeof(magic), f.get());
    std::fseek(f.get(), 0, SEEK_SET);
    if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) return load_png_file(f.get(), path);
    if (got >= 2 && magic[0] == 'B' && magic[1] == 'M') return load_bmp_file(f.get(), path);
    throw FormatError("unsupported raster format (expect PNG or BMP): " + path);
}

void save_png(const Image& img, const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw Error("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("png: allocation failure writing " + path);
    }
    std::vector<png_byte> row(static_cast<size_t>(img.w * 3));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("png: failed to write " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t y = 0; y < img.h; ++y) {
        for (int64_t x = 0; x < img.w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                float v = std::min(1.0f, std::max(0.0f, img.at(y, x, c)));
                row[static_cast<size_t>(x * 3 + c)] = png_byte(std::lround(v * 255.0f));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace surge
