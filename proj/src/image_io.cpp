#include "saam/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <memory>

namespace saam {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

bool host_is_little_endian() {
    const std::uint16_t probe = 1;
    return *reinterpret_cast<const std::uint8_t*>(&probe) == 1;
}

}  // namespace

Tensor<float> load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open '" + path + "' for reading");

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw DataError("'" + path + "' is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng init failed for '" + path + "'");
    }

    std::vector<png_byte> storage;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("failed to decode '" + path + "'");
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int color_type = png_get_color_type(png, info);
    int bit_depth = png_get_bit_depth(png, info);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    if (bit_depth == 16 && host_is_little_endian()) png_set_swap(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    storage.resize(rowbytes * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = storage.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor<float> img(Shape{1, 3, i64(height), i64(width)});
    float* out = img.data().data();
    const i64 hw = i64(height) * i64(width);
    if (bit_depth == 16) {
        for (i64 y = 0; y < i64(height); ++y) {
            const auto* row = reinterpret_cast<const std::uint16_t*>(rows[std::size_t(y)]);
            for (i64 x = 0; x < i64(width); ++x)
                for (int c = 0; c < 3; ++c)
                    out[c * hw + y * i64(width) + x] = float(row[x * 3 + c]) / 65535.0f;
        }
    } else {
        for (i64 y = 0; y < i64(height); ++y) {
            const png_byte* row = rows[std::size_t(y)];
            for (i64 x = 0; x < i64(width); ++x)
                for (int c = 0; c < 3; ++c)
                    out[c * hw + y * i64(width) + x] = float(row[x * 3 + c]) / 255.0f;
        }
    }
    return img;
}

void save_png(const Tensor<float>& img, const std::string& path) {
    const Shape s = img.shape();
    if (s.n != 1 || s.c != 3)
        throw ShapeError("save_png: expected (1,3,H,W), got " + s.str());

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed for '" + path + "'");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to write '" + path + "'");
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(s.w), png_uint_32(s.h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const float* data = img.data().data();
    const i64 hw = s.h * s.w;
    std::vector<png_byte> row(std::size_t(s.w) * 3);
    for (i64 y = 0; y < s.h; ++y) {
        for (i64 x = 0; x < s.w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = data[c * hw + y * s.w + x];
                v = std::min(1.0f, std::max(0.0f, v));
                row[std::size_t(x) * 3 + c] = png_byte(std::lround(v * 255.0f));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::string> list_png_files(const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec))
        throw DataError("'" + dir + "' is not a directory");
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir, ec)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) {
            return char(std::tolower(c));
        });
        if (ext == ".png") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace saam
