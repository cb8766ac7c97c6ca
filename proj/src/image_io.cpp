#include "groundkit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>

namespace groundkit::io {

namespace {

static_assert(std::endian::native == std::endian::little, "GKV1 I/O assumes a little-endian host");

constexpr std::array<char, 4> kMagic = {'G', 'K', 'V', '1'};

struct Header {
    DType dtype;
    std::uint32_t depth, height, width;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (!in || magic != kMagic) throw std::runtime_error("not a GKV1 file: " + path.string());
    std::array<std::uint32_t, 4> fields{};
    in.read(reinterpret_cast<char*>(fields.data()), sizeof(fields));
    if (!in) throw std::runtime_error("truncated GKV1 header: " + path.string());
    return {static_cast<DType>(fields[0]), fields[1], fields[2], fields[3]};
}

void write_header(std::ofstream& out, DType dtype, std::uint32_t d, std::uint32_t h, std::uint32_t w) {
    out.write(kMagic.data(), 4);
    const std::array<std::uint32_t, 4> fields = {static_cast<std::uint32_t>(dtype), d, h, w};
    out.write(reinterpret_cast<const char*>(fields.data()), sizeof(fields));
}

template <typename Src>
void read_values(std::ifstream& in, std::vector<float>& dst, const std::filesystem::path& path) {
    std::vector<Src> raw(dst.size());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(Src)));
    if (!in) throw std::runtime_error("truncated GKV1 payload: " + path.string());
    std::transform(raw.begin(), raw.end(), dst.begin(), [](Src v) { return static_cast<float>(v); });
}

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_gray8(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& px) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < height; ++r) {
        png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<size_t>(r) * width));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

Grid3<float> read_gkv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    const Header h = read_header(in, path);
    Grid3<float> vol(static_cast<int>(h.depth), static_cast<int>(h.height), static_cast<int>(h.width));
    switch (h.dtype) {
        case DType::F32: read_values<float>(in, vol.data, path); break;
        case DType::I16: read_values<std::int16_t>(in, vol.data, path); break;
        case DType::U8: read_values<std::uint8_t>(in, vol.data, path); break;
        case DType::F64: read_values<double>(in, vol.data, path); break;
        default: throw std::runtime_error("unknown GKV1 dtype code in " + path.string());
    }
    return vol;
}

void write_gkv(const std::filesystem::path& path, const Grid3<float>& volume) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    write_header(out, DType::F32, volume.depth, volume.height, volume.width);
    out.write(reinterpret_cast<const char*>(volume.data.data()),
              static_cast<std::streamsize>(volume.data.size() * sizeof(float)));
}

void write_gkv(const std::filesystem::path& path, const Grid3<std::uint8_t>& volume) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    write_header(out, DType::U8, volume.depth, volume.height, volume.width);
    out.write(reinterpret_cast<const char*>(volume.data.data()), static_cast<std::streamsize>(volume.data.size()));
}

Grid3<std::uint8_t> read_gkv_mask(const std::filesystem::path& path) {
    const Grid3<float> raw = read_gkv(path);
    Grid3<std::uint8_t> out(raw.depth, raw.height, raw.width);
    for (size_t i = 0; i < raw.data.size(); ++i) out.data[i] = raw.data[i] != 0.0f ? 1 : 0;
    return out;
}

Image read_gkv_image(const std::filesystem::path& path) {
    const Grid3<float> vol = read_gkv(path);
    if (vol.depth != 1) throw std::runtime_error("expected a single-slice GKV1 image: " + path.string());
    return vol.slice(0);
}

void write_gkv_image(const std::filesystem::path& path, const Image& image) {
    Grid3<float> vol(1, image.height, image.width);
    vol.set_slice(0, image);
    write_gkv(path, vol);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("not a readable PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    const int channels = png_get_channels(png, info);
    const int depth = png_get_bit_depth(png, info);
    const size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> buf(rowbytes * static_cast<size_t>(height));
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int r = 0; r < height; ++r) rows[static_cast<size_t>(r)] = buf.data() + static_cast<size_t>(r) * rowbytes;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Image out(height, width);
    const double max_val = depth == 16 ? 65535.0 : 255.0;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            double acc = 0.0;
            for (int ch = 0; ch < channels; ++ch) {
                const size_t idx = static_cast<size_t>(c * channels + ch);
                if (depth == 16) {
                    std::uint16_t v;
                    std::memcpy(&v, rows[static_cast<size_t>(r)] + idx * 2, 2);
                    acc += v;
                } else {
                    acc += rows[static_cast<size_t>(r)][idx];
                }
            }
            out(r, c) = static_cast<float>(acc / channels / max_val);
        }
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    std::vector<std::uint8_t> px(image.size());
    for (size_t i = 0; i < image.size(); ++i) {
        const float v = std::clamp(image.data[i], 0.0f, 1.0f);
        px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    write_gray8(path, image.height, image.width, px);
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
    std::vector<std::uint8_t> px(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) px[i] = mask.data[i] ? 255 : 0;
    write_gray8(path, mask.height, mask.width, px);
}

Mask read_mask_png(const std::filesystem::path& path) {
    const Image img = read_png(path);
    Mask m(img.height, img.width);
    for (size_t i = 0; i < img.size(); ++i) m.data[i] = img.data[i] > 0.0f ? 1 : 0;
    return m;
}

}  // namespace groundkit::io
