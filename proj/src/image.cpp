#include "mactok/image.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include <png.h>
#include <torch/torch.h>

#include "mactok/error.hpp"

namespace mactok {

namespace fs = std::filesystem;

ImageBatch make_batch(torch::Tensor pixels) {
    if (pixels.dim() != 4 || pixels.size(3) != 3) {
        throw ShapeError("image batch must be [B, H, W, 3], got " + std::to_string(pixels.dim()) + "-d tensor");
    }
    return ImageBatch{std::move(pixels)};
}

torch::Tensor normalize_u8(const torch::Tensor& u8) {
    return u8.to(torch::kFloat32).mul(2.0 / 255.0).sub(1.0);
}

torch::Tensor denormalize_to_u8(const torch::Tensor& pixels) {
    return pixels.to(torch::kFloat64).add(1.0).mul(255.0 / 2.0).round().clamp(0, 255).to(torch::kUInt8);
}

ImageBatch to_batch(std::span<const RgbImage> images) {
    if (images.empty()) throw ShapeError("cannot batch zero images");
    const auto h = images.front().height;
    const auto w = images.front().width;
    auto out = torch::empty({static_cast<int64_t>(images.size()), h, w, 3}, torch::kUInt8);
    auto* dst = out.data_ptr<uint8_t>();
    for (const auto& img : images) {
        if (img.height != h || img.width != w) throw ShapeError("images in a batch must share one size");
        dst = std::copy(img.data.begin(), img.data.end(), dst);
    }
    return ImageBatch{normalize_u8(out)};
}

RgbImage to_rgb(const torch::Tensor& hw3) {
    if (hw3.dim() != 3 || hw3.size(2) != 3) throw ShapeError("expected a [H, W, 3] image tensor");
    auto u8 = denormalize_to_u8(hw3.detach().cpu()).contiguous();
    RgbImage img(hw3.size(1), hw3.size(0));
    std::copy_n(u8.data_ptr<uint8_t>(), img.data.size(), img.data.begin());
    return img;
}

namespace {

// PPM header tokens may be separated by whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

}  // namespace

RgbImage read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    if (next_token(in) != "P6") throw IoError(path.string() + ": not a binary PPM (P6)");
    int64_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoll(next_token(in));
        h = std::stoll(next_token(in));
        maxval = std::stoll(next_token(in));
    } catch (const std::exception&) {
        throw IoError(path.string() + ": malformed PPM header");
    }
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError(path.string() + ": only 8-bit RGB PPM is supported");
    RgbImage img(w, h);
    in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.data.size())) throw IoError(path.string() + ": truncated PPM");
    return img;
}

void write_ppm(const fs::path& path, const RgbImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

RgbImage read_png(const fs::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw IoError(path.string() + ": " + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    RgbImage img(png.width, png.height);
    if (!png_image_finish_read(&png, nullptr, img.data.data(), 0, nullptr)) {
        png_image_free(&png);
        throw IoError(path.string() + ": " + png.message);
    }
    return img;
}

void write_png(const fs::path& path, const RgbImage& image) {
    // Written through libpng's low-level API with a fixed zlib level so that
    // identical pixels always give identical bytes.
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encoding failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t y = 0; y < image.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(image.data.data() + y * image.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

RgbImage read_image(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8] = {};
    in.read(magic, sizeof magic);
    in.close();
    if (magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
    if (static_cast<unsigned char>(magic[0]) == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G') {
        return read_png(path);
    }
    throw IoError(path.string() + ": unsupported image format (expected PPM P6 or PNG)");
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".ppm" || ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace mactok
