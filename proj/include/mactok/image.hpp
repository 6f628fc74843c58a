#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/types.h>

namespace mactok {

/// 8-bit interleaved RGB image, row-major.
struct RgbImage {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> data;

    RgbImage() = default;
    RgbImage(int64_t w, int64_t h) : width(w), height(h), data(static_cast<size_t>(w * h * 3), 0) {}

    uint8_t& at(int64_t y, int64_t x, int c) { return data[static_cast<size_t>((y * width + x) * 3 + c)]; }
    uint8_t at(int64_t y, int64_t x, int c) const { return data[static_cast<size_t>((y * width + x) * 3 + c)]; }

    bool operator==(const RgbImage&) const = default;
};

/// A batch of normalized images: float tensor [B, H, W, 3] with values in [-1, 1]
/// for real data. Decoder outputs may leave that range; they are clamped on export.
struct ImageBatch {
    torch::Tensor pixels;

    int64_t batch() const { return pixels.size(0); }
    int64_t height() const { return pixels.size(1); }
    int64_t width() const { return pixels.size(2); }
};

/// Wraps a [B, H, W, 3] tensor, validating rank and channel count.
ImageBatch make_batch(torch::Tensor pixels);

/// 2·u/255 − 1 over a uint8 tensor of any shape.
torch::Tensor normalize_u8(const torch::Tensor& u8);

/// Inverse of normalize_u8 with clamping and round-to-nearest.
torch::Tensor denormalize_to_u8(const torch::Tensor& pixels);

/// Stacks equally sized images into a normalized float32 batch.
ImageBatch to_batch(std::span<const RgbImage> images);

/// Converts one [H, W, 3] normalized image back to 8-bit.
RgbImage to_rgb(const torch::Tensor& hw3);

RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

/// Reads PPM (P6) or PNG, sniffing the magic bytes.
RgbImage read_image(const std::filesystem::path& path);

/// Lists *.ppm / *.png files in a directory, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace mactok
