#include "mactok/patching.hpp"

#include <string>

#include <torch/torch.h>

#include "mactok/error.hpp"

namespace mactok {

namespace {

std::string shape_str(const torch::Tensor& t) {
    std::string s = "[";
    for (int64_t i = 0; i < t.dim(); ++i) s += (i ? ", " : "") + std::to_string(t.size(i));
    return s + "]";
}

}  // namespace

Grid patch_grid(int64_t height, int64_t width, int64_t patch_size) {
    if (patch_size <= 0) throw ShapeError("patch size must be positive");
    if (height % patch_size != 0 || width % patch_size != 0) {
        throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by patch size " + std::to_string(patch_size));
    }
    return {height / patch_size, width / patch_size};
}

torch::Tensor patchify_layout(const torch::Tensor& pixels, int64_t patch_size) {
    if (pixels.dim() != 4 || pixels.size(3) != 3) throw ShapeError("expected [B, H, W, 3], got " + shape_str(pixels));
    const auto grid = patch_grid(pixels.size(1), pixels.size(2), patch_size);
    const auto b = pixels.size(0);
    const auto p = patch_size;
    // [B, rows, P, cols, P, 3] -> [B, rows, cols, P, P, 3]
    return pixels.reshape({b, grid.rows, p, grid.cols, p, 3})
        .permute({0, 1, 3, 2, 4, 5})
        .reshape({b, grid.count(), p * p * 3});
}

PatchSequence patchify(const ImageBatch& images, int64_t patch_size, const PatchProjection& proj) {
    auto flat = patchify_layout(images.pixels, patch_size);
    const auto grid = patch_grid(images.height(), images.width(), patch_size);
    return PatchSequence{proj ? proj(flat) : flat, grid, patch_size};
}

ImageBatch unpatchify(const torch::Tensor& patch_pixels, Grid grid, int64_t patch_size) {
    const auto p = patch_size;
    if (patch_pixels.dim() != 3 || patch_pixels.size(2) != 3 * p * p) {
        throw ShapeError("expected [B, N, 3P²] patches, got " + shape_str(patch_pixels));
    }
    if (grid.rows <= 0 || grid.cols <= 0 || patch_pixels.size(1) != grid.count()) {
        throw ShapeError("token count " + std::to_string(patch_pixels.size(1)) + " does not match grid " +
                         std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
    }
    const auto b = patch_pixels.size(0);
    auto img = patch_pixels.reshape({b, grid.rows, grid.cols, p, p, 3})
                   .permute({0, 1, 3, 2, 4, 5})
                   .reshape({b, grid.rows * p, grid.cols * p, 3});
    return ImageBatch{img};
}

PositionalScheme PositionalScheme::gaussian(Grid grid, int64_t image_dim, int64_t latent_tokens, int64_t latent_dim,
                                            int64_t recon_dim, double std) {
    return {torch::randn({grid.rows, grid.cols, image_dim}) * std, torch::randn({latent_tokens, latent_dim}) * std,
            torch::randn({grid.count(), recon_dim}) * std};
}

PatchSequence add_positions(const PatchSequence& seq, const torch::Tensor& image_pos) {
    if (image_pos.dim() != 3 || image_pos.size(0) != seq.grid.rows || image_pos.size(1) != seq.grid.cols ||
        image_pos.size(2) != seq.embed_dim()) {
        throw ShapeError("image positional table " + shape_str(image_pos) + " does not fit tokens " +
                         shape_str(seq.tokens));
    }
    auto out = seq;
    out.tokens = seq.tokens + image_pos.reshape({seq.grid.count(), seq.embed_dim()});
    return out;
}

torch::Tensor add_positions(const torch::Tensor& tokens, const torch::Tensor& table) {
    const auto d = tokens.dim();
    if (table.dim() != 2 || d < 2 || tokens.size(d - 2) != table.size(0) || tokens.size(d - 1) != table.size(1)) {
        throw ShapeError("positional table " + shape_str(table) + " does not fit tokens " + shape_str(tokens));
    }
    return tokens + table;
}

}  // namespace mactok
