#pragma once

#include <cstdint>
#include <functional>

#include <torch/types.h>

#include "mactok/image.hpp"

namespace mactok {

/// Patch grid in raster order: token i sits at (i / cols, i % cols).
struct Grid {
    int64_t rows = 0;
    int64_t cols = 0;

    int64_t count() const { return rows * cols; }
    bool operator==(const Grid&) const = default;
};

/// Image tokens [B, N, D] plus the grid they were cut from.
struct PatchSequence {
    torch::Tensor tokens;
    Grid grid;
    int64_t patch_size = 0;

    int64_t length() const { return tokens.size(1); }
    int64_t embed_dim() const { return tokens.size(2); }
};

/// Maps flattened patches [..., 3P²] to embeddings [..., D].
using PatchProjection = std::function<torch::Tensor(const torch::Tensor&)>;

Grid patch_grid(int64_t height, int64_t width, int64_t patch_size);

/// Cuts [B, H, W, 3] pixels into [B, N, 3P²] flattened patches. Within a patch
/// values are ordered (row, column, channel).
torch::Tensor patchify_layout(const torch::Tensor& pixels, int64_t patch_size);

/// Layout step followed by the projection. An empty projection is the identity.
PatchSequence patchify(const ImageBatch& images, int64_t patch_size, const PatchProjection& proj = {});

/// Reassembles [B, N, 3P²] patch pixels into an image batch.
ImageBatch unpatchify(const torch::Tensor& patch_pixels, Grid grid, int64_t patch_size);

/// Learnable positional tables. image_pos is looked up by grid cell, latent_pos
/// and recon_pos by sequence index.
struct PositionalScheme {
    torch::Tensor image_pos;   // [rows, cols, D]
    torch::Tensor latent_pos;  // [L, D]
    torch::Tensor recon_pos;   // [N, D']

    /// Zero-mean Gaussian tables with std 0.02.
    static PositionalScheme gaussian(Grid grid, int64_t image_dim, int64_t latent_tokens, int64_t latent_dim,
                                     int64_t recon_dim, double std = 0.02);
};

/// Adds a [rows, cols, D] table to image tokens.
PatchSequence add_positions(const PatchSequence& seq, const torch::Tensor& image_pos);

/// Adds a [S, D] table to a [B, S, D] (or [S, D]) token tensor; lengths must match exactly.
torch::Tensor add_positions(const torch::Tensor& tokens, const torch::Tensor& table);

}  // namespace mactok
