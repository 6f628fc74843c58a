#pragma once

#include <cstdint>
#include <string>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/modules/normalization.h>
#include <torch/nn/pimpl.h>

#include "mactok/alignment.hpp"
#include "mactok/image.hpp"
#include "mactok/patching.hpp"

namespace mactok {

/// Architecture hyperparameters. The defaults are the desk-scale preset; see
/// vit_base() for the full-size configuration.
struct TokenizerConfig {
    int64_t image_size = 32;
    int64_t patch_size = 4;
    int64_t width = 256;
    int64_t encoder_depth = 4;
    int64_t decoder_depth = 4;
    int64_t heads = 4;
    int64_t mlp_ratio = 4;
    int64_t latent_tokens = 64;  // L
    int64_t latent_dim = 32;     // Z
    int64_t feature_dim = 64;    // width of the alignment targets

    Grid grid() const { return {image_size / patch_size, image_size / patch_size}; }
    int64_t patch_count() const { return grid().count(); }
    void validate() const;

    /// ViT-Base encoder and decoder at 256², 128 latent tokens.
    static TokenizerConfig vit_base();
};

inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

/// Diagonal Gaussian posterior over the latent tokens.
struct LatentPosterior {
    torch::Tensor mu;      // [B, L, Z]
    torch::Tensor logvar;  // [B, L, Z], clamped to [kLogvarMin, kLogvarMax]
};

/// ẑ = μ + exp(logvar / 2) ⊙ noise, with logvar clamped first.
torch::Tensor reparameterize(const LatentPosterior& posterior, const torch::Tensor& noise);

class AttentionImpl : public torch::nn::Module {
public:
    AttentionImpl(int64_t width, int64_t heads);
    torch::Tensor forward(const torch::Tensor& x);

private:
    int64_t heads_;
    torch::nn::Linear qkv{nullptr}, proj{nullptr};
};
TORCH_MODULE(Attention);

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
class TransformerBlockImpl : public torch::nn::Module {
public:
    TransformerBlockImpl(int64_t width, int64_t heads, int64_t mlp_ratio);
    torch::Tensor forward(torch::Tensor x);

private:
    torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
    Attention attn{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Encoder over the joint sequence [image tokens; latent queries].
class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(const TokenizerConfig& cfg);

    /// Patch projection only (no positions); masking is applied to this output.
    PatchSequence embed(const ImageBatch& images);

    /// Adds positions, runs the transformer over [x; z] and projects the latent
    /// outputs to (μ, logvar). Image-position outputs are discarded.
    LatentPosterior encode(const PatchSequence& seq);

    /// Zeros the posterior head so that μ = logvar = 0 for every input.
    void zero_head();

    const torch::Tensor& mask_token() const { return mask_token_; }

    torch::nn::Linear patch_embed{nullptr};
    torch::Tensor image_pos;       // [rows, cols, D]
    torch::Tensor latent_queries;  // [L, D]
    torch::Tensor latent_pos;      // [L, D]

private:
    TokenizerConfig cfg_;
    torch::Tensor mask_token_;  // [D]
    torch::nn::ModuleList blocks{nullptr};
    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(Encoder);

/// Decoder over [reconstruction tokens; projected latents].
class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const TokenizerConfig& cfg);

    ImageBatch decode(const torch::Tensor& zhat);

    torch::Tensor recon_tokens;  // [N, D]
    torch::Tensor recon_pos;     // [N, D]
    torch::Tensor latent_pos;    // [L, D]

private:
    TokenizerConfig cfg_;
    torch::nn::Linear latent_proj{nullptr};
    torch::nn::ModuleList blocks{nullptr};
    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear out{nullptr};
};
TORCH_MODULE(Decoder);

/// The full tokenizer: encoder, decoder and the alignment heads.
class MacTokImpl : public torch::nn::Module {
public:
    explicit MacTokImpl(const TokenizerConfig& cfg);

    /// Posterior mean reconstruction (no masking, no sampling).
    ImageBatch reconstruct(const ImageBatch& images);

    const TokenizerConfig& config() const { return cfg_; }

    Encoder encoder{nullptr};
    Decoder decoder{nullptr};
    AlignmentHeads heads{nullptr};

private:
    TokenizerConfig cfg_;
};
TORCH_MODULE(MacTok);

/// Full-dtype SHA-256 over all named parameters of a module, in name order.
std::string parameter_digest(const torch::nn::Module& module);

}  // namespace mactok
