#include "mactok/tokenizer.hpp"

#include <openssl/evp.h>
#include <torch/torch.h>

#include "mactok/error.hpp"

namespace mactok {

void TokenizerConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
        throw ConfigError("image_size must be a positive multiple of patch_size");
    }
    if (width <= 0 || heads <= 0 || width % heads != 0) throw ConfigError("width must be a positive multiple of heads");
    if (encoder_depth < 0 || decoder_depth < 0) throw ConfigError("depths must be nonnegative");
    if (latent_tokens <= 0 || latent_dim <= 0 || feature_dim <= 0 || mlp_ratio <= 0) {
        throw ConfigError("latent_tokens, latent_dim, feature_dim and mlp_ratio must be positive");
    }
}

TokenizerConfig TokenizerConfig::vit_base() {
    TokenizerConfig c;
    c.image_size = 256;
    c.patch_size = 16;
    c.width = 768;
    c.encoder_depth = 12;
    c.decoder_depth = 12;
    c.heads = 12;
    c.latent_tokens = 128;
    c.latent_dim = 32;
    c.feature_dim = 768;
    return c;
}

torch::Tensor reparameterize(const LatentPosterior& posterior, const torch::Tensor& noise) {
    if (noise.sizes() != posterior.mu.sizes()) throw ShapeError("reparameterization noise shape mismatch");
    auto logvar = posterior.logvar.clamp(kLogvarMin, kLogvarMax);
    return posterior.mu + torch::exp(0.5 * logvar) * noise;
}

AttentionImpl::AttentionImpl(int64_t width, int64_t heads)
    : heads_(heads),
      qkv(register_module("qkv", torch::nn::Linear(width, 3 * width))),
      proj(register_module("proj", torch::nn::Linear(width, width))) {}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x) {
    const auto b = x.size(0), s = x.size(1), d = x.size(2);
    auto parts = qkv(x).reshape({b, s, 3, heads_, d / heads_}).permute({2, 0, 3, 1, 4});
    auto y = torch::scaled_dot_product_attention(parts[0], parts[1], parts[2]);
    return proj(y.transpose(1, 2).reshape({b, s, d}));
}

TransformerBlockImpl::TransformerBlockImpl(int64_t width, int64_t heads, int64_t mlp_ratio)
    : ln1(register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})))),
      ln2(register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})))),
      attn(register_module("attn", Attention(width, heads))),
      fc1(register_module("fc1", torch::nn::Linear(width, mlp_ratio * width))),
      fc2(register_module("fc2", torch::nn::Linear(mlp_ratio * width, width))) {}

torch::Tensor TransformerBlockImpl::forward(torch::Tensor x) {
    x = x + attn(ln1(x));
    return x + fc2(torch::gelu(fc1(ln2(x))));
}

namespace {

torch::Tensor small_gaussian(std::initializer_list<int64_t> shape) { return torch::randn(shape) * 0.02; }

torch::nn::ModuleList make_blocks(int64_t depth, const TokenizerConfig& cfg) {
    torch::nn::ModuleList list;
    for (int64_t i = 0; i < depth; ++i) list->push_back(TransformerBlock(cfg.width, cfg.heads, cfg.mlp_ratio));
    return list;
}

torch::Tensor run_blocks(const torch::nn::ModuleList& blocks, torch::Tensor x) {
    for (const auto& block : *blocks) x = block->as<TransformerBlockImpl>()->forward(x);
    return x;
}

}  // namespace

EncoderImpl::EncoderImpl(const TokenizerConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const auto grid = cfg.grid();
    const auto patch_dim = 3 * cfg.patch_size * cfg.patch_size;
    patch_embed = register_module("patch_embed", torch::nn::Linear(patch_dim, cfg.width));
    image_pos = register_parameter("image_pos", small_gaussian({grid.rows, grid.cols, cfg.width}));
    latent_queries = register_parameter("latent_queries", small_gaussian({cfg.latent_tokens, cfg.width}));
    latent_pos = register_parameter("latent_pos", small_gaussian({cfg.latent_tokens, cfg.width}));
    mask_token_ = register_parameter("mask_token", small_gaussian({cfg.width}));
    blocks = register_module("blocks", make_blocks(cfg.encoder_depth, cfg));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.width})));
    head = register_module("head", torch::nn::Linear(cfg.width, 2 * cfg.latent_dim));
}

PatchSequence EncoderImpl::embed(const ImageBatch& images) {
    if (images.height() != cfg_.image_size || images.width() != cfg_.image_size) {
        throw ShapeError("encoder expects " + std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size) +
                         " images");
    }
    return patchify(images, cfg_.patch_size, [this](const torch::Tensor& p) { return patch_embed(p); });
}

LatentPosterior EncoderImpl::encode(const PatchSequence& seq) {
    if (seq.length() != cfg_.patch_count() || seq.embed_dim() != cfg_.width) {
        throw ShapeError("encoder input must be [B, " + std::to_string(cfg_.patch_count()) + ", " +
                         std::to_string(cfg_.width) + "]");
    }
    const auto b = seq.tokens.size(0);
    auto x = add_positions(seq, image_pos).tokens;
    auto z = add_positions(latent_queries, latent_pos).unsqueeze(0).expand({b, -1, -1});
    auto h = run_blocks(blocks, torch::cat({x, z}, 1));
    auto latent = norm(h.slice(1, cfg_.patch_count()));
    auto stats = head(latent);
    auto mu = stats.slice(-1, 0, cfg_.latent_dim);
    auto logvar = stats.slice(-1, cfg_.latent_dim).clamp(kLogvarMin, kLogvarMax);
    return {mu, logvar};
}

void EncoderImpl::zero_head() {
    torch::NoGradGuard no_grad;
    head->weight.zero_();
    head->bias.zero_();
}

DecoderImpl::DecoderImpl(const TokenizerConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const auto n = cfg.patch_count();
    recon_tokens = register_parameter("recon_tokens", small_gaussian({n, cfg.width}));
    recon_pos = register_parameter("recon_pos", small_gaussian({n, cfg.width}));
    latent_pos = register_parameter("latent_pos", small_gaussian({cfg.latent_tokens, cfg.width}));
    latent_proj = register_module("latent_proj", torch::nn::Linear(cfg.latent_dim, cfg.width));
    blocks = register_module("blocks", make_blocks(cfg.decoder_depth, cfg));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.width})));
    out = register_module("out", torch::nn::Linear(cfg.width, 3 * cfg.patch_size * cfg.patch_size));
}

ImageBatch DecoderImpl::decode(const torch::Tensor& zhat) {
    if (zhat.dim() != 3 || zhat.size(1) != cfg_.latent_tokens || zhat.size(2) != cfg_.latent_dim) {
        throw ShapeError("decoder expects latents [B, " + std::to_string(cfg_.latent_tokens) + ", " +
                         std::to_string(cfg_.latent_dim) + "]");
    }
    const auto b = zhat.size(0);
    const auto n = cfg_.patch_count();
    auto h = add_positions(recon_tokens, recon_pos).unsqueeze(0).expand({b, -1, -1});
    auto z = add_positions(latent_proj(zhat), latent_pos);
    auto y = run_blocks(blocks, torch::cat({h, z}, 1));
    auto patches = out(norm(y.slice(1, 0, n)));
    return unpatchify(patches, cfg_.grid(), cfg_.patch_size);
}

MacTokImpl::MacTokImpl(const TokenizerConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    encoder = register_module("encoder", Encoder(cfg));
    decoder = register_module("decoder", Decoder(cfg));
    heads = register_module("heads", AlignmentHeads(cfg.latent_dim, cfg.feature_dim));
}

ImageBatch MacTokImpl::reconstruct(const ImageBatch& images) {
    auto posterior = encoder->encode(encoder->embed(images));
    return decoder->decode(posterior.mu);
}

std::string parameter_digest(const torch::nn::Module& module) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const auto& item : module.named_parameters(/*recurse=*/true)) {
        auto t = item.value().detach().contiguous();
        EVP_DigestUpdate(ctx, item.key().data(), item.key().size());
        EVP_DigestUpdate(ctx, t.data_ptr(), static_cast<size_t>(t.numel() * t.element_size()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    static constexpr char hex[] = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s.push_back(hex[md[i] >> 4]);
        s.push_back(hex[md[i] & 15]);
    }
    return s;
}

}  // namespace mactok
