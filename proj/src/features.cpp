#include "mactok/features.hpp"

#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <unistd.h>

#include <ATen/CPUGeneratorImpl.h>
#include <openssl/evp.h>
#include <torch/torch.h>

#include "mactok/error.hpp"

namespace mactok {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "raw array files assume a little-endian host");

FeatureBundle FeatureBundle::slice(int64_t i) const {
    return {cls.slice(0, i, i + 1), patches.slice(0, i, i + 1), grid};
}

StubBackbone::StubBackbone(int64_t patch_size, int64_t dim, uint64_t seed)
    : patch_size_(patch_size), dim_(dim), seed_(seed) {
    if (patch_size <= 0 || dim <= 0) throw ConfigError("stub backbone needs positive patch size and dimension");
    auto gen = at::detail::createCPUGenerator(seed);
    const auto in = 3 * patch_size * patch_size;
    weight_ = torch::randn({in, dim}, gen, torch::kFloat32) / std::sqrt(static_cast<double>(in));
}

FeatureBundle StubBackbone::extract(const ImageBatch& images) {
    auto flat = patchify_layout(images.pixels, patch_size_);
    auto patches = torch::matmul(flat, weight_.to(flat.scalar_type()));
    auto cls = patches.mean(1);
    return {cls, patches, patch_grid(images.height(), images.width(), patch_size_)};
}

std::string StubBackbone::id() const {
    return "stub-linear-p" + std::to_string(patch_size_) + "-d" + std::to_string(dim_) + "-s" + std::to_string(seed_);
}

FeatureBundle ExternalBackbone::extract(const ImageBatch&) {
    throw BackboneUnavailableError("backbone '" + name_ + "' is not available in this build; use the stub or a cache");
}

FeatureCache::FeatureCache(fs::path dir) : dir_(std::move(dir)) {}

FeatureCache FeatureCache::from_env(const fs::path& fallback) {
    if (const char* env = std::getenv("FEATURE_CACHE_DIR"); env && *env) return FeatureCache(env);
    return FeatureCache(fallback);
}

std::string FeatureCache::key(const torch::Tensor& image_hw3, const std::string& backbone_id) {
    auto px = image_hw3.detach().to(torch::kFloat32).contiguous();
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, backbone_id.data(), backbone_id.size());
    EVP_DigestUpdate(ctx, "\0", 1);
    for (int64_t i = 0; i < px.dim(); ++i) {
        const int64_t s = px.size(i);
        EVP_DigestUpdate(ctx, &s, sizeof s);
    }
    EVP_DigestUpdate(ctx, px.data_ptr<float>(), static_cast<size_t>(px.numel()) * sizeof(float));
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

fs::path FeatureCache::path_for(const std::string& key) const { return dir_ / (key + ".feat"); }

std::optional<FeatureBundle> FeatureCache::load(const std::string& key) const {
    std::ifstream in(path_for(key), std::ios::binary);
    if (!in) return std::nullopt;
    std::string line, magic;
    int64_t version = 0, df = 0, nf = 0, rows = 0, cols = 0, cls_dim = 0;
    std::string dtype, order;
    std::getline(in, line);
    std::istringstream(line) >> magic >> version;
    if (magic != "mactok-feature-cache" || version != 1) throw IoError("bad feature cache entry: " + key);
    while (std::getline(in, line) && line != "end") {
        std::istringstream ls(line);
        std::string field;
        ls >> field;
        if (field == "dtype") ls >> dtype;
        else if (field == "byte_order") ls >> order;
        else if (field == "cls") ls >> cls_dim;
        else if (field == "patches") ls >> nf >> df;
        else if (field == "grid") ls >> rows >> cols;
    }
    if (dtype != "float32" || order != "little" || cls_dim != df || rows * cols != nf || df <= 0) {
        throw IoError("inconsistent feature cache manifest: " + key);
    }
    auto cls = torch::empty({1, df}, torch::kFloat32);
    auto patches = torch::empty({1, nf, df}, torch::kFloat32);
    in.read(reinterpret_cast<char*>(cls.data_ptr<float>()), static_cast<std::streamsize>(df * sizeof(float)));
    in.read(reinterpret_cast<char*>(patches.data_ptr<float>()),
            static_cast<std::streamsize>(nf * df * sizeof(float)));
    if (!in) throw IoError("truncated feature cache entry: " + key);
    return FeatureBundle{cls, patches, {rows, cols}};
}

void FeatureCache::store(const std::string& key, const FeatureBundle& single) const {
    if (single.cls.size(0) != 1) throw ShapeError("feature cache stores one image per entry");
    fs::create_directories(dir_);
    auto cls = single.cls.detach().to(torch::kFloat32).contiguous();
    auto patches = single.patches.detach().to(torch::kFloat32).contiguous();
    const auto df = cls.size(1);
    const auto nf = patches.size(1);
    const auto final_path = path_for(key);
    auto tmp = final_path;
    tmp += ".tmp" + std::to_string(::getpid()) + "-" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write feature cache entry " + tmp.string());
        out << "mactok-feature-cache 1\n"
            << "dtype float32\nbyte_order little\n"
            << "cls " << df << "\npatches " << nf << ' ' << df << "\ngrid " << single.grid.rows << ' '
            << single.grid.cols << "\nend\n";
        out.write(reinterpret_cast<const char*>(cls.data_ptr<float>()), static_cast<std::streamsize>(df * 4));
        out.write(reinterpret_cast<const char*>(patches.data_ptr<float>()),
                  static_cast<std::streamsize>(nf * df * 4));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    fs::rename(tmp, final_path);
}

CachedProvider::CachedProvider(std::shared_ptr<FeatureProvider> inner, FeatureCache cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

FeatureBundle CachedProvider::extract(const ImageBatch& images) {
    std::vector<torch::Tensor> cls, patches;
    Grid grid{};
    for (int64_t i = 0; i < images.batch(); ++i) {
        auto img = images.pixels[i];
        const auto k = FeatureCache::key(img, inner_->id());
        auto bundle = cache_.load(k);
        if (bundle) {
            ++hits_;
        } else {
            ++misses_;
            torch::NoGradGuard no_grad;
            bundle = inner_->extract(ImageBatch{img.unsqueeze(0)});
            cache_.store(k, *bundle);
            // Round-trip through float32 so hits and misses agree bit for bit.
            bundle->cls = bundle->cls.detach().to(torch::kFloat32);
            bundle->patches = bundle->patches.detach().to(torch::kFloat32);
        }
        grid = bundle->grid;
        cls.push_back(bundle->cls);
        patches.push_back(bundle->patches);
    }
    return {torch::cat(cls), torch::cat(patches), grid};
}

std::vector<double> resample_scores(std::span<const double> scores, Grid from, Grid to) {
    if (from.rows <= 0 || from.cols <= 0 || to.rows <= 0 || to.cols <= 0) throw ShapeError("invalid grid");
    if (static_cast<int64_t>(scores.size()) != from.count()) throw ShapeError("score count does not match grid");
    std::vector<double> out(static_cast<size_t>(to.count()));
    for (int64_t r = 0; r < to.rows; ++r) {
        const auto sr = r * from.rows / to.rows;
        for (int64_t c = 0; c < to.cols; ++c) {
            const auto sc = c * from.cols / to.cols;
            out[static_cast<size_t>(r * to.cols + c)] = scores[static_cast<size_t>(sr * from.cols + sc)];
        }
    }
    return out;
}

torch::Tensor resample_patch_grid(const torch::Tensor& patches, Grid from, Grid to) {
    if (from == to) return patches;
    if (patches.size(1) != from.count()) throw ShapeError("patch count does not match grid");
    std::vector<int64_t> index(static_cast<size_t>(to.count()));
    for (int64_t r = 0; r < to.rows; ++r) {
        for (int64_t c = 0; c < to.cols; ++c) {
            index[static_cast<size_t>(r * to.cols + c)] = (r * from.rows / to.rows) * from.cols + c * from.cols / to.cols;
        }
    }
    return patches.index_select(1, torch::tensor(index, torch::kLong));
}

}  // namespace mactok
