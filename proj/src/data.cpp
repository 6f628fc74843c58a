#include "mactok/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <torch/torch.h>

#include "mactok/error.hpp"

namespace mactok {

namespace fs = std::filesystem;

ImageBatch Dataset::batch(std::span<const int64_t> indices) const {
    std::vector<int64_t> idx(indices.begin(), indices.end());
    return ImageBatch{images.index_select(0, torch::tensor(idx, torch::kLong))};
}

Dataset Dataset::slice(int64_t begin, int64_t end) const {
    Dataset out{images.slice(0, begin, end), {}};
    if (labeled()) out.labels.assign(labels.begin() + begin, labels.begin() + end);
    return out;
}

namespace {

struct Color {
    double r, g, b;
};

Color random_color(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return {u(rng), u(rng), u(rng)};
}

// Coverage test for class `label` at normalized coordinates (u, v) relative
// to the shape centre, scaled so the shape spans roughly [-1, 1].
bool inside(int64_t label, double u, double v, double phase) {
    const double r = std::hypot(u, v);
    switch (label) {
        case 0: return r <= 1.0;
        case 1: return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
        case 2: return v <= 0.8 && v >= -0.9 && std::abs(u) <= (v + 0.9) * 0.55;
        case 3: return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
        case 4: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && std::fmod(v + 3.0 + phase, 0.66) < 0.33;
        case 5: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && std::fmod(u + 3.0 + phase, 0.66) < 0.33;
        case 6: return r <= 1.0 && r >= 0.6;
        case 7: {
            if (std::abs(u) > 1.0 || std::abs(v) > 1.0) return false;
            const auto a = static_cast<int>(std::floor((u + 1.0) * 2.0));
            const auto b = static_cast<int>(std::floor((v + 1.0) * 2.0));
            return ((a + b) & 1) == 0;
        }
        case 8: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && std::fmod(u + v + 6.0 + phase, 0.8) < 0.4;
        default: return std::hypot(u - 0.5, v) <= 0.42 || std::hypot(u + 0.5, v) <= 0.42;
    }
}

}  // namespace

std::vector<RgbImage> render_shapes(int64_t count, int64_t image_size, uint64_t seed, std::vector<int64_t>* labels) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.02);
    std::vector<RgbImage> images;
    images.reserve(static_cast<size_t>(count));
    if (labels) labels->clear();
    const double s = static_cast<double>(image_size);
    for (int64_t n = 0; n < count; ++n) {
        const int64_t label = n % kShapeClasses;
        const Color bg0 = random_color(rng), bg1 = random_color(rng);
        Color fg = random_color(rng);
        // Keep the foreground visibly apart from the background.
        if (std::abs(fg.r - bg0.r) + std::abs(fg.g - bg0.g) + std::abs(fg.b - bg0.b) < 0.6) {
            fg = {1.0 - bg0.r, 1.0 - bg0.g, 1.0 - bg0.b};
        }
        const double scale = s * (0.25 + 0.15 * u01(rng));
        const double cx = s * (0.35 + 0.3 * u01(rng));
        const double cy = s * (0.35 + 0.3 * u01(rng));
        const double angle = (u01(rng) - 0.5) * 0.6;
        const double phase = u01(rng);
        const double ca = std::cos(angle), sa = std::sin(angle);
        RgbImage img(image_size, image_size);
        for (int64_t y = 0; y < image_size; ++y) {
            for (int64_t x = 0; x < image_size; ++x) {
                const double dx = (static_cast<double>(x) + 0.5 - cx) / scale;
                const double dy = (static_cast<double>(y) + 0.5 - cy) / scale;
                const double u = ca * dx + sa * dy;
                const double v = -sa * dx + ca * dy;
                const double t = static_cast<double>(y) / s;
                Color c{bg0.r * (1 - t) + bg1.r * t, bg0.g * (1 - t) + bg1.g * t, bg0.b * (1 - t) + bg1.b * t};
                if (inside(label, u, v, phase)) c = fg;
                const double ch[3] = {c.r, c.g, c.b};
                for (int k = 0; k < 3; ++k) {
                    img.at(y, x, k) = static_cast<uint8_t>(std::lround(std::clamp(ch[k] + noise(rng), 0.0, 1.0) * 255.0));
                }
            }
        }
        images.push_back(std::move(img));
        if (labels) labels->push_back(label);
    }
    return images;
}

Dataset synthetic_shapes(int64_t count, int64_t image_size, uint64_t seed) {
    Dataset d;
    auto imgs = render_shapes(count, image_size, seed, &d.labels);
    d.images = to_batch(imgs).pixels;
    return d;
}

Dataset load_image_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> classes;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory()) classes.push_back(e.path());
    }
    std::sort(classes.begin(), classes.end());
    std::vector<RgbImage> imgs;
    Dataset d;
    if (classes.empty()) {
        for (const auto& f : list_images(dir)) imgs.push_back(read_image(f));
    } else {
        for (size_t c = 0; c < classes.size(); ++c) {
            for (const auto& f : list_images(classes[c])) {
                imgs.push_back(read_image(f));
                d.labels.push_back(static_cast<int64_t>(c));
            }
        }
    }
    if (imgs.empty()) throw IoError("no images found in " + dir.string());
    d.images = to_batch(imgs).pixels;
    return d;
}

void write_dataset(const fs::path& dir, const Dataset& data) {
    fs::create_directories(dir);
    for (int64_t i = 0; i < data.size(); ++i) {
        auto target = dir;
        if (data.labeled()) {
            target /= "class" + std::to_string(data.labels[static_cast<size_t>(i)]);
            fs::create_directories(target);
        }
        char name[32];
        std::snprintf(name, sizeof name, "img%05lld.ppm", static_cast<long long>(i));
        write_ppm(target / name, to_rgb(data.images[i]));
    }
}

Dataset load_dataset(const std::string& source, int64_t count, int64_t image_size, uint64_t seed) {
    if (source == "synthetic:shapes") return synthetic_shapes(count, image_size, seed);
    if (source.rfind("synthetic:", 0) == 0) throw ConfigError("unknown synthetic dataset '" + source + "'");
    auto d = load_image_dir(source);
    if (d.images.size(1) != image_size || d.images.size(2) != image_size) {
        throw ShapeError("dataset images must be " + std::to_string(image_size) + "x" + std::to_string(image_size));
    }
    if (count > 0 && count < d.size()) d = d.slice(0, count);
    return d;
}

BatchSampler::BatchSampler(int64_t dataset_size, int64_t batch_size, uint64_t seed)
    : size_(dataset_size), batch_(batch_size), rng_(seed) {
    if (dataset_size <= 0 || batch_size <= 0) throw ConfigError("dataset and batch size must be positive");
}

std::vector<int64_t> BatchSampler::next() {
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(batch_));
    while (static_cast<int64_t>(out.size()) < batch_) {
        if (cursor_ == 0) {
            order_.resize(static_cast<size_t>(size_));
            std::iota(order_.begin(), order_.end(), 0);
            std::shuffle(order_.begin(), order_.end(), rng_);
        }
        out.push_back(order_[static_cast<size_t>(cursor_)]);
        cursor_ = (cursor_ + 1) % size_;
    }
    return out;
}

}  // namespace mactok
