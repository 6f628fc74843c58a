#include "mactok/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <json.hpp>
#include <torch/torch.h>

#include "mactok/error.hpp"

namespace mactok {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint files are little-endian");

void save_tensors(const fs::path& dir, const NamedTensors& tensors, const KeyValues& config, int64_t step) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "mactok-checkpoint";
    manifest["version"] = kCheckpointFormatVersion;
    manifest["dtype"] = "float32";
    manifest["byte_order"] = "little";
    manifest["step"] = step;
    manifest["config"] = config;
    manifest["tensors"] = json::array();
    for (size_t i = 0; i < tensors.size(); ++i) {
        const auto& [name, tensor] = tensors[i];
        auto t = tensor.detach().to(torch::kFloat32).contiguous();
        const auto file = fmt::format("{:04d}.bin", i);
        std::ofstream out(dir / file, std::ios::binary);
        if (!out) throw IoError("cannot write " + (dir / file).string());
        out.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * 4));
        if (!out) throw IoError("write failed: " + (dir / file).string());
        manifest["tensors"].push_back({{"name", name}, {"shape", t.sizes().vec()}, {"file", file}});
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

TensorArchive load_tensors(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("missing checkpoint manifest in " + dir.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "mactok-checkpoint" || manifest.value("version", 0) != kCheckpointFormatVersion ||
        manifest.value("dtype", "") != "float32" || manifest.value("byte_order", "") != "little") {
        throw IoError("unsupported checkpoint format in " + dir.string());
    }
    TensorArchive archive;
    archive.step = manifest.value("step", int64_t{0});
    archive.config = manifest.value("config", KeyValues{});
    for (const auto& entry : manifest.at("tensors")) {
        const auto shape = entry.at("shape").get<std::vector<int64_t>>();
        const auto path = dir / entry.at("file").get<std::string>();
        auto t = torch::empty(shape, torch::kFloat32);
        std::ifstream bin(path, std::ios::binary | std::ios::ate);
        if (!bin) throw IoError("missing tensor file " + path.string());
        const auto bytes = t.numel() * 4;
        if (static_cast<int64_t>(bin.tellg()) != bytes) throw IoError("size mismatch in " + path.string());
        bin.seekg(0);
        bin.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(bytes));
        archive.tensors.emplace_back(entry.at("name").get<std::string>(), t);
    }
    return archive;
}

void save_checkpoint(const fs::path& dir, MacTok& model, const TrainConfig& cfg, int64_t step) {
    NamedTensors tensors;
    for (const auto& item : model->named_parameters(true)) tensors.emplace_back(item.key(), item.value());
    for (const auto& item : model->named_buffers(true)) tensors.emplace_back(item.key(), item.value());
    save_tensors(dir, tensors, cfg.to_key_values(), step);
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
    auto archive = load_tensors(dir);
    LoadedCheckpoint ckpt;
    ckpt.config.apply(archive.config);
    ckpt.step = archive.step;
    torch::manual_seed(ckpt.config.seed);
    ckpt.model = MacTok(ckpt.config.model);

    std::map<std::string, torch::Tensor> stored(archive.tensors.begin(), archive.tensors.end());
    torch::NoGradGuard no_grad;
    size_t used = 0;
    auto copy_in = [&](const std::string& name, torch::Tensor& target) {
        auto it = stored.find(name);
        if (it == stored.end()) throw IoError("checkpoint lacks tensor '" + name + "'");
        if (it->second.sizes() != target.sizes()) throw IoError("shape mismatch for tensor '" + name + "'");
        target.copy_(it->second);
        ++used;
    };
    for (auto& item : ckpt.model->named_parameters(true)) copy_in(item.key(), item.value());
    for (auto& item : ckpt.model->named_buffers(true)) copy_in(item.key(), item.value());
    if (used != stored.size()) throw IoError("checkpoint holds tensors the model does not define");
    return ckpt;
}

}  // namespace mactok
