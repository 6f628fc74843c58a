#include "mactok/run_manifest.hpp"

#include <chrono>
#include <fstream>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <json.hpp>

#include "mactok/error.hpp"

#ifndef MACTOK_VERSION
#define MACTOK_VERSION "unknown"
#endif

namespace mactok {

namespace fs = std::filesystem;
using nlohmann::json;

std::string code_version() { return MACTOK_VERSION; }

namespace {

std::string utc_now() {
    const auto now = std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());
    return fmt::format("{:%Y-%m-%dT%H:%M:%S}Z", now);
}

json read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return json{{"runs", json::array()}};
    try {
        auto j = json::parse(in);
        if (!j.contains("runs") || !j["runs"].is_array()) throw IoError("manifest without a runs array: " + path.string());
        return j;
    } catch (const json::exception& e) {
        throw IoError("unreadable run manifest " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp);
        out << j.dump(2) << '\n';
    }
    fs::rename(tmp, path);
}

}  // namespace

RunManifest::RunManifest(fs::path dir, std::string command, KeyValues config, uint64_t seed)
    : dir_(std::move(dir)), command_(std::move(command)), config_(std::move(config)), seed_(seed) {}

void RunManifest::begin() {
    fs::create_directories(dir_);
    started_ = utc_now();
    const auto path = dir_ / "manifest.json";
    auto j = read_manifest(path);
    index_ = j["runs"].size();
    j["runs"].push_back(json::object());
    write_json(path, j);
    write_entry(false, "running");
}

void RunManifest::note(const std::string& key, const std::string& value) {
    notes_[key] = value;
    write_entry(false, "running");
}

void RunManifest::add_output(const fs::path& file) {
    outputs_.push_back(fs::relative(file, dir_).generic_string());
}

void RunManifest::finish(const std::string& status) { write_entry(true, status); }

void RunManifest::write_entry(bool finished, const std::string& status) {
    const auto path = dir_ / "manifest.json";
    auto j = read_manifest(path);
    if (j["runs"].size() <= index_) throw IoError("run manifest was truncated: " + path.string());
    json entry{{"command", command_},  {"code_version", code_version()}, {"seed", seed_},
               {"dtype", "float32"},   {"started", started_},           {"config", config_},
               {"notes", notes_},      {"status", status}};
    if (finished) {
        entry["finished"] = utc_now();
        entry["outputs"] = outputs_;
    }
    j["runs"][index_] = entry;
    write_json(path, j);
}

}  // namespace mactok
