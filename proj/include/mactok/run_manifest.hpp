#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mactok/config.hpp"

namespace mactok {

/// Version string baked in at configure time.
std::string code_version();

/// One entry of a run directory's manifest.json. The file holds a "runs"
/// array; each invocation appends its own entry and never rewrites earlier ones.
class RunManifest {
public:
    RunManifest(std::filesystem::path dir, std::string command, KeyValues config, uint64_t seed);

    /// Creates the directory and appends the entry (start timestamp, config,
    /// seed, dtype, version). Call before writing any other output.
    void begin();
    void note(const std::string& key, const std::string& value);
    void add_output(const std::filesystem::path& file);
    /// Adds the end timestamp, status and output inventory to this run's entry.
    void finish(const std::string& status = "ok");

    const std::filesystem::path& dir() const { return dir_; }

private:
    void write_entry(bool finished, const std::string& status);

    std::filesystem::path dir_;
    std::string command_;
    KeyValues config_;
    uint64_t seed_;
    std::string started_;
    KeyValues notes_;
    std::vector<std::string> outputs_;
    size_t index_ = 0;
};

}  // namespace mactok
