#pragma once

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace splatfield::cli {

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Record of one CLI invocation.
class RunManifest {
public:
    explicit RunManifest(std::string subcommand);

    void set_flags(nlohmann::json flags) { flags_ = std::move(flags); }
    void add_input(const std::filesystem::path& path) { inputs_.push_back(path); }
    void add_output(const std::filesystem::path& path) { outputs_.push_back(path); }
    const std::vector<std::filesystem::path>& outputs() const { return outputs_; }

    /// Digests are taken at call time, so call after every output is written.
    nlohmann::json to_json() const;

    /// `explicit_path` wins; otherwise "<first output>.manifest.json", or
    /// "splatfield_<subcommand>.manifest.json" in the working directory.
    std::filesystem::path default_path(const std::optional<std::filesystem::path>& explicit_path) const;
    void write(const std::filesystem::path& path) const;

private:
    std::string subcommand_;
    nlohmann::json flags_ = nlohmann::json::object();
    std::vector<std::filesystem::path> inputs_;
    std::vector<std::filesystem::path> outputs_;
    std::chrono::steady_clock::time_point start_;
};

} // namespace splatfield::cli
