#include "manifest.hpp"

#include "splatfield/io.hpp"
#include "splatfield/version.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <memory>

namespace splatfield::cli {

std::string sha256_file(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i)
        hex += fmt::format("{:02x}", md[i]);
    return hex;
}

RunManifest::RunManifest(std::string subcommand)
    : subcommand_(std::move(subcommand)), start_(std::chrono::steady_clock::now()) {}

nlohmann::json RunManifest::to_json() const {
    auto digests = [](const std::vector<std::filesystem::path>& paths) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : paths)
            arr.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
        return arr;
    };
    return {
        {"subcommand", subcommand_},
        {"version", kVersion},
        {"flags", flags_},
        {"inputs", digests(inputs_)},
        {"outputs", digests(outputs_)},
        {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()},
    };
}

std::filesystem::path RunManifest::default_path(const std::optional<std::filesystem::path>& explicit_path) const {
    if (explicit_path)
        return *explicit_path;
    if (!outputs_.empty())
        return std::filesystem::path(outputs_.front().string() + ".manifest.json");
    return std::filesystem::path(fmt::format("splatfield_{}.manifest.json", subcommand_));
}

void RunManifest::write(const std::filesystem::path& path) const {
    const std::string text = to_json().dump(2) + "\n";
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

} // namespace splatfield::cli
