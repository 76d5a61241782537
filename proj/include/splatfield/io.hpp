#pragma once

#include "splatfield/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace splatfield {

inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr std::uint32_t kMaskVersion = 1;
inline constexpr std::uint32_t kFeatureMapVersion = 1;

// SPSC bundle files. Scalars are written as little-endian float32 in member
// order; fine primitives omit f_sem. A trailing u32-length-prefixed UTF-8
// block carries the provenance tag.
std::vector<std::uint8_t> encode_bundle(const SceneBundle& bundle);
/// Throws FormatError on malformed payloads and ValidationError when the
/// decoded bundle breaks an invariant. Quaternions whose norm is off by
/// more than kQuatTolerance are renormalized; the rest are kept as stored.
SceneBundle decode_bundle(std::span<const std::uint8_t> bytes);
void save_bundle(const SceneBundle& bundle, const std::filesystem::path& path);
SceneBundle load_bundle(const std::filesystem::path& path);

// SPMK mask files: magic, version, H, W, m, then H*W u16 ids.
std::vector<std::uint8_t> encode_masks(const InstanceMaskSet& masks);
/// `strict` enforces the instance-set invariants (every id 1..m present).
/// Label images written by `query` are loaded with strict = false.
InstanceMaskSet decode_masks(std::span<const std::uint8_t> bytes, bool strict = true);
void save_masks(const InstanceMaskSet& masks, const std::filesystem::path& path);
InstanceMaskSet load_masks(const std::filesystem::path& path, bool strict = true);

// SPFM feature maps: magic, version, H, W, C, then float32 data.
std::vector<std::uint8_t> encode_feature_map(const FeatureMap& map);
FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes);
void save_feature_map(const FeatureMap& map, const std::filesystem::path& path);
FeatureMap load_feature_map(const std::filesystem::path& path);

/// Binary P6 with maxval 255. Values are clamped to [0,1] and rounded.
void save_ppm(const FeatureMap& rgb, const std::filesystem::path& path);
/// Accepts P6 with any maxval < 65536; returns values scaled to [0,1].
FeatureMap load_ppm(const std::filesystem::path& path);

/// Camera JSON: {fx, fy, cx, cy, width, height, R: [9 row-major], t: [3]}.
std::string camera_to_json(const Camera& cam);
Camera camera_from_json(const std::string& text);
/// Accepts either a single camera object or an array of them.
std::vector<Camera> load_cameras(const std::filesystem::path& path);
void save_cameras(std::span<const Camera> cams, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace splatfield
