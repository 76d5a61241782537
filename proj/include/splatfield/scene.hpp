#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace splatfield {

/// Number of SH coefficients per color channel for degree `k`.
constexpr std::size_t sh_basis_count(std::uint32_t k) { return (k + 1) * (k + 1); }
/// Length of the interleaved RGB SH array for degree `k`.
constexpr std::size_t sh_length(std::uint32_t k) { return 3 * sh_basis_count(k); }

/**
 * One anisotropic Gaussian splat.
 *
 * Values are held in double precision so gradient checks stay stable; the
 * on-disk format stores 32-bit floats. `sh` is laid out basis-major:
 * sh[3 * j + channel]. `rot` is (w, x, y, z).
 */
struct GaussianPrimitive {
    std::array<double, 3> mu{0.0, 0.0, 0.0};
    double alpha = 1.0;
    std::array<double, 4> rot{1.0, 0.0, 0.0, 0.0};
    std::array<double, 3> scale{1.0, 1.0, 1.0};
    std::vector<double> sh;
    double beta = 1.0;
    std::vector<double> f_inst;
    std::optional<std::vector<double>> f_sem;

    bool operator==(const GaussianPrimitive&) const = default;
};

/// Dimensions shared by every primitive in a bundle.
struct SceneDims {
    std::uint32_t views = 2;
    std::uint32_t height = 256;
    std::uint32_t width = 256;
    std::uint32_t downsample = 8;
    std::uint32_t n_dim = 8;
    std::uint32_t m_dim = 512;
    std::uint32_t sh_degree = 3;

    std::size_t pixelwise_fine_count() const {
        return std::size_t{views} * height * width;
    }
    std::size_t pixelwise_coarse_count() const {
        return std::size_t{views} * (height / downsample) * (width / downsample);
    }

    bool operator==(const SceneDims&) const = default;
};

/// Fine instance-aware field plus coarse semantic field.
struct SceneBundle {
    std::vector<GaussianPrimitive> fine;
    std::vector<GaussianPrimitive> coarse;
    SceneDims dims;
    std::string provenance;

    bool operator==(const SceneBundle&) const = default;
};

enum class FieldKind { fine, coarse };

struct Violation {
    FieldKind field = FieldKind::fine;
    std::size_t index = 0;  ///< primitive index; SIZE_MAX for bundle-level issues
    std::string member;     ///< offending member name ("scale", "f_inst", ...)
    std::string message;
};

/// Checks every primitive and bundle-level invariant. Never throws.
std::vector<Violation> validate_bundle(const SceneBundle& bundle);

std::string describe(const Violation& v);

/// Largest accepted deviation of a quaternion norm from 1.
inline constexpr double kQuatTolerance = 1e-6;

/// Scales `q` to unit length; a zero or non-finite quaternion becomes identity.
void normalize_quaternion(std::array<double, 4>& q);

/// Renormalizes every quaternion in place; zero quaternions become identity.
void renormalize_rotations(SceneBundle& bundle);

/// Rounds every stored scalar to the nearest 32-bit float.
void quantize_to_float(SceneBundle& bundle);

/// Pinhole camera with a world-to-camera rigid pose.
struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    std::array<double, 9> R{1, 0, 0, 0, 1, 0, 0, 0, 1};  ///< row-major
    std::array<double, 3> t{0, 0, 0};
    std::uint32_t width = 1;
    std::uint32_t height = 1;

    /// Camera center in world coordinates, -R^T t.
    std::array<double, 3> center() const;

    bool operator==(const Camera&) const = default;
};

/// Empty string when valid, otherwise a description of the first problem.
std::string check_camera(const Camera& cam);

/// Integer instance ids per pixel; 0 is background, 1..m are instances.
struct InstanceMaskSet {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t m = 0;
    std::vector<std::uint16_t> ids;  ///< row-major, height * width

    std::uint16_t at(std::uint32_t r, std::uint32_t c) const { return ids[std::size_t{r} * width + c]; }

    bool operator==(const InstanceMaskSet&) const = default;
};

/// Empty string when valid.
std::string check_masks(const InstanceMaskSet& masks);

/// H x W x C image, channel-fastest row-major.
struct FeatureMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(std::uint32_t h, std::uint32_t w, std::uint32_t c, double fill = 0.0)
        : height(h), width(w), channels(c), data(std::size_t{h} * w * c, fill) {}

    std::size_t pixels() const { return std::size_t{height} * width; }
    std::size_t size() const { return data.size(); }

    double& at(std::uint32_t r, std::uint32_t c, std::uint32_t ch) {
        return data[(std::size_t{r} * width + c) * channels + ch];
    }
    double at(std::uint32_t r, std::uint32_t c, std::uint32_t ch) const {
        return data[(std::size_t{r} * width + c) * channels + ch];
    }
    std::span<double> pixel(std::size_t p) { return {data.data() + p * channels, channels}; }
    std::span<const double> pixel(std::size_t p) const { return {data.data() + p * channels, channels}; }

    bool same_shape(const FeatureMap& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool all_finite() const;

    bool operator==(const FeatureMap&) const = default;
};

} // namespace splatfield
