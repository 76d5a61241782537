#pragma once

#include "splatfield/scene.hpp"
#include "splatfield/sgm.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace splatfield {

/// How the importance score scales opacity: alpha * beta, or alpha * gate(beta).
enum class GateMode { identity, leaky };

struct RenderOptions {
    GateMode gate_mode = GateMode::identity;
    GateConfig gate;
    double max_alpha = 0.99;          ///< per-sample opacity clamp
    double min_alpha = 1.0 / 255.0;   ///< samples below this are skipped
    double cov_floor = 0.3;           ///< added to the screen covariance diagonal, pixel^2
    double near = 0.01;
    double cutoff_sigma = 3.0;        ///< footprint support in Mahalanobis units
    std::uint32_t tile = 16;
    bool deterministic = true;        ///< single-threaded, fixed evaluation order
    unsigned threads = 0;             ///< 0: SPLATFIELD_THREADS or hardware concurrency
};

/// Worker count actually used for `opts`.
unsigned resolve_threads(const RenderOptions& opts);

/// Screen-space splat. Pixel (row r, col c) is sampled at (c + 0.5, r + 0.5).
struct ProjectedGaussian {
    std::array<double, 2> center2d{};
    std::array<double, 3> cov2d{};   ///< (xx, xy, yy), floor included
    std::array<double, 3> conic{};   ///< inverse of cov2d, same packing
    std::array<double, 4> bbox{};    ///< x_min, x_max, y_min, y_max of the support ellipse
    double depth = 0.0;
    std::array<double, 3> rgb{};
    std::array<bool, 3> rgb_clamped{};
    double alpha_eff = 0.0;
    std::size_t source_index = 0;
};

struct ProjectionStats {
    std::size_t input = 0;
    std::size_t culled_near = 0;
    std::size_t culled_degenerate = 0;
};

struct Projection {
    std::vector<ProjectedGaussian> splats;
    ProjectionStats stats;
};

/// World covariance R(rot) diag(scale)^2 R(rot)^T, row-major 3x3.
std::array<double, 9> world_covariance(const GaussianPrimitive& g);

/// Projects primitives into `cam`; primitives behind the near plane are dropped.
Projection project(std::span<const GaussianPrimitive> prims, const Camera& cam, std::uint32_t sh_degree,
                   const RenderOptions& opts);

/// Row-major (splat, channel) values carried by each projected splat.
struct Payload {
    std::size_t channels = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t i) const { return {values.data() + i * channels, channels}; }
};

struct CompositeOutput {
    std::vector<double> channels;       ///< H * W * C
    std::vector<double> transmittance;  ///< final T per pixel
    std::vector<double> contrib;        ///< summed blend weight per splat
};

/// Tiled front-to-back compositing. Splats are sorted by (depth, source_index).
CompositeOutput composite(std::span<const ProjectedGaussian> splats, const Payload& payload, std::uint32_t width,
                          std::uint32_t height, const RenderOptions& opts);

/// Per-pixel brute-force compositor without tiling; test oracle.
CompositeOutput composite_reference(std::span<const ProjectedGaussian> splats, const Payload& payload,
                                    std::uint32_t width, std::uint32_t height, const RenderOptions& opts);

struct CompositeGrad {
    std::vector<double> payload;    ///< n * C
    std::vector<double> alpha_eff;  ///< n
    std::vector<double> center2d;   ///< n * 2
    std::vector<double> conic;      ///< n * 3, (xx, xy, yy) with xy counted once
};

/// Gradients of the composite w.r.t. splat attributes. `d_channels` is
/// H * W * C; `d_acc` is H * W or empty.
CompositeGrad composite_backward(std::span<const ProjectedGaussian> splats, const Payload& payload,
                                 std::uint32_t width, std::uint32_t height, const RenderOptions& opts,
                                 std::span<const double> d_channels, std::span<const double> d_acc);

struct RenderRequest {
    bool rgb = true;
    bool inst = true;
    bool sem = true;
};

struct RenderOutput {
    FeatureMap rgb;   ///< C = 3, fine field
    FeatureMap inst;  ///< C = N, fine field
    FeatureMap sem;   ///< C = M, coarse field
    FeatureMap acc;   ///< C = 1, 1 - transmittance of the fine field
    std::vector<double> contrib_fine;    ///< per bundle.fine index
    std::vector<double> contrib_coarse;  ///< per bundle.coarse index
    ProjectionStats fine_stats;
    ProjectionStats coarse_stats;
};

/// Everything the backward pass needs from a forward render.
struct RenderTape {
    bool recorded = false;
    Camera camera;
    RenderOptions options;
    RenderRequest request;
    std::uint32_t sh_degree = 0;
    std::size_t fine_count = 0;
    std::size_t coarse_count = 0;
    Projection fine;
    Projection coarse;
};

struct RenderResult {
    RenderOutput output;
    RenderTape tape;
};

/// RGB and instance maps composite the fine field; the semantic map
/// composites the coarse field.
RenderResult render(const SceneBundle& bundle, const Camera& cam, const RenderOptions& opts,
                    RenderRequest request = {});

/// Upstream gradients. Empty maps are treated as zero.
struct RenderUpstream {
    FeatureMap d_rgb;
    FeatureMap d_inst;
    FeatureMap d_sem;
    FeatureMap d_acc;
};

struct PrimitiveGrad {
    std::array<double, 3> mu{};
    double alpha = 0.0;
    std::array<double, 4> rot{};
    std::array<double, 3> scale{};
    std::vector<double> sh;
    double beta = 0.0;
    std::vector<double> f_inst;
    std::vector<double> f_sem;
};

struct BundleGrad {
    std::vector<PrimitiveGrad> fine;
    std::vector<PrimitiveGrad> coarse;
};

/// Analytic gradients of the rendered maps w.r.t. every primitive parameter.
/// Throws NumericError when the tape is missing or does not match `bundle`.
BundleGrad render_backward(const SceneBundle& bundle, const RenderTape& tape, const RenderUpstream& upstream);

} // namespace splatfield
