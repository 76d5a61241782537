#pragma once

#include "splatfield/scene.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace splatfield {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over every entry, capped at 100 dB when MSE < 1e-10.
double psnr(const FeatureMap& a, const FeatureMap& b);

/// Mean SSIM over the valid region of an 11x11 Gaussian window (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1) on the channel-mean grayscale image.
double ssim(const FeatureMap& a, const FeatureMap& b);

struct SegMetrics {
    double miou = 0.0;
    double accuracy = 0.0;
    std::vector<double> iou;             ///< per class; negative when the class is absent from gt
    std::size_t classes_present = 0;
    std::size_t pixels = 0;              ///< pixels that entered the evaluation
};

/// IoU averaged over classes present in `gt`, and pixel accuracy. When
/// `valid` is non-empty only pixels with a nonzero flag count.
SegMetrics seg_metrics(const InstanceMaskSet& pred, const InstanceMaskSet& gt, std::uint32_t class_count,
                       std::span<const std::uint8_t> valid = {});

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const std::int64_t> a, std::span<const std::int64_t> b);

/// Which fields count toward storage. Geometry is mu(3) + alpha(1) + rot(4) +
/// scale(3) + SH 3(k+1)^2; fine primitives add N, coarse primitives add M.
struct StorageLayout {
    std::uint32_t sh_degree = 3;
    bool include_beta = false;       ///< keep the importance score (pre-prune models)
    bool coarse_geometry = true;     ///< coarse primitives store their own geometry
    std::uint32_t baseline_semantic_dim = 0;  ///< D of the pixel-wise semantic baseline; 0 means M
};

struct StorageReport {
    std::size_t fine_count = 0;
    std::size_t coarse_count = 0;
    std::size_t scalars_geometry = 0;
    std::size_t scalars_per_fine = 0;
    std::size_t scalars_per_coarse = 0;
    std::size_t bytes_fine = 0;
    std::size_t bytes_coarse = 0;
    std::size_t bytes_total = 0;

    std::size_t pixelwise_count = 0;        ///< V * H * W
    std::size_t baseline_plain_bytes = 0;   ///< pixel-wise, geometry only
    std::size_t baseline_semantic_bytes = 0;///< pixel-wise, geometry + D
    std::size_t single_field_bytes = 0;     ///< fine_count primitives each carrying geometry + M
};

inline constexpr double kBytesPerMB = 1e6;

StorageReport account(const SceneBundle& bundle, const StorageLayout& layout = {});

/// Same arithmetic from counts alone.
StorageReport account_counts(std::size_t fine_count, std::size_t coarse_count, const SceneDims& dims,
                             const StorageLayout& layout = {});

} // namespace splatfield
