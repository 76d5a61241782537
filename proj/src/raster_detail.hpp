#pragma once

#include "splatfield/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>
#include <vector>

namespace splatfield::detail {

/// Per-sample footprint evaluation shared by every compositor path.
struct Sample {
    double g = 0.0;      ///< Gaussian footprint value
    double a_raw = 0.0;  ///< alpha_eff * g before clamping
    double a = 0.0;      ///< opacity used for blending
    double dx = 0.0, dy = 0.0;
};

/// False when the pixel lies outside the support or the sample is below min_alpha.
inline bool evaluate_sample(const ProjectedGaussian& s, double px, double py, const RenderOptions& opts,
                            Sample& out) {
    const double dx = px - s.center2d[0];
    const double dy = py - s.center2d[1];
    const double m2 = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if (!(m2 <= opts.cutoff_sigma * opts.cutoff_sigma))
        return false;
    const double g = std::exp(-0.5 * m2);
    const double a_raw = s.alpha_eff * g;
    if (!(a_raw >= opts.min_alpha) || a_raw <= 0.0)
        return false;
    out.g = g;
    out.a_raw = a_raw;
    out.a = std::min(opts.max_alpha, a_raw);
    out.dx = dx;
    out.dy = dy;
    return true;
}

/// Splat indices sorted by (depth, source_index).
inline std::vector<std::size_t> depth_order(std::span<const ProjectedGaussian> splats) {
    std::vector<std::size_t> order(splats.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (splats[a].depth != splats[b].depth)
            return splats[a].depth < splats[b].depth;
        return splats[a].source_index < splats[b].source_index;
    });
    return order;
}

struct TileGrid {
    std::uint32_t tile = 16;
    std::uint32_t tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<std::size_t>> lists;  ///< depth-ordered splat indices per tile
};

inline TileGrid bin_tiles(std::span<const ProjectedGaussian> splats, std::uint32_t width, std::uint32_t height,
                          std::uint32_t tile) {
    TileGrid grid;
    grid.tile = std::max<std::uint32_t>(tile, 1);
    grid.tiles_x = (width + grid.tile - 1) / grid.tile;
    grid.tiles_y = (height + grid.tile - 1) / grid.tile;
    grid.lists.resize(std::size_t{grid.tiles_x} * grid.tiles_y);
    const double ts = grid.tile;
    for (std::size_t k : depth_order(splats)) {
        const auto& b = splats[k].bbox;
        // Pixel centers sit at integer + 0.5; clamp the covered center range.
        const double x0 = std::max(0.0, std::ceil(b[0] - 0.5));
        const double x1 = std::min(double(width) - 1.0, std::floor(b[1] - 0.5));
        const double y0 = std::max(0.0, std::ceil(b[2] - 0.5));
        const double y1 = std::min(double(height) - 1.0, std::floor(b[3] - 0.5));
        if (!(x0 <= x1) || !(y0 <= y1))
            continue;
        const auto tx0 = static_cast<std::uint32_t>(x0 / ts), tx1 = static_cast<std::uint32_t>(x1 / ts);
        const auto ty0 = static_cast<std::uint32_t>(y0 / ts), ty1 = static_cast<std::uint32_t>(y1 / ts);
        for (std::uint32_t ty = ty0; ty <= ty1; ++ty)
            for (std::uint32_t tx = tx0; tx <= tx1; ++tx)
                grid.lists[std::size_t{ty} * grid.tiles_x + tx].push_back(k);
    }
    return grid;
}

/// Runs f(begin, end, worker) over [0, n) in contiguous chunks, one per worker.
template <class F>
void parallel_for(std::size_t n, unsigned workers, F&& f) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (workers == 1) {
        f(std::size_t{0}, n, 0u);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t b = n * w / workers, e = n * (w + 1) / workers;
        pool.emplace_back([&f, b, e, w] { f(b, e, w); });
    }
    for (auto& t : pool)
        t.join();
}

} // namespace splatfield::detail
