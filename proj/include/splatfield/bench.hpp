#pragma once

#include "splatfield/loss.hpp"
#include "splatfield/raster.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace splatfield {

struct StageTiming {
    std::string stage;
    std::size_t reps = 0;
    double median_ms = 0.0;
    double mean_ms = 0.0;
};

/// Work done by both contrastive estimators on one map of n labelled pixels.
struct EstimatorWork {
    std::size_t n = 0;
    std::uint32_t instances = 0;
    OpCounter exact;
    OpCounter linear;
};

struct BenchSpec {
    std::uint32_t size = 64;  ///< square image side
    std::size_t primitives = 4096;
    std::size_t reps = 100;
    /// Pixel counts for the estimator comparison; each must be a perfect square.
    std::vector<std::size_t> contrastive_sizes{256, 1024, 4096};
    std::uint32_t instances = 4;
    /// Repetitions of the timed contrastive stages (the exact one is quadratic).
    std::size_t contrastive_reps = 5;
    std::uint64_t seed = 0;
    RenderOptions render;
};

struct BenchReport {
    std::vector<StageTiming> stages;
    std::vector<EstimatorWork> work;
};

/// Side x side map split into `instances` horizontal bands, with standard normal features.
void estimator_workload(std::size_t n, std::uint32_t instances, std::uint64_t seed, FeatureMap& features,
                        InstanceMaskSet& masks);

/// Runs both estimators once on the workload and records their counters.
EstimatorWork measure_estimator_work(std::size_t n, std::uint32_t instances, std::uint64_t seed);

/// Times projection, compositing, the full render and its backward pass on a
/// random gradient-check style scene, then both contrastive estimators at
/// each size.
/// Throws ValidationError on zero sizes or a non-square contrastive size.
BenchReport bench(const BenchSpec& spec);

} // namespace splatfield
