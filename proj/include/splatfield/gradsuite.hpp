#pragma once

#include "splatfield/optim.hpp"
#include "splatfield/raster.hpp"
#include "splatfield/scene.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace splatfield {

/// Every primitive parameter in a fixed order: per fine primitive
/// mu, alpha, rot, scale, sh, beta, f_inst; then per coarse primitive the
/// same followed by f_sem.
std::vector<double> flatten_parameters(const SceneBundle& bundle);
void unflatten_parameters(SceneBundle& bundle, std::span<const double> values);
/// Same layout as flatten_parameters.
std::vector<double> flatten_gradient(const SceneBundle& bundle, const BundleGrad& grad);

struct GradSuiteOptions {
    std::uint64_t seed = 0;
    double h = 1e-5;
    std::size_t primitives = 20;
    std::uint32_t size = 12;
    double tolerance = 1e-4;
};

struct GradCase {
    std::string name;
    FdReport report;
    bool passed = false;
};

/// Random scene of `primitives` fine and a few coarse primitives (SH degree 3)
/// in front of an obliquely oriented camera; every primitive overlaps the image.
SceneBundle random_scene(std::uint64_t seed, std::size_t primitives, std::uint32_t size, Camera& cam);

/// Render options with every non-smooth cutoff disabled, for gradient checks.
RenderOptions smooth_render_options();

GradCase check_blend(const GradSuiteOptions& opts);
GradCase check_photometric(const GradSuiteOptions& opts);
GradCase check_semantic(const GradSuiteOptions& opts);
GradCase check_contrastive(const GradSuiteOptions& opts, ContrastiveEstimator estimator);
GradCase check_gate_loss(const GradSuiteOptions& opts);
GradCase check_total(const GradSuiteOptions& opts);

/// Every case above.
std::vector<GradCase> run_grad_suite(const GradSuiteOptions& opts);

} // namespace splatfield
