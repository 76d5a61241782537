#pragma once

#include "splatfield/loss.hpp"
#include "splatfield/raster.hpp"
#include "splatfield/scene.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace splatfield {

enum class Param : unsigned {
    beta = 1u << 0,    ///< fine importance, logit space
    alpha = 1u << 1,   ///< fine opacity, logit space
    sh = 1u << 2,      ///< fine colors
    f_inst = 1u << 3,  ///< fine instance features
    f_sem = 1u << 4,   ///< coarse semantic features
};

/// Parses "beta,alpha,sh" style lists. Throws ValidationError on unknown names.
unsigned parse_params(const std::string& list);
std::string format_params(unsigned params);

enum class Optimizer {
    gd,    ///< plain gradient descent
    adam,  ///< per-parameter adaptive steps
};

struct OptimConfig {
    std::uint32_t steps = 500;
    double lr = 0.1;
    unsigned params = static_cast<unsigned>(Param::beta);
    std::uint64_t seed = 0;
    ContrastiveEstimator estimator = ContrastiveEstimator::linear;
    ContrastiveOptions contrastive;
    GateConfig gate;
    LossWeights weights;
    Optimizer optimizer = Optimizer::gd;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clamp_eps = 1e-6;          ///< logit-space parameters stay in [eps, 1 - eps]
    double divergence_factor = 10.0;  ///< abort when the loss exceeds this multiple of its initial value
    RenderOptions render;             ///< gate_mode is forced to leaky during fitting
};

/// Throws ValidationError for a non-positive lr or an empty parameter set.
void check_optim_config(const OptimConfig& cfg);

struct TraceRow {
    std::uint32_t step = 0;
    double total = 0.0;
    LossBreakdown parts;
    std::size_t below_tau = 0;  ///< fine primitives with beta <= tau
};

struct TraceLog {
    std::vector<TraceRow> rows;

    std::string to_csv() const;
    bool operator==(const TraceLog& o) const;
};

struct FitResult {
    SceneBundle bundle;
    TraceLog trace;
};

/**
 * Minimizes the total objective over the selected parameters. Row k of the
 * trace holds the loss before update k; the final row holds the loss of the
 * returned bundle. Throws NumericError if the loss exceeds
 * divergence_factor times its initial value or becomes non-finite.
 */
FitResult fit(const SceneBundle& bundle, std::span<const Camera> cameras, std::span<const ViewTargets> targets,
              const OptimConfig& cfg);

/// Objective and gradients for one bundle state; used by `fit` and gradient checks.
struct Evaluation {
    TotalLoss loss;
    BundleGrad grad;  ///< includes the direct gate-loss term on fine beta
};

Evaluation evaluate_objective(const SceneBundle& bundle, std::span<const Camera> cameras,
                              std::span<const ViewTargets> targets, const OptimConfig& cfg);

// Finite-difference oracle.

struct FdFunction {
    std::function<double(std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>)> gradient;
};

enum class FdMode { central, forward };

struct FdOptions {
    double h = 1e-5;
    FdMode mode = FdMode::central;
    double floor = 1e-8;  ///< denominator floor of the relative error
    /// Marks coordinates at documented non-smooth points; they are reported
    /// but left out of the aggregate.
    std::function<bool(std::size_t, std::span<const double>)> excluded;
    /// Restricts the check to these coordinates when non-empty.
    std::vector<std::size_t> indices;
};

struct FdEntry {
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    bool excluded = false;
};

struct FdReport {
    std::vector<FdEntry> entries;
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t excluded = 0;

    bool passed(double tol) const { return max_rel_error <= tol; }
};

inline double relative_error(double a, double b, double floor = 1e-8) {
    const double d = a > b ? a - b : b - a;
    const double m = std::max({a < 0 ? -a : a, b < 0 ? -b : b, floor});
    return d / m;
}

/// Throws NumericError when the function is non-finite at a perturbed point.
FdReport fdcheck(const FdFunction& f, std::span<const double> point, const FdOptions& opts = {});

} // namespace splatfield
