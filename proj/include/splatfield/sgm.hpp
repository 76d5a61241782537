#pragma once

#include "splatfield/scene.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace splatfield {

/// Leaky importance gate. Scores strictly above `tau` pass through; the
/// rest are scaled by `leak`.
struct GateConfig {
    double tau = 0.5;
    double leak = 1e-3;
    /// When set, `prune` also filters the coarse field.
    bool prune_coarse = false;
};

/// Throws ValidationError unless 0 < tau < 1 and 0 < leak < 1.
void check_gate_config(const GateConfig& cfg);

inline double gate(double beta, const GateConfig& cfg) { return beta > cfg.tau ? beta : beta * cfg.leak; }
inline double gate_derivative(double beta, const GateConfig& cfg) { return beta > cfg.tau ? 1.0 : cfg.leak; }

struct GateLoss {
    double value = 0.0;
    double bce = 0.0;
    double regularizer = 0.0;
    std::vector<double> grad;  ///< dL/dbeta_i
};

inline constexpr double kGateLossEps = 1e-7;

/**
 * Mean binary cross-entropy of each score against its own thresholded
 * target, plus the mean score. Targets are constants under differentiation.
 * Throws ValidationError for an empty input.
 */
GateLoss gate_loss(std::span<const double> betas, const GateConfig& cfg = {});

struct PruneReport {
    std::size_t fine_before = 0;
    std::size_t fine_kept = 0;
    std::size_t fine_discarded = 0;
    std::size_t coarse_before = 0;
    std::size_t coarse_kept = 0;

    /// Confusion counts against ground-truth redundancy labels, when known.
    struct Confusion {
        std::size_t redundant_discarded = 0;
        std::size_t redundant_kept = 0;
        std::size_t needed_discarded = 0;
        std::size_t needed_kept = 0;
        double redundant_recall() const {
            const auto total = redundant_discarded + redundant_kept;
            return total == 0 ? 1.0 : static_cast<double>(redundant_discarded) / static_cast<double>(total);
        }
    };
    std::optional<Confusion> confusion;

    std::vector<std::size_t> kept_fine_indices;
};

struct PruneResult {
    SceneBundle bundle;
    PruneReport report;
};

/**
 * Keeps the fine primitives with beta > tau. Surviving primitives are copied
 * unchanged. When `redundant` is given (one nonzero flag per redundant fine primitive), the
 * report includes confusion counts against it.
 */
PruneResult prune(const SceneBundle& bundle, const GateConfig& cfg,
                  std::optional<std::span<const std::uint8_t>> redundant = std::nullopt);

} // namespace splatfield
