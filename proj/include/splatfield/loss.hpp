#pragma once

#include "splatfield/scene.hpp"
#include "splatfield/sgm.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace splatfield {

/// Weights of the training objective. Defaults follow the published setup.
struct LossWeights {
    double lambda_lpips = 0.05;
    double lambda1 = 0.01;  ///< importance gate loss
    double lambda2 = 0.2;   ///< contrastive instance loss
    double lambda3 = 1.0;   ///< semantic feature loss
};

void check_weights(const LossWeights& w);

struct LossValue {
    double value = 0.0;
    FeatureMap grad;  ///< d value / d input, same shape as the input
};

/// Perceptual image distance plugged into the photometric loss.
class PerceptualEvaluator {
public:
    virtual ~PerceptualEvaluator() = default;
    virtual LossValue evaluate(const FeatureMap& rendered, const FeatureMap& target) const = 0;
};

/// Stand-in for a learned perceptual metric: always zero.
class ZeroPerceptual final : public PerceptualEvaluator {
public:
    LossValue evaluate(const FeatureMap& rendered, const FeatureMap& target) const override;
};

/// MSE over all entries plus lambda_lpips * perceptual.
LossValue photometric(const FeatureMap& rendered, const FeatureMap& target, const PerceptualEvaluator& perceptual,
                      const LossWeights& w = {});
LossValue photometric(const FeatureMap& rendered, const FeatureMap& target, const LossWeights& w = {});

/// Mean squared error over all H*W*M entries.
LossValue semantic(const FeatureMap& rendered, const FeatureMap& target);

enum class ContrastiveEstimator { exact, linear };

/// How the cross-instance term is normalized.
enum class InterNormalization {
    mean,     ///< averaged over ordered cross-instance pairs
    raw_sum,  ///< summed without normalization
};

/// Work counters for comparing estimator cost.
struct OpCounter {
    std::uint64_t intra_similarity = 0;  ///< pixel-pair similarity evaluations in the intra term
    std::uint64_t inter_similarity = 0;  ///< similarity evaluations in the inter term
    std::uint64_t feature_reads = 0;
};

struct ContrastiveOptions {
    InterNormalization inter_norm = InterNormalization::mean;
    bool include_inter = true;
    double log_floor = 1e-6;  ///< intra similarity clamp before the log
    double norm_eps = 1e-8;
    OpCounter* ops = nullptr;
};

struct ContrastiveResult {
    double value = 0.0;
    double intra = 0.0;
    double inter = 0.0;
    FeatureMap grad;
};

/// Exact pairwise contrastive loss; O(n^2) in the number of labelled pixels.
ContrastiveResult contrastive_exact(const FeatureMap& inst, const InstanceMaskSet& masks,
                                    const ContrastiveOptions& opts = {});

/// Linear-cost estimator: one shuffled same-instance partner per pixel and
/// instance-mean features for the cross term. Deterministic in `seed`.
ContrastiveResult contrastive_linear(const FeatureMap& inst, const InstanceMaskSet& masks, std::uint64_t seed,
                                     const ContrastiveOptions& opts = {});

/// Per-instance partner permutation used by the linear estimator; exposed
/// for testing. Returns partner[pixel] (SIZE_MAX for unpaired pixels).
std::vector<std::size_t> shuffle_partners(const InstanceMaskSet& masks, std::uint64_t seed);

/// Components of the total objective.
struct LossBreakdown {
    double photometric = 0.0;
    double importance = 0.0;
    double contrastive = 0.0;
    double semantic = 0.0;
};

/// L_P + lambda1 L_I + lambda2 L_C + lambda3 L_S.
double combine(const LossBreakdown& parts, const LossWeights& w);

/// Rendered maps of one supervised view. Null members are skipped.
struct ViewPrediction {
    const FeatureMap* rgb = nullptr;
    const FeatureMap* inst = nullptr;
    const FeatureMap* sem = nullptr;
};

/// Supervision for one view. Null members are skipped.
struct ViewTargets {
    const FeatureMap* rgb = nullptr;
    const InstanceMaskSet* masks = nullptr;
    const FeatureMap* sem = nullptr;
};

struct ViewGrad {
    FeatureMap d_rgb;
    FeatureMap d_inst;
    FeatureMap d_sem;
};

struct TotalLoss {
    double value = 0.0;
    LossBreakdown parts;
    std::vector<ViewGrad> views;
    std::vector<double> d_beta;  ///< direct gradient through the gate loss
};

struct TotalOptions {
    LossWeights weights;
    GateConfig gate;
    ContrastiveEstimator estimator = ContrastiveEstimator::linear;
    ContrastiveOptions contrastive;
    std::uint64_t seed = 0;
    const PerceptualEvaluator* perceptual = nullptr;  ///< null: ZeroPerceptual
};

/**
 * Full objective over one or more views. Per-view photometric, contrastive
 * and semantic terms are averaged across the views that supply them; the
 * gate loss runs over `betas`. View v uses shuffle seed `seed + v`. Views
 * whose masks contain only background carry no contrastive term.
 */
TotalLoss total(std::span<const ViewPrediction> predictions, std::span<const ViewTargets> targets,
                std::span<const double> betas, const TotalOptions& opts);

} // namespace splatfield
