#include "splatfield/loss.hpp"

#include "splatfield/errors.hpp"

#include <fmt/format.h>

namespace splatfield {

namespace {

    bool has_instances(const InstanceMaskSet* masks) {
        if (!masks)
            return false;
        for (auto id : masks->ids)
            if (id != 0)
                return true;
        return false;
    }

    void require_same_shape(const FeatureMap& a, const FeatureMap& b, const char* what) {
        if (!a.same_shape(b))
            throw ValidationError(fmt::format("{}: shape mismatch {}x{}x{} vs {}x{}x{}", what, a.height, a.width,
                                              a.channels, b.height, b.width, b.channels));
        if (a.data.size() != a.pixels() * a.channels || b.data.size() != b.pixels() * b.channels)
            throw ValidationError(fmt::format("{}: data size disagrees with the declared shape", what));
    }

    LossValue mse(const FeatureMap& rendered, const FeatureMap& target) {
        LossValue out;
        out.grad = FeatureMap(rendered.height, rendered.width, rendered.channels);
        const std::size_t n = rendered.data.size();
        if (n == 0)
            throw ValidationError("mean squared error of an empty map");
        const double inv = 1.0 / static_cast<double>(n);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = rendered.data[i] - target.data[i];
            sum += d * d;
            out.grad.data[i] = 2.0 * d * inv;
        }
        out.value = sum * inv;
        return out;
    }

} // namespace

void check_weights(const LossWeights& w) {
    if (!(w.lambda_lpips >= 0.0) || !(w.lambda1 >= 0.0) || !(w.lambda2 >= 0.0) || !(w.lambda3 >= 0.0))
        throw ValidationError("loss weights must be non-negative");
}

LossValue ZeroPerceptual::evaluate(const FeatureMap& rendered, const FeatureMap&) const {
    return {0.0, FeatureMap(rendered.height, rendered.width, rendered.channels)};
}

LossValue photometric(const FeatureMap& rendered, const FeatureMap& target, const PerceptualEvaluator& perceptual,
                      const LossWeights& w) {
    require_same_shape(rendered, target, "photometric");
    check_weights(w);
    LossValue out = mse(rendered, target);
    if (w.lambda_lpips != 0.0) {
        const LossValue p = perceptual.evaluate(rendered, target);
        if (!p.grad.same_shape(rendered))
            throw ValidationError("photometric: perceptual gradient has the wrong shape");
        out.value += w.lambda_lpips * p.value;
        for (std::size_t i = 0; i < out.grad.data.size(); ++i)
            out.grad.data[i] += w.lambda_lpips * p.grad.data[i];
    }
    return out;
}

LossValue photometric(const FeatureMap& rendered, const FeatureMap& target, const LossWeights& w) {
    static const ZeroPerceptual zero;
    return photometric(rendered, target, zero, w);
}

LossValue semantic(const FeatureMap& rendered, const FeatureMap& target) {
    require_same_shape(rendered, target, "semantic");
    return mse(rendered, target);
}

double combine(const LossBreakdown& parts, const LossWeights& w) {
    return parts.photometric + w.lambda1 * parts.importance + w.lambda2 * parts.contrastive +
           w.lambda3 * parts.semantic;
}

TotalLoss total(std::span<const ViewPrediction> predictions, std::span<const ViewTargets> targets,
                std::span<const double> betas, const TotalOptions& opts) {
    if (predictions.size() != targets.size())
        throw ValidationError(fmt::format("total: {} predictions but {} target sets", predictions.size(),
                                          targets.size()));
    check_weights(opts.weights);
    static const ZeroPerceptual zero;
    const PerceptualEvaluator& perceptual = opts.perceptual ? *opts.perceptual : zero;

    TotalLoss out;
    out.views.resize(predictions.size());
    std::size_t n_rgb = 0, n_con = 0, n_sem = 0;
    for (std::size_t v = 0; v < predictions.size(); ++v) {
        const auto& p = predictions[v];
        const auto& t = targets[v];
        n_rgb += (p.rgb && t.rgb) ? 1 : 0;
        n_con += (p.inst && has_instances(t.masks)) ? 1 : 0;
        n_sem += (p.sem && t.sem) ? 1 : 0;
    }

    for (std::size_t v = 0; v < predictions.size(); ++v) {
        const auto& p = predictions[v];
        const auto& t = targets[v];
        ViewGrad& g = out.views[v];
        if (p.rgb && t.rgb) {
            LossValue l = photometric(*p.rgb, *t.rgb, perceptual, opts.weights);
            const double s = 1.0 / static_cast<double>(n_rgb);
            out.parts.photometric += s * l.value;
            for (double& x : l.grad.data)
                x *= s;
            g.d_rgb = std::move(l.grad);
        }
        if (p.inst && has_instances(t.masks)) {
            ContrastiveResult c = opts.estimator == ContrastiveEstimator::exact
                                      ? contrastive_exact(*p.inst, *t.masks, opts.contrastive)
                                      : contrastive_linear(*p.inst, *t.masks, opts.seed + v, opts.contrastive);
            const double s = opts.weights.lambda2 / static_cast<double>(n_con);
            out.parts.contrastive += c.value / static_cast<double>(n_con);
            for (double& x : c.grad.data)
                x *= s;
            g.d_inst = std::move(c.grad);
        }
        if (p.sem && t.sem) {
            LossValue l = semantic(*p.sem, *t.sem);
            const double s = opts.weights.lambda3 / static_cast<double>(n_sem);
            out.parts.semantic += l.value / static_cast<double>(n_sem);
            for (double& x : l.grad.data)
                x *= s;
            g.d_sem = std::move(l.grad);
        }
    }

    if (!betas.empty()) {
        GateLoss gl = gate_loss(betas, opts.gate);
        out.parts.importance = gl.value;
        out.d_beta = std::move(gl.grad);
        for (double& x : out.d_beta)
            x *= opts.weights.lambda1;
    }
    out.value = combine(out.parts, opts.weights);
    return out;
}

} // namespace splatfield
