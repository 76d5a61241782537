#include "splatfield/sgm.hpp"

#include "splatfield/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace splatfield {

void check_gate_config(const GateConfig& cfg) {
    if (!(cfg.tau > 0.0 && cfg.tau < 1.0))
        throw ValidationError(fmt::format("gate threshold tau = {} must lie in (0,1)", cfg.tau));
    if (!(cfg.leak > 0.0 && cfg.leak < 1.0))
        throw ValidationError(fmt::format("gate leak = {} must lie in (0,1)", cfg.leak));
}

GateLoss gate_loss(std::span<const double> betas, const GateConfig& cfg) {
    if (betas.empty())
        throw ValidationError("gate_loss needs at least one importance score");
    check_gate_config(cfg);

    const double n = static_cast<double>(betas.size());
    GateLoss out;
    out.grad.resize(betas.size());
    for (std::size_t i = 0; i < betas.size(); ++i) {
        const double raw = betas[i];
        const bool target = raw > cfg.tau;
        const double p = std::clamp(raw, kGateLossEps, 1.0 - kGateLossEps);
        // The clamp is flat outside [eps, 1-eps]; no BCE gradient there.
        const bool inside = raw > kGateLossEps && raw < 1.0 - kGateLossEps;
        double dbce = 0.0;
        if (target) {
            out.bce -= std::log(p);
            dbce = inside ? -1.0 / p : 0.0;
        } else {
            out.bce -= std::log(1.0 - p);
            dbce = inside ? 1.0 / (1.0 - p) : 0.0;
        }
        out.regularizer += raw;
        out.grad[i] = (dbce + 1.0) / n;
    }
    out.bce /= n;
    out.regularizer /= n;
    out.value = out.bce + out.regularizer;
    return out;
}

PruneResult prune(const SceneBundle& bundle, const GateConfig& cfg, std::optional<std::span<const std::uint8_t>> redundant) {
    check_gate_config(cfg);
    if (redundant && redundant->size() != bundle.fine.size())
        throw ValidationError(fmt::format("redundancy labels cover {} primitives but the fine field has {}",
                                          redundant->size(), bundle.fine.size()));

    PruneResult res;
    res.bundle.dims = bundle.dims;
    res.bundle.provenance = bundle.provenance;
    PruneReport& rep = res.report;
    rep.fine_before = bundle.fine.size();
    rep.coarse_before = bundle.coarse.size();

    PruneReport::Confusion conf;
    for (std::size_t i = 0; i < bundle.fine.size(); ++i) {
        const bool keep = bundle.fine[i].beta > cfg.tau;
        if (keep) {
            res.bundle.fine.push_back(bundle.fine[i]);
            rep.kept_fine_indices.push_back(i);
        }
        if (redundant) {
            const bool r = (*redundant)[i] != 0;
            if (r && !keep)
                ++conf.redundant_discarded;
            else if (r)
                ++conf.redundant_kept;
            else if (!keep)
                ++conf.needed_discarded;
            else
                ++conf.needed_kept;
        }
    }
    if (cfg.prune_coarse) {
        for (const auto& g : bundle.coarse)
            if (g.beta > cfg.tau)
                res.bundle.coarse.push_back(g);
    } else {
        res.bundle.coarse = bundle.coarse;
    }
    rep.fine_kept = res.bundle.fine.size();
    rep.fine_discarded = rep.fine_before - rep.fine_kept;
    rep.coarse_kept = res.bundle.coarse.size();
    if (redundant)
        rep.confusion = conf;
    return res;
}

} // namespace splatfield
