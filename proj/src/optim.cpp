#include "splatfield/optim.hpp"

#include "splatfield/errors.hpp"

#include <fmt/format.h>

#include <cmath>
#include <sstream>

namespace splatfield {

namespace {

    double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
    double logit(double p) { return std::log(p / (1.0 - p)); }

    bool has(unsigned set, Param p) { return (set & static_cast<unsigned>(p)) != 0; }

    /// One flat parameter vector with matching optimizer state.
    struct Slot {
        std::vector<double> value;
        std::vector<double> m, v;
    };

    class Stepper {
    public:
        explicit Stepper(const OptimConfig& cfg) : cfg_(cfg) {}

        void step(Slot& s, const std::vector<double>& g) {
            if (cfg_.optimizer == Optimizer::gd) {
                for (std::size_t i = 0; i < g.size(); ++i)
                    s.value[i] -= cfg_.lr * g[i];
                return;
            }
            if (s.m.empty()) {
                s.m.assign(g.size(), 0.0);
                s.v.assign(g.size(), 0.0);
            }
            const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
            const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
            for (std::size_t i = 0; i < g.size(); ++i) {
                s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
                s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
                s.value[i] -= cfg_.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg_.adam_eps);
            }
        }
        void next() { ++t_; }

    private:
        const OptimConfig& cfg_;
        double t_ = 1.0;
    };

    void accumulate(PrimitiveGrad& into, const PrimitiveGrad& g) {
        for (int i = 0; i < 3; ++i) {
            into.mu[i] += g.mu[i];
            into.scale[i] += g.scale[i];
        }
        for (int i = 0; i < 4; ++i)
            into.rot[i] += g.rot[i];
        into.alpha += g.alpha;
        into.beta += g.beta;
        auto add = [](std::vector<double>& a, const std::vector<double>& b) {
            if (a.size() < b.size())
                a.resize(b.size(), 0.0);
            for (std::size_t i = 0; i < b.size(); ++i)
                a[i] += b[i];
        };
        add(into.sh, g.sh);
        add(into.f_inst, g.f_inst);
        add(into.f_sem, g.f_sem);
    }

    std::size_t count_below(const SceneBundle& b, double tau) {
        std::size_t n = 0;
        for (const auto& g : b.fine)
            n += g.beta <= tau ? 1 : 0;
        return n;
    }

} // namespace

unsigned parse_params(const std::string& list) {
    unsigned out = 0;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "beta")
            out |= static_cast<unsigned>(Param::beta);
        else if (item == "alpha")
            out |= static_cast<unsigned>(Param::alpha);
        else if (item == "sh")
            out |= static_cast<unsigned>(Param::sh);
        else if (item == "f_inst")
            out |= static_cast<unsigned>(Param::f_inst);
        else if (item == "f_sem")
            out |= static_cast<unsigned>(Param::f_sem);
        else
            throw ValidationError(fmt::format("unknown parameter '{}' (expected beta, alpha, sh, f_inst, f_sem)", item));
    }
    return out;
}

std::string format_params(unsigned params) {
    std::string out;
    const std::pair<Param, const char*> names[] = {{Param::beta, "beta"}, {Param::alpha, "alpha"}, {Param::sh, "sh"},
                                                   {Param::f_inst, "f_inst"}, {Param::f_sem, "f_sem"}};
    for (const auto& [p, name] : names)
        if (has(params, p))
            out += (out.empty() ? "" : ",") + std::string(name);
    return out;
}

void check_optim_config(const OptimConfig& cfg) {
    if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr))
        throw ValidationError(fmt::format("learning rate {} must be positive", cfg.lr));
    if (cfg.params == 0)
        throw ValidationError("no parameters selected for optimization");
    if (!(cfg.clamp_eps > 0.0 && cfg.clamp_eps < 0.5))
        throw ValidationError("clamp epsilon must lie in (0, 0.5)");
    if (!(cfg.divergence_factor > 1.0))
        throw ValidationError("divergence factor must exceed 1");
    check_gate_config(cfg.gate);
    check_weights(cfg.weights);
}

std::string TraceLog::to_csv() const {
    std::string out = "step,total,photometric,importance,contrastive,semantic,below_tau\n";
    for (const auto& r : rows)
        out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", r.step, r.total, r.parts.photometric,
                           r.parts.importance, r.parts.contrastive, r.parts.semantic, r.below_tau);
    return out;
}

bool TraceLog::operator==(const TraceLog& o) const {
    if (rows.size() != o.rows.size())
        return false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& a = rows[i];
        const auto& b = o.rows[i];
        if (a.step != b.step || a.total != b.total || a.parts.photometric != b.parts.photometric ||
            a.parts.importance != b.parts.importance || a.parts.contrastive != b.parts.contrastive ||
            a.parts.semantic != b.parts.semantic || a.below_tau != b.below_tau)
            return false;
    }
    return true;
}

Evaluation evaluate_objective(const SceneBundle& bundle, std::span<const Camera> cameras,
                              std::span<const ViewTargets> targets, const OptimConfig& cfg) {
    if (targets.empty())
        throw ValidationError("at least one target view is required");
    if (cameras.size() != targets.size())
        throw ValidationError(fmt::format("{} cameras for {} target views", cameras.size(), targets.size()));
    if (bundle.fine.empty())
        throw ValidationError("the fine field is empty");

    RenderOptions ropts = cfg.render;
    ropts.gate_mode = GateMode::leaky;
    ropts.gate = cfg.gate;

    std::vector<RenderResult> renders;
    std::vector<ViewPrediction> preds;
    renders.reserve(targets.size());
    for (std::size_t v = 0; v < targets.size(); ++v) {
        const auto& t = targets[v];
        const RenderRequest req{t.rgb != nullptr, t.masks != nullptr, t.sem != nullptr};
        renders.push_back(render(bundle, cameras[v], ropts, req));
    }
    for (std::size_t v = 0; v < targets.size(); ++v) {
        const auto& o = renders[v].output;
        preds.push_back({targets[v].rgb ? &o.rgb : nullptr, targets[v].masks ? &o.inst : nullptr,
                         targets[v].sem ? &o.sem : nullptr});
    }

    std::vector<double> betas;
    betas.reserve(bundle.fine.size());
    for (const auto& g : bundle.fine)
        betas.push_back(g.beta);

    TotalOptions topts;
    topts.weights = cfg.weights;
    topts.gate = cfg.gate;
    topts.estimator = cfg.estimator;
    topts.contrastive = cfg.contrastive;
    topts.seed = cfg.seed;

    Evaluation ev;
    ev.loss = total(preds, targets, betas, topts);

    for (std::size_t v = 0; v < targets.size(); ++v) {
        RenderUpstream up;
        up.d_rgb = std::move(ev.loss.views[v].d_rgb);
        up.d_inst = std::move(ev.loss.views[v].d_inst);
        up.d_sem = std::move(ev.loss.views[v].d_sem);
        BundleGrad g = render_backward(bundle, renders[v].tape, up);
        if (v == 0) {
            ev.grad = std::move(g);
            continue;
        }
        for (std::size_t i = 0; i < g.fine.size(); ++i)
            accumulate(ev.grad.fine[i], g.fine[i]);
        for (std::size_t i = 0; i < g.coarse.size(); ++i)
            accumulate(ev.grad.coarse[i], g.coarse[i]);
    }
    for (std::size_t i = 0; i < bundle.fine.size(); ++i)
        ev.grad.fine[i].beta += ev.loss.d_beta[i];
    return ev;
}

FitResult fit(const SceneBundle& bundle, std::span<const Camera> cameras, std::span<const ViewTargets> targets,
              const OptimConfig& cfg) {
    check_optim_config(cfg);
    FitResult res{bundle, {}};
    SceneBundle& b = res.bundle;
    const std::size_t nf = b.fine.size(), nc = b.coarse.size();

    Slot beta, alpha, sh, inst, sem;
    auto clamp01 = [&](double p) { return std::clamp(p, cfg.clamp_eps, 1.0 - cfg.clamp_eps); };
    if (cfg.steps > 0) {
        for (const auto& g : b.fine) {
            beta.value.push_back(logit(clamp01(g.beta)));
            alpha.value.push_back(logit(clamp01(g.alpha)));
        }
    }

    Stepper stepper(cfg);
    double initial = 0.0;
    for (std::uint32_t step = 0;; ++step) {
        const bool last = step == cfg.steps;
        Evaluation ev = evaluate_objective(b, cameras, targets, cfg);
        const double L = ev.loss.value;
        res.trace.rows.push_back({step, L, ev.loss.parts, count_below(b, cfg.gate.tau)});
        if (!std::isfinite(L))
            throw NumericError(fmt::format("objective became non-finite at step {}", step));
        if (step == 0)
            initial = L;
        else if (L > cfg.divergence_factor * initial)
            throw NumericError(fmt::format("diverged at step {}: loss {:.6g} exceeds {} x initial {:.6g}", step, L,
                                           cfg.divergence_factor, initial));
        if (last)
            break;

        if (has(cfg.params, Param::beta)) {
            std::vector<double> g(nf);
            for (std::size_t i = 0; i < nf; ++i) {
                const double p = b.fine[i].beta;
                g[i] = ev.grad.fine[i].beta * p * (1.0 - p);
            }
            stepper.step(beta, g);
            for (std::size_t i = 0; i < nf; ++i)
                b.fine[i].beta = clamp01(sigmoid(beta.value[i]));
        }
        if (has(cfg.params, Param::alpha)) {
            std::vector<double> g(nf);
            for (std::size_t i = 0; i < nf; ++i) {
                const double p = b.fine[i].alpha;
                g[i] = ev.grad.fine[i].alpha * p * (1.0 - p);
            }
            stepper.step(alpha, g);
            for (std::size_t i = 0; i < nf; ++i)
                b.fine[i].alpha = clamp01(sigmoid(alpha.value[i]));
        }
        auto flat_step = [&](Slot& slot, auto&& prims, auto&& member, auto&& grad_member) {
            slot.value.clear();
            std::vector<double> g;
            for (std::size_t i = 0; i < prims.size(); ++i) {
                const std::vector<double>& v = member(prims[i]);
                const std::vector<double>& gv = grad_member(i);
                slot.value.insert(slot.value.end(), v.begin(), v.end());
                for (std::size_t k = 0; k < v.size(); ++k)
                    g.push_back(k < gv.size() ? gv[k] : 0.0);
            }
            stepper.step(slot, g);
            std::size_t off = 0;
            for (std::size_t i = 0; i < prims.size(); ++i) {
                std::vector<double>& v = member(prims[i]);
                std::copy(slot.value.begin() + off, slot.value.begin() + off + v.size(), v.begin());
                off += v.size();
            }
        };
        if (has(cfg.params, Param::sh))
            flat_step(
                sh, b.fine, [](GaussianPrimitive& g) -> std::vector<double>& { return g.sh; },
                [&](std::size_t i) -> const std::vector<double>& { return ev.grad.fine[i].sh; });
        if (has(cfg.params, Param::f_inst))
            flat_step(
                inst, b.fine, [](GaussianPrimitive& g) -> std::vector<double>& { return g.f_inst; },
                [&](std::size_t i) -> const std::vector<double>& { return ev.grad.fine[i].f_inst; });
        if (has(cfg.params, Param::f_sem) && nc > 0)
            flat_step(
                sem, b.coarse, [](GaussianPrimitive& g) -> std::vector<double>& { return *g.f_sem; },
                [&](std::size_t i) -> const std::vector<double>& { return ev.grad.coarse[i].f_sem; });
        stepper.next();
    }
    return res;
}

FdReport fdcheck(const FdFunction& f, std::span<const double> point, const FdOptions& opts) {
    if (!(opts.h > 0.0))
        throw ValidationError("finite-difference step must be positive");
    const std::vector<double> analytic = f.gradient(point);
    if (analytic.size() != point.size())
        throw ValidationError(fmt::format("gradient has {} entries for a {}-dimensional point", analytic.size(),
                                          point.size()));
    std::vector<std::size_t> idx = opts.indices;
    if (idx.empty())
        for (std::size_t i = 0; i < point.size(); ++i)
            idx.push_back(i);

    std::vector<double> x(point.begin(), point.end());
    auto eval_at = [&](std::size_t i, double delta) {
        const double saved = x[i];
        x[i] = saved + delta;
        const double v = f.value(x);
        x[i] = saved;
        if (!std::isfinite(v))
            throw NumericError(fmt::format("function is non-finite at coordinate {} perturbed by {}", i, delta));
        return v;
    };

    FdReport rep;
    const double f0 = opts.mode == FdMode::forward ? f.value(x) : 0.0;
    double sum = 0.0;
    for (std::size_t i : idx) {
        if (i >= point.size())
            throw ValidationError(fmt::format("coordinate {} out of range", i));
        FdEntry e;
        e.index = i;
        e.analytic = analytic[i];
        e.numeric = opts.mode == FdMode::central ? (eval_at(i, opts.h) - eval_at(i, -opts.h)) / (2.0 * opts.h)
                                                 : (eval_at(i, opts.h) - f0) / opts.h;
        e.rel_error = relative_error(e.analytic, e.numeric, opts.floor);
        e.excluded = opts.excluded && opts.excluded(i, point);
        if (e.excluded) {
            ++rep.excluded;
        } else {
            ++rep.checked;
            sum += e.rel_error;
            rep.max_rel_error = std::max(rep.max_rel_error, e.rel_error);
        }
        rep.entries.push_back(e);
    }
    rep.mean_rel_error = rep.checked ? sum / static_cast<double>(rep.checked) : 0.0;
    return rep;
}

} // namespace splatfield
