#include "splatfield/gradsuite.hpp"

#include "rng.hpp"
#include "splatfield/errors.hpp"
#include "splatfield/loss.hpp"
#include "splatfield/sgm.hpp"

#include <cmath>

namespace splatfield {

namespace {

    using detail::Rng;

    template <class F>
    void visit(SceneBundle& b, F&& f) {
        auto prim = [&](GaussianPrimitive& g) {
            for (double& x : g.mu)
                f(x);
            f(g.alpha);
            for (double& x : g.rot)
                f(x);
            for (double& x : g.scale)
                f(x);
            for (double& x : g.sh)
                f(x);
            f(g.beta);
            for (double& x : g.f_inst)
                f(x);
            if (g.f_sem)
                for (double& x : *g.f_sem)
                    f(x);
        };
        for (auto& g : b.fine)
            prim(g);
        for (auto& g : b.coarse)
            prim(g);
    }

    void random_quaternion(Rng& rng, std::array<double, 4>& q) {
        double n = 0.0;
        for (double& x : q) {
            x = rng.normal();
            n += x * x;
        }
        n = std::sqrt(n);
        for (double& x : q)
            x /= n;
    }

    /// `slot` of `slots` picks a cell of a jittered grid over the image so no
    /// primitive is buried under the others.
    GaussianPrimitive random_primitive(Rng& rng, const Camera& cam, std::uint32_t sh_degree, std::uint32_t n_dim,
                                       std::size_t slot, std::size_t slots) {
        GaussianPrimitive g;
        const double z = rng.uniform(3.0, 6.0);
        const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(slots))));
        const std::size_t rows = (slots + cols - 1) / cols;
        const double cu = (static_cast<double>(slot % cols) + rng.uniform(0.2, 0.8)) / static_cast<double>(cols);
        const double cv = (static_cast<double>(slot / cols) + rng.uniform(0.2, 0.8)) / static_cast<double>(rows);
        const double u = (0.1 + 0.8 * cu) * cam.width, v = (0.1 + 0.8 * cv) * cam.height;
        const std::array<double, 3> pc{(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z};
        // World position R^T (pc - t).
        for (int r = 0; r < 3; ++r)
            g.mu[r] = cam.R[r] * (pc[0] - cam.t[0]) + cam.R[3 + r] * (pc[1] - cam.t[1]) + cam.R[6 + r] * (pc[2] - cam.t[2]);
        for (double& s : g.scale)
            s = rng.uniform(0.8, 2.0) * z / cam.fx;
        random_quaternion(rng, g.rot);
        g.alpha = rng.uniform(0.2, 0.9);
        g.beta = rng.uniform() < 0.5 ? rng.uniform(0.05, 0.45) : rng.uniform(0.55, 0.95);
        g.sh.assign(sh_length(sh_degree), 0.0);
        for (std::size_t i = 0; i < g.sh.size(); ++i)
            g.sh[i] = i < 3 ? rng.uniform(-0.9, 0.9) : rng.uniform(-0.05, 0.05);
        g.f_inst.resize(n_dim);
        for (double& x : g.f_inst)
            x = rng.normal();
        return g;
    }

    FeatureMap random_map(Rng& rng, std::uint32_t h, std::uint32_t w, std::uint32_t c, double lo, double hi) {
        FeatureMap m(h, w, c);
        for (double& x : m.data)
            x = rng.uniform(lo, hi);
        return m;
    }

    /// Masks with `m` instances of at least two pixels each, plus background.
    InstanceMaskSet random_masks(Rng& rng, std::uint32_t h, std::uint32_t w, std::uint32_t m) {
        InstanceMaskSet masks;
        masks.height = h;
        masks.width = w;
        masks.m = m;
        masks.ids.resize(std::size_t{h} * w);
        for (auto& id : masks.ids)
            id = static_cast<std::uint16_t>(rng.below(m + 1));
        for (std::uint32_t k = 1; k <= m; ++k) {
            masks.ids[2 * (k - 1)] = static_cast<std::uint16_t>(k);
            masks.ids[2 * (k - 1) + 1] = static_cast<std::uint16_t>(k);
        }
        return masks;
    }

    GradCase finish(std::string name, FdReport rep, double tol) {
        GradCase c;
        c.name = std::move(name);
        c.passed = rep.passed(tol) && rep.checked > 0;
        c.report = std::move(rep);
        return c;
    }

    /// Exclusion rule for scores straddling the gate threshold.
    auto near_tau(const std::vector<std::size_t>& beta_slots, double tau, double h) {
        return [beta_slots, tau, h](std::size_t i, std::span<const double> x) {
            for (std::size_t s : beta_slots)
                if (s == i)
                    return std::abs(x[i] - tau) <= h;
            return false;
        };
    }

    /// Positions of the fine beta entries in the flattened parameter vector.
    std::vector<std::size_t> beta_slots(const SceneBundle& b) {
        SceneBundle marked = b;
        for (auto& g : marked.fine)
            g.beta = std::nan("");
        const auto flat = flatten_parameters(marked);
        std::vector<std::size_t> slots;
        for (std::size_t k = 0; k < flat.size(); ++k)
            if (std::isnan(flat[k]))
                slots.push_back(k);
        return slots;
    }

} // namespace

std::vector<double> flatten_parameters(const SceneBundle& bundle) {
    std::vector<double> out;
    visit(const_cast<SceneBundle&>(bundle), [&](double& x) { out.push_back(x); });
    return out;
}

void unflatten_parameters(SceneBundle& bundle, std::span<const double> values) {
    std::size_t i = 0;
    visit(bundle, [&](double& x) {
        if (i >= values.size())
            throw ValidationError("parameter vector is shorter than the bundle");
        x = values[i++];
    });
    if (i != values.size())
        throw ValidationError("parameter vector is longer than the bundle");
}

std::vector<double> flatten_gradient(const SceneBundle& bundle, const BundleGrad& grad) {
    if (grad.fine.size() != bundle.fine.size() || grad.coarse.size() != bundle.coarse.size())
        throw ValidationError("gradient does not match the bundle");
    std::vector<double> out;
    auto prim = [&](const GaussianPrimitive& g, const PrimitiveGrad& d) {
        out.insert(out.end(), d.mu.begin(), d.mu.end());
        out.push_back(d.alpha);
        out.insert(out.end(), d.rot.begin(), d.rot.end());
        out.insert(out.end(), d.scale.begin(), d.scale.end());
        for (std::size_t k = 0; k < g.sh.size(); ++k)
            out.push_back(k < d.sh.size() ? d.sh[k] : 0.0);
        out.push_back(d.beta);
        for (std::size_t k = 0; k < g.f_inst.size(); ++k)
            out.push_back(k < d.f_inst.size() ? d.f_inst[k] : 0.0);
        if (g.f_sem)
            for (std::size_t k = 0; k < g.f_sem->size(); ++k)
                out.push_back(k < d.f_sem.size() ? d.f_sem[k] : 0.0);
    };
    for (std::size_t i = 0; i < bundle.fine.size(); ++i)
        prim(bundle.fine[i], grad.fine[i]);
    for (std::size_t i = 0; i < bundle.coarse.size(); ++i)
        prim(bundle.coarse[i], grad.coarse[i]);
    return out;
}

SceneBundle random_scene(std::uint64_t seed, std::size_t primitives, std::uint32_t size, Camera& cam) {
    Rng rng(seed);
    cam = Camera{};
    cam.width = cam.height = size;
    cam.fx = cam.fy = size;
    cam.cx = cam.cy = size / 2.0;
    // Oblique orientation: view directions stay away from the axes, so every
    // SH basis function is far from zero over the image.
    const double w = 0.8, x = 0.35, y = -0.4, z = 0.28;
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    const double qw = w / n, qx = x / n, qy = y / n, qz = z / n;
    cam.R = {1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz),     2 * (qx * qz + qw * qy),
             2 * (qx * qy + qw * qz),     1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx),
             2 * (qx * qz - qw * qy),     2 * (qy * qz + qw * qx),     1 - 2 * (qx * qx + qy * qy)};

    SceneBundle b;
    b.dims = SceneDims{1, size, size, 1, 4, 5, 3};
    b.provenance = "random";
    for (std::size_t i = 0; i < primitives; ++i)
        b.fine.push_back(random_primitive(rng, cam, b.dims.sh_degree, b.dims.n_dim, i, primitives));
    const std::size_t n_coarse = std::max<std::size_t>(2, primitives / 5);
    for (std::size_t i = 0; i < n_coarse; ++i) {
        GaussianPrimitive g = random_primitive(rng, cam, b.dims.sh_degree, b.dims.n_dim, i, n_coarse);
        g.f_sem = std::vector<double>(b.dims.m_dim);
        for (double& x : *g.f_sem)
            x = rng.uniform(-1.0, 1.0);
        b.coarse.push_back(std::move(g));
    }
    return b;
}

RenderOptions smooth_render_options() {
    RenderOptions o;
    o.min_alpha = 0.0;
    o.max_alpha = 1.0;
    o.cutoff_sigma = 1e3;
    o.gate_mode = GateMode::leaky;
    // A leak of 1e-3 shrinks every gradient of a gated-down primitive below
    // what central differences resolve; 0.1 exercises the same branch.
    o.gate.leak = 0.1;
    return o;
}

GradCase check_blend(const GradSuiteOptions& opts) {
    Camera cam;
    const SceneBundle base = random_scene(opts.seed, opts.primitives, opts.size, cam);
    const RenderOptions ro = smooth_render_options();

    Rng rng(opts.seed ^ 0x5eedULL);
    const std::uint32_t H = cam.height, W = cam.width;
    // Positive weights avoid sums that cancel to values finite differences
    // cannot resolve.
    RenderUpstream up;
    up.d_rgb = random_map(rng, H, W, 3, 0.5, 1.5);
    up.d_inst = random_map(rng, H, W, base.dims.n_dim, 0.5, 1.5);
    up.d_sem = random_map(rng, H, W, base.dims.m_dim, 0.5, 1.5);
    up.d_acc = random_map(rng, H, W, 1, 0.5, 1.5);

    // The base render is subtracted per entry before the weighted sum, so
    // the accumulated value stays small; the gradient is unaffected.
    const RenderOutput out0 = render(base, cam, ro).output;
    auto dotp = [](const FeatureMap& a, const FeatureMap& a0, const FeatureMap& w) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.data.size(); ++i)
            s += (a.data[i] - a0.data[i]) * w.data[i];
        return s;
    };
    FdFunction f;
    f.value = [&](std::span<const double> x) {
        SceneBundle b = base;
        unflatten_parameters(b, x);
        const auto out = render(b, cam, ro).output;
        return dotp(out.rgb, out0.rgb, up.d_rgb) + dotp(out.inst, out0.inst, up.d_inst) +
               dotp(out.sem, out0.sem, up.d_sem) + dotp(out.acc, out0.acc, up.d_acc);
    };
    f.gradient = [&](std::span<const double> x) {
        SceneBundle b = base;
        unflatten_parameters(b, x);
        const auto res = render(b, cam, ro);
        return flatten_gradient(b, render_backward(b, res.tape, up));
    };
    FdOptions fo;
    fo.h = opts.h;
    fo.excluded = near_tau(beta_slots(base), ro.gate.tau, opts.h);
    return finish("blend", fdcheck(f, flatten_parameters(base), fo), opts.tolerance);
}

GradCase check_photometric(const GradSuiteOptions& opts) {
    Rng rng(opts.seed);
    const FeatureMap rendered = random_map(rng, opts.size, opts.size, 3, 0.0, 1.0);
    FeatureMap target = random_map(rng, opts.size, opts.size, 3, 0.0, 1.0);
    FdFunction f;
    f.value = [&](std::span<const double> x) {
        FeatureMap r = rendered;
        r.data.assign(x.begin(), x.end());
        return photometric(r, target).value;
    };
    f.gradient = [&](std::span<const double> x) {
        FeatureMap r = rendered;
        r.data.assign(x.begin(), x.end());
        return photometric(r, target).grad.data;
    };
    FdOptions fo;
    fo.h = opts.h;
    return finish("photometric", fdcheck(f, rendered.data, fo), opts.tolerance);
}

GradCase check_semantic(const GradSuiteOptions& opts) {
    Rng rng(opts.seed);
    const FeatureMap rendered = random_map(rng, 8, 8, 16, -1.0, 1.0);
    const FeatureMap target = random_map(rng, 8, 8, 16, -1.0, 1.0);
    FdFunction f;
    f.value = [&](std::span<const double> x) {
        FeatureMap r = rendered;
        r.data.assign(x.begin(), x.end());
        return semantic(r, target).value;
    };
    f.gradient = [&](std::span<const double> x) {
        FeatureMap r = rendered;
        r.data.assign(x.begin(), x.end());
        return semantic(r, target).grad.data;
    };
    FdOptions fo;
    fo.h = opts.h;
    return finish("semantic", fdcheck(f, rendered.data, fo), opts.tolerance);
}

GradCase check_contrastive(const GradSuiteOptions& opts, ContrastiveEstimator estimator) {
    Rng rng(opts.seed);
    const std::uint32_t H = 8, W = 8, N = 6;
    const InstanceMaskSet masks = random_masks(rng, H, W, 3);
    // Instance-centred features keep the intra similarity well inside the clamp.
    FeatureMap feats(H, W, N);
    for (std::size_t p = 0; p < feats.pixels(); ++p)
        for (std::uint32_t c = 0; c < N; ++c)
            feats.pixel(p)[c] = (c == masks.ids[p] ? 1.0 : 0.0) + 0.4 * rng.normal();
    auto eval = [&](std::span<const double> x) {
        FeatureMap m = feats;
        m.data.assign(x.begin(), x.end());
        return estimator == ContrastiveEstimator::exact ? contrastive_exact(m, masks)
                                                        : contrastive_linear(m, masks, opts.seed);
    };
    FdFunction f;
    f.value = [&](std::span<const double> x) { return eval(x).value; };
    f.gradient = [&](std::span<const double> x) { return eval(x).grad.data; };
    FdOptions fo;
    fo.h = opts.h;
    return finish(estimator == ContrastiveEstimator::exact ? "contrastive_exact" : "contrastive_linear",
                  fdcheck(f, feats.data, fo), opts.tolerance);
}

GradCase check_gate_loss(const GradSuiteOptions& opts) {
    Rng rng(opts.seed);
    const GateConfig cfg;
    std::vector<double> betas(64);
    for (double& b : betas)
        b = rng.uniform(0.01, 0.99);
    betas[0] = cfg.tau + 0.5 * opts.h;  // documented non-smooth point
    betas[1] = cfg.tau - 0.5 * opts.h;
    FdFunction f;
    f.value = [&](std::span<const double> x) { return gate_loss(x, cfg).value; };
    f.gradient = [&](std::span<const double> x) { return gate_loss(x, cfg).grad; };
    FdOptions fo;
    fo.h = opts.h;
    fo.excluded = [&](std::size_t i, std::span<const double> x) { return std::abs(x[i] - cfg.tau) <= opts.h; };
    return finish("gate_loss", fdcheck(f, betas, fo), opts.tolerance);
}

GradCase check_total(const GradSuiteOptions& opts) {
    Camera cam;
    SceneBundle base = random_scene(opts.seed, opts.primitives, opts.size, cam);
    // A shared feature direction keeps the contrastive value, and with it the
    // objective's rounding noise, small.
    for (auto& g : base.fine)
        g.f_inst[0] += 3.0;
    Rng rng(opts.seed ^ 0x7a1ULL);

    // Two views: the base camera and one shifted sideways.
    std::vector<Camera> cams{cam, cam};
    cams[1].t = {0.3, -0.1, 0.0};
    const std::uint32_t H = cam.height, W = cam.width;
    std::vector<FeatureMap> rgb, sem;
    std::vector<InstanceMaskSet> masks;
    // Targets sit a small one-sided offset away from the initial render, so
    // every term stays small and per-pixel residuals share a sign. Both keep
    // gradients well above the finite-difference noise floor.
    const RenderOptions ro = smooth_render_options();
    for (int v = 0; v < 2; ++v) {
        const auto out = render(base, cams[v], ro).output;
        FeatureMap t_rgb = out.rgb, t_sem = out.sem;
        for (double& x : t_rgb.data)
            x += rng.uniform(0.05, 0.15);
        for (double& x : t_sem.data)
            x += rng.uniform(0.05, 0.15);
        rgb.push_back(std::move(t_rgb));
        sem.push_back(std::move(t_sem));
        masks.push_back(random_masks(rng, H, W, 3));
    }
    std::vector<ViewTargets> targets;
    for (int v = 0; v < 2; ++v)
        targets.push_back({&rgb[v], &masks[v], &sem[v]});

    OptimConfig cfg;
    cfg.render = ro;
    cfg.gate = ro.gate;
    cfg.seed = opts.seed;

    FdFunction f;
    f.value = [&](std::span<const double> x) {
        SceneBundle b = base;
        unflatten_parameters(b, x);
        return evaluate_objective(b, cams, targets, cfg).loss.value;
    };
    f.gradient = [&](std::span<const double> x) {
        SceneBundle b = base;
        unflatten_parameters(b, x);
        return flatten_gradient(b, evaluate_objective(b, cams, targets, cfg).grad);
    };
    FdOptions fo;
    fo.h = opts.h;
    fo.excluded = near_tau(beta_slots(base), cfg.gate.tau, opts.h);
    return finish("total", fdcheck(f, flatten_parameters(base), fo), opts.tolerance);
}

std::vector<GradCase> run_grad_suite(const GradSuiteOptions& opts) {
    return {check_blend(opts),
            check_photometric(opts),
            check_semantic(opts),
            check_contrastive(opts, ContrastiveEstimator::exact),
            check_contrastive(opts, ContrastiveEstimator::linear),
            check_gate_loss(opts),
            check_total(opts)};
}

} // namespace splatfield
