#include "splatfield/bench.hpp"

#include "rng.hpp"
#include "splatfield/errors.hpp"
#include "splatfield/gradsuite.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace splatfield {

namespace {

    template <class F>
    StageTiming time_stage(std::string name, std::size_t reps, F&& body) {
        std::vector<double> ms;
        ms.reserve(reps);
        for (std::size_t r = 0; r < reps; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            body();
            ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        }
        StageTiming t;
        t.stage = std::move(name);
        t.reps = reps;
        if (!ms.empty()) {
            t.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
            std::sort(ms.begin(), ms.end());
            const std::size_t h = ms.size() / 2;
            t.median_ms = ms.size() % 2 ? ms[h] : 0.5 * (ms[h - 1] + ms[h]);
        }
        return t;
    }

    std::uint32_t square_side(std::size_t n) {
        const auto side = static_cast<std::uint32_t>(std::llround(std::sqrt(static_cast<double>(n))));
        if (n == 0 || std::size_t{side} * side != n)
            throw ValidationError(fmt::format("contrastive size {} is not a nonzero perfect square", n));
        return side;
    }

} // namespace

void estimator_workload(std::size_t n, std::uint32_t instances, std::uint64_t seed, FeatureMap& features,
                        InstanceMaskSet& masks) {
    const std::uint32_t side = square_side(n);
    if (instances == 0 || instances > side)
        throw ValidationError(fmt::format("instance count {} must lie in [1, {}]", instances, side));
    detail::Rng rng(seed);
    masks = InstanceMaskSet{};
    masks.height = masks.width = side;
    masks.m = instances;
    masks.ids.resize(n);
    for (std::uint32_t r = 0; r < side; ++r)
        for (std::uint32_t c = 0; c < side; ++c)
            masks.ids[std::size_t{r} * side + c] = static_cast<std::uint16_t>(1 + r * instances / side);
    features = FeatureMap(side, side, 8);
    for (double& x : features.data)
        x = rng.normal();
}

EstimatorWork measure_estimator_work(std::size_t n, std::uint32_t instances, std::uint64_t seed) {
    FeatureMap f;
    InstanceMaskSet masks;
    estimator_workload(n, instances, seed, f, masks);
    EstimatorWork w;
    w.n = n;
    w.instances = instances;
    ContrastiveOptions o;
    o.ops = &w.exact;
    contrastive_exact(f, masks, o);
    o.ops = &w.linear;
    contrastive_linear(f, masks, seed, o);
    return w;
}

BenchReport bench(const BenchSpec& spec) {
    if (spec.size == 0 || spec.primitives == 0 || spec.reps == 0)
        throw ValidationError("bench sizes and repetition count must be positive");
    for (std::size_t n : spec.contrastive_sizes)
        square_side(n);

    BenchReport rep;
    Camera cam;
    const SceneBundle scene = random_scene(spec.seed, spec.primitives, spec.size, cam);
    const RenderOptions& ro = spec.render;

    Projection proj;
    rep.stages.push_back(time_stage("project", spec.reps, [&] {
        proj = project(scene.fine, cam, scene.dims.sh_degree, ro);
    }));
    Payload rgb;
    rgb.channels = 3;
    for (const auto& s : proj.splats)
        rgb.values.insert(rgb.values.end(), s.rgb.begin(), s.rgb.end());
    rep.stages.push_back(time_stage("blend", spec.reps, [&] {
        composite(proj.splats, rgb, spec.size, spec.size, ro);
    }));
    RenderResult res;
    rep.stages.push_back(time_stage("render", spec.reps, [&] { res = render(scene, cam, ro); }));

    RenderUpstream up;
    up.d_rgb = FeatureMap(spec.size, spec.size, 3, 1.0);
    up.d_inst = FeatureMap(spec.size, spec.size, scene.dims.n_dim, 1.0);
    rep.stages.push_back(time_stage("render_backward", spec.reps, [&] { render_backward(scene, res.tape, up); }));

    for (std::size_t n : spec.contrastive_sizes) {
        FeatureMap f;
        InstanceMaskSet masks;
        estimator_workload(n, spec.instances, spec.seed, f, masks);
        rep.stages.push_back(time_stage(fmt::format("contrastive_exact_n{}", n), spec.contrastive_reps,
                                        [&] { contrastive_exact(f, masks); }));
        rep.stages.push_back(time_stage(fmt::format("contrastive_linear_n{}", n), spec.contrastive_reps,
                                        [&] { contrastive_linear(f, masks, spec.seed); }));
        rep.work.push_back(measure_estimator_work(n, spec.instances, spec.seed));
    }
    return rep;
}

} // namespace splatfield
