// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include "splatfield/bench.hpp"
#include "splatfield/dualfield.hpp"
#include "splatfield/errors.hpp"
#include "splatfield/eval.hpp"
#include "splatfield/gradsuite.hpp"
#include "splatfield/io.hpp"
#include "splatfield/loss.hpp"
#include "splatfield/optim.hpp"
#include "splatfield/raster.hpp"
#include "splatfield/sgm.hpp"
#include "splatfield/synth.hpp"

#include "test_util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

namespace sf = splatfield;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

// ---------------------------------------------------------------- 1: blending

struct ReferenceMaps {
    sf::CompositeOutput tiled, reference;
};

ReferenceMaps composite_both(const sf::Projection& proj, const sf::Payload& payload, const sf::Camera& cam,
                             const sf::RenderOptions& opts) {
    return {sf::composite(proj.splats, payload, cam.width, cam.height, opts),
            sf::composite_reference(proj.splats, payload, cam.width, cam.height, opts)};
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Outcome blending() {
    double telescoping = 0;
    std::size_t pixels = 0;
    std::mt19937_64 rng(2024);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        sf::Camera cam;
        const auto b = sf::random_scene(seed, 30 + 20 * seed, 32, cam);
        sf::RenderOptions opts;
        const auto proj = sf::project(b.fine, cam, b.dims.sh_degree, opts);
        sf::Payload ones{1, std::vector<double>(proj.splats.size(), 1.0)};
        const auto out = sf::composite(proj.splats, ones, cam.width, cam.height, opts);
        std::uniform_int_distribution<std::size_t> pick(0, out.transmittance.size() - 1);
        for (int k = 0; k < 100; ++k, ++pixels) {
            const auto p = pick(rng);
            telescoping = std::max(telescoping, std::abs(out.channels[p] + out.transmittance[p] - 1.0));
        }
    }

    double worst = 0;
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        sf::Camera cam;
        const std::size_t n = 25 * (seed - 99);  // 25 .. 500
        const auto b = sf::random_scene(seed, n, 32, cam);
        sf::RenderOptions opts;
        opts.tile = 8;
        const auto full = sf::render(b, cam, opts).output;

        const std::size_t N = b.dims.n_dim, M = b.dims.m_dim;
        const auto fine = sf::project(b.fine, cam, b.dims.sh_degree, opts);
        sf::Payload fp{3 + N, {}};
        for (const auto& s : fine.splats) {
            fp.values.insert(fp.values.end(), s.rgb.begin(), s.rgb.end());
            const auto& f = b.fine[s.source_index].f_inst;
            fp.values.insert(fp.values.end(), f.begin(), f.end());
        }
        const auto fm = composite_both(fine, fp, cam, opts);
        worst = std::max(worst, max_abs_diff(fm.tiled.channels, fm.reference.channels));
        worst = std::max(worst, max_abs_diff(fm.tiled.transmittance, fm.reference.transmittance));

        const auto coarse = sf::project(b.coarse, cam, b.dims.sh_degree, opts);
        sf::Payload cp{M, {}};
        for (const auto& s : coarse.splats) {
            const auto& f = *b.coarse[s.source_index].f_sem;
            cp.values.insert(cp.values.end(), f.begin(), f.end());
        }
        const auto cm = composite_both(coarse, cp, cam, opts);
        worst = std::max(worst, max_abs_diff(cm.tiled.channels, cm.reference.channels));

        // The public render must agree with the reference on every channel.
        const std::size_t P = std::size_t{cam.width} * cam.height;
        for (std::size_t p = 0; p < P; ++p) {
            for (std::size_t c = 0; c < 3; ++c)
                worst = std::max(worst, std::abs(full.rgb.data[p * 3 + c] - fm.reference.channels[p * (3 + N) + c]));
            for (std::size_t c = 0; c < N; ++c)
                worst = std::max(worst,
                                 std::abs(full.inst.data[p * N + c] - fm.reference.channels[p * (3 + N) + 3 + c]));
            for (std::size_t c = 0; c < M; ++c)
                worst = std::max(worst, std::abs(full.sem.data[p * M + c] - cm.reference.channels[p * M + c]));
            worst = std::max(worst, std::abs(full.acc.data[p] - (1.0 - fm.reference.transmittance[p])));
        }
    }
    return {telescoping <= 1e-6 && worst <= 1e-6,
            fmt::format("telescoping max err {:.2e} over {} pixels; tiled vs reference max diff {:.2e} over 20 "
                        "scenes (25..500 primitives)",
                        telescoping, pixels, worst)};
}

// ----------------------------------------------------------- 2: gradients

Outcome gradients() {
    double worst = 0;
    std::size_t checked = 0, excluded = 0;
    std::string failed;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        sf::GradSuiteOptions o;
        o.seed = seed;
        for (const auto& c : sf::run_grad_suite(o)) {
            worst = std::max(worst, c.report.max_rel_error);
            checked += c.report.checked;
            excluded += c.report.excluded;
            if (!c.passed)
                failed += fmt::format(" {}@seed{}", c.name, seed);
        }
    }
    return {failed.empty() && worst <= 1e-4,
            fmt::format("7 cases x 5 seeds, {} coordinates checked, {} excluded near tau; max rel err {:.2e}{}",
                        checked, excluded, worst, failed.empty() ? "" : "; failing:" + failed)};
}

// ------------------------------------------------------------------ 3: SGM

Outcome sgm() {
    sf::SynthSpec spec;
    spec.m_dim = 16;
    spec.noise = 0.05;
    const auto scene = sf::synth_scene(spec);
    std::vector<sf::ViewTargets> targets;
    for (std::size_t v = 0; v < scene.cameras.size(); ++v)
        targets.push_back({&scene.rgb[v], &scene.masks[v], &scene.sem[v]});

    sf::OptimConfig cfg;
    cfg.steps = 500;
    cfg.lr = 0.05;
    cfg.optimizer = sf::Optimizer::adam;
    cfg.params = static_cast<unsigned>(sf::Param::beta);
    const auto fitted = sf::fit(scene.bundle, scene.cameras, targets, cfg);
    const auto pruned = sf::prune(fitted.bundle, cfg.gate, std::span<const std::uint8_t>(scene.redundant));

    sf::RenderOptions plain;
    sf::RenderOptions leaky;
    leaky.gate_mode = sf::GateMode::leaky;
    const auto& cam = scene.heldout_camera;
    const double psnr_input = sf::psnr(sf::render(scene.bundle, cam, plain).output.rgb, scene.heldout_rgb);
    const double psnr_leaky = sf::psnr(sf::render(fitted.bundle, cam, leaky).output.rgb, scene.heldout_rgb);
    const double psnr_ident = sf::psnr(sf::render(fitted.bundle, cam, plain).output.rgb, scene.heldout_rgb);
    const double psnr_pruned = sf::psnr(sf::render(pruned.bundle, cam, plain).output.rgb, scene.heldout_rgb);

    const auto& rep = pruned.report;
    const double removed = double(rep.fine_discarded) / double(rep.fine_before);
    const double recall = rep.confusion->redundant_recall();
    const double drop_input = psnr_input - psnr_pruned;
    const double drop_leaky = psnr_leaky - psnr_pruned;
    const bool pass = removed >= 0.30 && recall >= 0.90 && drop_input <= 0.2 && drop_leaky <= 0.2;
    return {pass, fmt::format("removed {:.1f}% ({} of {}), redundant recall {:.3f}; held-out PSNR pruned {:.3f} dB, "
                              "drop vs input render {:+.3f} dB, vs fitted leaky-gate render {:+.3f} dB "
                              "(identity-gate fitted render {:.3f} dB, info only)",
                              100 * removed, rep.fine_discarded, rep.fine_before, recall, psnr_pruned, drop_input,
                              drop_leaky, psnr_ident)};
}

// ----------------------------------------------------- 4: estimator fidelity

sf::FeatureMap class_features(const sf::InstanceMaskSet& m, std::uint32_t dim, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    sf::FeatureMap f(m.height, m.width, dim);
    for (std::size_t p = 0; p < f.pixels(); ++p) {
        auto px = f.pixel(p);
        px[m.ids[p] % dim] = 1.0;
        if (sigma > 0)
            for (double& x : px)
                x += sigma * n01(rng);
    }
    return f;
}

Outcome estimator() {
    std::size_t bit_equal = 0;
    double rel_sum = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const std::uint32_t m = 2 + seed % 4;
        const auto masks = sf::testing::random_masks(16, 16, m, seed);
        const auto clean = class_features(masks, 8, 0.0, seed);
        bit_equal += sf::contrastive_linear(clean, masks, seed).value == sf::contrastive_exact(clean, masks).value;
        const auto noisy = class_features(masks, 8, 0.05, seed);
        const double exact = sf::contrastive_exact(noisy, masks).value;
        rel_sum += std::abs(sf::contrastive_linear(noisy, masks, seed).value - exact) / exact;
    }
    const double mean_rel = rel_sum / 100.0;

    std::vector<sf::EstimatorWork> work;
    for (std::size_t n : {256u, 1024u, 4096u})
        work.push_back(sf::measure_estimator_work(n, 4, 0));
    bool scaling = true;
    std::string ratios;
    for (std::size_t i = 1; i < work.size(); ++i) {
        const double nr = double(work[i].n) / double(work[i - 1].n);
        const double lin = double(work[i].linear.intra_similarity) / double(work[i - 1].linear.intra_similarity);
        const double ex = double(work[i].exact.intra_similarity) / double(work[i - 1].exact.intra_similarity);
        scaling = scaling && std::abs(lin / nr - 1.0) <= 0.05 && std::abs(ex / (nr * nr) - 1.0) <= 0.05;
        ratios += fmt::format(" n {}->{}: linear x{:.2f}, exact x{:.2f};", work[i - 1].n, work[i].n, lin, ex);
    }
    return {bit_equal == 100 && mean_rel <= 0.05 && scaling,
            fmt::format("noiseless bit-equal {}/100; sigma 0.05 mean rel err {:.4f} over 100 seeds (m 2..5, "
                        "16x16); intra work{}",
                        bit_equal, mean_rel, ratios)};
}

// -------------------------------------------------------------- 5: storage

Outcome storage() {
    sf::SceneDims d;
    d.views = 2;
    d.height = d.width = 256;
    d.downsample = 8;
    d.n_dim = 8;
    d.m_dim = 512;
    d.sh_degree = 3;
    const auto base = sf::account_counts(d.pixelwise_fine_count(), d.pixelwise_coarse_count(), d);
    const double base_mb = base.baseline_plain_bytes / sf::kBytesPerMB;
    const auto dual = sf::account_counts(87700, d.pixelwise_coarse_count(), d);
    const double dual_mb = dual.bytes_total / sf::kBytesPerMB;
    const double residual = (dual_mb - 25.58) / 25.58;
    const bool pass = base.pixelwise_count == 131072 && base.scalars_geometry == 59 &&
                      std::abs(base_mb - 30.93) <= 0.01 && std::abs(residual) <= 0.15;
    return {pass, fmt::format("pixel-wise {} primitives x {} scalars = {:.4f} MB; dual field (87700 fine, {} coarse) "
                              "= {:.4f} MB, residual {:+.1f}% vs 25.58 MB",
                              base.pixelwise_count, base.scalars_geometry, base_mb, dual.coarse_count, dual_mb,
                              100 * residual)};
}

// ---------------------------------------------------------------- 6: query

struct QueryScore {
    double miou = 1.0, accuracy = 1.0;
    std::size_t pixels = 0;
};

QueryScore run_query(double noise) {
    sf::SynthSpec spec;
    spec.m_dim = 16;
    spec.overlap = 0.0;
    spec.noise = noise;
    const auto scene = sf::synth_scene(spec);
    const auto clusters = sf::attach_semantics(sf::cluster_instances(scene.bundle.fine, 0.9), scene.bundle.coarse);
    std::vector<std::vector<double>> queries;
    for (std::uint32_t k = 0; k <= spec.objects; ++k) {
        std::vector<double> q(spec.m_dim, 0.0);
        q[k] = 1.0;
        queries.push_back(q);
    }
    QueryScore s;
    for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
        const auto r = sf::query(clusters, queries, scene.bundle, scene.cameras[v]);
        std::vector<std::uint8_t> valid(r.acc.size());
        for (std::size_t p = 0; p < valid.size(); ++p)
            valid[p] = r.acc.data[p] > 0.5;
        const auto m = sf::seg_metrics(r.labels, scene.classes[v], spec.objects + 2, valid);
        s.miou = std::min(s.miou, m.miou);
        s.accuracy = std::min(s.accuracy, m.accuracy);
        s.pixels += m.pixels;
    }
    return s;
}

Outcome query() {
    const auto clean = run_query(0.0);
    const auto noisy = run_query(0.05);
    return {clean.miou == 1.0 && clean.accuracy == 1.0 && noisy.miou >= 0.95,
            fmt::format("noiseless: min mIoU {:.4f}, min accuracy {:.4f} over {} pixels with acc > 0.5; "
                        "sigma 0.05: min mIoU {:.4f}",
                        clean.miou, clean.accuracy, clean.pixels, noisy.miou)};
}

// -------------------------------------------------------- 7: serialization

sf::SceneBundle random_bundle(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::uint32_t> deg(0, 3), ndim(1, 12), mdim(1, 24), count(0, 12), ds(1, 4);
    std::uniform_real_distribution<double> u(-3.0, 3.0), unit(0.0, 1.0), pos(0.01, 2.0);
    sf::SceneBundle b;
    auto& d = b.dims;
    d.views = 1 + rng() % 3;
    d.downsample = ds(rng);
    d.height = d.downsample * (1 + rng() % 8);
    d.width = d.downsample * (1 + rng() % 8);
    d.n_dim = ndim(rng);
    d.m_dim = mdim(rng);
    d.sh_degree = deg(rng);
    auto prim = [&](bool coarse) {
        sf::GaussianPrimitive g;
        for (double& x : g.mu)
            x = u(rng);
        g.alpha = unit(rng);
        double len = 0;
        for (double& x : g.rot) {
            x = u(rng);
            len += x * x;
        }
        for (double& x : g.rot)
            x /= std::sqrt(len);
        for (double& x : g.scale)
            x = pos(rng);
        g.sh.resize(sf::sh_length(d.sh_degree));
        for (double& x : g.sh)
            x = u(rng);
        g.beta = unit(rng);
        g.f_inst.resize(d.n_dim);
        for (double& x : g.f_inst)
            x = u(rng);
        if (coarse) {
            g.f_sem.emplace(d.m_dim);
            for (double& x : *g.f_sem)
                x = u(rng);
        }
        return g;
    };
    for (std::uint32_t i = count(rng); i > 0; --i)
        b.fine.push_back(prim(false));
    for (std::uint32_t i = count(rng); i > 0; --i)
        b.coarse.push_back(prim(true));
    const std::size_t tag = rng() % 40;
    for (std::size_t i = 0; i < tag; ++i)
        b.provenance.push_back(static_cast<char>('a' + rng() % 26));
    sf::quantize_to_float(b);
    return b;
}

template <class Fn>
bool throws_format(Fn&& fn, sf::FormatError::Kind want) {
    try {
        fn();
    } catch (const sf::FormatError& e) {
        return e.kind() == want;
    } catch (...) {
        return false;
    }
    return false;
}

void put_u32(std::vector<std::uint8_t>& bytes, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        bytes[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

Outcome serialization() {
    std::mt19937_64 rng(7);
    std::size_t exact = 0, truncation = 0, magic = 0, counts = 0, flips_ok = 0;
    constexpr std::size_t kBundles = 1000;
    for (std::size_t i = 0; i < kBundles; ++i) {
        const auto b = random_bundle(rng);
        const auto bytes = sf::encode_bundle(b);
        const auto back = sf::decode_bundle(bytes);
        exact += back == b && sf::encode_bundle(back) == bytes;

        auto cut = bytes;
        cut.resize(rng() % bytes.size());
        truncation += throws_format([&] { sf::decode_bundle(cut); }, sf::FormatError::Kind::truncated);

        auto bad = bytes;
        bad[rng() % 4] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        magic += throws_format([&] { sf::decode_bundle(bad); }, sf::FormatError::Kind::bad_magic);

        // Either a header field that cannot describe a grid, or a primitive
        // count larger than the payload.
        auto hdr = bytes;
        if (i % 2 == 0) {
            put_u32(hdr, 8 + 4 * (rng() % 4), 0);  // views, height, width or downsample
            counts += throws_format([&] { sf::decode_bundle(hdr); }, sf::FormatError::Kind::bad_counts);
        } else {
            put_u32(hdr, 36 + 4 * (rng() % 2), 0x7fffffffu);  // fine or coarse count
            counts += throws_format([&] { sf::decode_bundle(hdr); }, sf::FormatError::Kind::truncated);
        }

        // Random byte damage must either decode or raise a library error.
        auto noisy = bytes;
        for (int k = 0; k < 4; ++k)
            noisy[rng() % noisy.size()] = static_cast<std::uint8_t>(rng());
        try {
            (void)sf::decode_bundle(noisy);
            ++flips_ok;
        } catch (const sf::Error&) {
            ++flips_ok;
        } catch (...) {
        }
    }
    const bool pass =
        exact == kBundles && truncation == kBundles && magic == kBundles && counts == kBundles && flips_ok == kBundles;
    return {pass, fmt::format("{}/{} bit-exact round trips; designated errors: truncation {}/{}, bad magic {}/{}, "
                              "bad counts {}/{}; random byte damage handled {}/{}",
                              exact, kBundles, truncation, kBundles, magic, kBundles, counts, kBundles, flips_ok,
                              kBundles)};
}

// ----------------------------------------------------------- 8: arithmetic

Outcome arithmetic() {
    const double total = sf::combine({1, 1, 1, 1}, sf::LossWeights{});
    const double hi = sf::gate(0.7, {}), lo = sf::gate(0.3, {});
    const bool pass = total == 2.21 && hi == 0.7 && std::abs(lo - 0.0003) <= 1e-18;
    return {pass, fmt::format("combine(1,1,1,1) = {:.17g}; gate(0.7) = {:.17g}; gate(0.3) = {:.17g}", total, hi, lo)};
}

} // namespace

int main() {
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"blending correctness", blending},       {"gradient suite", gradients},
        {"selective pruning", sgm},                {"contrastive estimator fidelity", estimator},
        {"storage accounting", storage},          {"dual-field query", query},
        {"serialization", serialization},          {"loss-weight arithmetic", arithmetic},
    };
    int failures = 0;
    int index = 0;
    for (const auto& [name, run] : criteria) {
        ++index;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += !o.pass;
        std::printf("criterion %d %s: %s (%.1fs) %s\n", index, name, o.pass ? "PASS" : "FAIL", secs,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
