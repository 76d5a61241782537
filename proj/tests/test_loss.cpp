#include "splatfield/errors.hpp"
#include "splatfield/gradsuite.hpp"
#include "splatfield/loss.hpp"
#include "splatfield/optim.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sf = splatfield;
using sf::testing::random_map;
using sf::testing::random_masks;

namespace {

/// Straight double loop over labelled pixel pairs with per-pair cosine.
double naive_contrastive(const sf::FeatureMap& f, const sf::InstanceMaskSet& m) {
    const std::size_t P = f.pixels();
    auto cosine = [&](std::size_t a, std::size_t b) {
        double ab = 0, aa = 0, bb = 0;
        for (std::uint32_t c = 0; c < f.channels; ++c) {
            const double x = f.pixel(a)[c], y = f.pixel(b)[c];
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        return ab / (std::sqrt(aa) * std::sqrt(bb));
    };
    double intra = 0, inter = 0;
    double n_intra = 0, n_inter = 0;
    for (std::size_t u = 0; u < P; ++u) {
        if (m.ids[u] == 0)
            continue;
        for (std::size_t v = 0; v < P; ++v) {
            if (v == u || m.ids[v] == 0)
                continue;
            if (m.ids[u] == m.ids[v]) {
                intra += cosine(u, v);
                n_intra += 1;
            } else {
                inter += 1.0 - cosine(u, v);
                n_inter += 1;
            }
        }
    }
    const double mean_intra = std::clamp(intra / n_intra, 1e-6, 1.0);
    return -std::log(mean_intra) + (n_inter > 0 ? inter / n_inter : 0.0);
}

/// One-hot class features (optionally scaled and noised) on a mask.
sf::FeatureMap class_features(const sf::InstanceMaskSet& m, std::uint32_t dim, double sigma, std::uint64_t seed,
                              double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    sf::FeatureMap f(m.height, m.width, dim);
    for (std::size_t p = 0; p < f.pixels(); ++p) {
        auto px = f.pixel(p);
        px[m.ids[p] % dim] = scale;
        if (sigma > 0)
            for (double& x : px)
                x += sigma * n01(rng);
    }
    return f;
}

sf::InstanceMaskSet halves(std::uint32_t h, std::uint32_t w) {
    sf::InstanceMaskSet m;
    m.height = h;
    m.width = w;
    m.m = 2;
    m.ids.resize(std::size_t{h} * w);
    for (std::uint32_t r = 0; r < h; ++r)
        for (std::uint32_t c = 0; c < w; ++c)
            m.ids[r * w + c] = c < w / 2 ? 1 : 2;
    return m;
}

} // namespace

TEST(Photometric, IdenticalImagesGiveZero) {
    const auto a = random_map(5, 6, 3, 1);
    const auto l = sf::photometric(a, a);
    EXPECT_EQ(l.value, 0.0);
    for (double g : l.grad.data)
        EXPECT_EQ(g, 0.0);
}

TEST(Photometric, ZeroVersusOneIsOne) {
    const sf::FeatureMap a(4, 4, 3, 0.0), b(4, 4, 3, 1.0);
    EXPECT_DOUBLE_EQ(sf::photometric(a, b).value, 1.0);
}

TEST(Photometric, ShapeMismatchRejected) {
    EXPECT_THROW(sf::photometric(sf::FeatureMap(2, 2, 3), sf::FeatureMap(2, 3, 3)), sf::ValidationError);
}

TEST(Photometric, GradientMatchesFiniteDifferences) {
    const auto target = random_map(6, 5, 3, 2);
    const auto start = random_map(6, 5, 3, 3);
    sf::FdFunction f;
    f.value = [&](std::span<const double> x) {
        sf::FeatureMap m = target;
        m.data.assign(x.begin(), x.end());
        return sf::photometric(m, target).value;
    };
    f.gradient = [&](std::span<const double> x) {
        sf::FeatureMap m = target;
        m.data.assign(x.begin(), x.end());
        return sf::photometric(m, target).grad.data;
    };
    // Quadratic loss: central differences carry no truncation error, and a
    // wider step keeps roundoff below the tolerance on small entries.
    sf::FdOptions o;
    o.h = 1e-3;
    EXPECT_LE(sf::fdcheck(f, start.data, o).max_rel_error, 1e-6);
}

TEST(Semantic, IdenticalIsZeroAndHalfVersusZeroIsQuarter) {
    const auto a = random_map(4, 4, 16, 4);
    EXPECT_EQ(sf::semantic(a, a).value, 0.0);
    EXPECT_DOUBLE_EQ(sf::semantic(sf::FeatureMap(4, 4, 16, 0.5), sf::FeatureMap(4, 4, 16, 0.0)).value, 0.25);
}

TEST(Semantic, GradientMatchesFiniteDifferences) {
    const auto target = random_map(8, 8, 16, 5);
    const auto start = random_map(8, 8, 16, 6);
    sf::FdFunction f;
    f.value = [&](std::span<const double> x) {
        sf::FeatureMap m = target;
        m.data.assign(x.begin(), x.end());
        return sf::semantic(m, target).value;
    };
    f.gradient = [&](std::span<const double> x) {
        sf::FeatureMap m = target;
        m.data.assign(x.begin(), x.end());
        return sf::semantic(m, target).grad.data;
    };
    sf::FdOptions o;
    o.h = 1e-3;
    EXPECT_LE(sf::fdcheck(f, start.data, o).max_rel_error, 1e-6);
}

TEST(ContrastiveExact, OrthogonalInstancesGiveOne) {
    const auto m = halves(4, 6);
    const auto f = class_features(m, 4, 0.0, 0);
    const auto r = sf::contrastive_exact(f, m);
    EXPECT_EQ(r.intra, 0.0);
    EXPECT_EQ(r.inter, 1.0);
    EXPECT_EQ(r.value, 1.0);
}

TEST(ContrastiveExact, SingleInstanceIdenticalFeaturesGiveZero) {
    auto m = random_masks(5, 5, 1, 0);
    const auto f = class_features(m, 3, 0.0, 0);
    EXPECT_EQ(sf::contrastive_exact(f, m).value, 0.0);
}

TEST(ContrastiveExact, MatchesDoubleLoopReference) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = random_masks(8, 8, 3, seed, true);
        const auto f = random_map(8, 8, 6, seed + 100, -1.0, 1.0);
        EXPECT_NEAR(sf::contrastive_exact(f, m).value, naive_contrastive(f, m), 1e-10) << "seed " << seed;
    }
}

TEST(ContrastiveExact, InvariantToPixelPermutation) {
    const auto m = random_masks(6, 6, 3, 7);
    const auto f = random_map(6, 6, 5, 8, -1.0, 1.0);
    std::vector<std::size_t> perm(f.pixels());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(1);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto pm = m;
    auto pf = f;
    for (std::size_t p = 0; p < perm.size(); ++p) {
        pm.ids[p] = m.ids[perm[p]];
        std::copy(f.pixel(perm[p]).begin(), f.pixel(perm[p]).end(), pf.pixel(p).begin());
    }
    EXPECT_NEAR(sf::contrastive_exact(f, m).value, sf::contrastive_exact(pf, pm).value, 1e-12);
}

TEST(Contrastive, InvariantToPositiveScaling) {
    const auto m = random_masks(6, 6, 3, 9);
    const auto f = random_map(6, 6, 5, 10, -1.0, 1.0);
    auto scaled = f;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> s(0.1, 10.0);
    for (std::size_t p = 0; p < scaled.pixels(); ++p) {
        const double k = s(rng);
        for (double& x : scaled.pixel(p))
            x *= k;
    }
    EXPECT_NEAR(sf::contrastive_exact(f, m).value, sf::contrastive_exact(scaled, m).value, 1e-12);
    EXPECT_NEAR(sf::contrastive_linear(f, m, 4).value, sf::contrastive_linear(scaled, m, 4).value, 1e-12);
}

TEST(Contrastive, InterTermInRange) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = random_masks(6, 6, 4, seed);
        const auto f = random_map(6, 6, 3, seed, -1.0, 1.0);
        const auto r = sf::contrastive_exact(f, m);
        EXPECT_GE(r.intra, 0.0);
        EXPECT_GE(r.inter, 0.0);
        EXPECT_LE(r.inter, 2.0);
    }
}

TEST(Contrastive, NoInstancePixelsRejected) {
    sf::InstanceMaskSet m;
    m.height = m.width = 3;
    m.ids.assign(9, 0);
    EXPECT_THROW(sf::contrastive_exact(sf::FeatureMap(3, 3, 4, 1.0), m), sf::ValidationError);
}

TEST(ContrastiveLinear, EqualsExactOnNoiselessFeatures) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::uint32_t inst = 2 + seed % 4;
        const auto m = random_masks(16, 16, inst, seed);
        const auto f = class_features(m, 8, 0.0, seed, 1.0 + 0.25 * seed);
        const double exact = sf::contrastive_exact(f, m).value;
        EXPECT_EQ(sf::contrastive_linear(f, m, seed).value, exact);
        EXPECT_EQ(exact, 1.0);
    }
}

TEST(ContrastiveLinear, DeterministicInSeed) {
    const auto m = random_masks(8, 8, 3, 1);
    const auto f = random_map(8, 8, 4, 2, -1.0, 1.0);
    EXPECT_EQ(sf::contrastive_linear(f, m, 5).value, sf::contrastive_linear(f, m, 5).value);
    EXPECT_NE(sf::contrastive_linear(f, m, 5).value, sf::contrastive_linear(f, m, 6).value);
}

TEST(ContrastiveLinear, PartnersAreSameInstanceDerangements) {
    const auto m = random_masks(10, 10, 4, 3, true);
    const auto partner = sf::shuffle_partners(m, 11);
    for (std::size_t p = 0; p < partner.size(); ++p) {
        if (m.ids[p] == 0) {
            EXPECT_EQ(partner[p], SIZE_MAX);
            continue;
        }
        ASSERT_NE(partner[p], SIZE_MAX);
        EXPECT_NE(partner[p], p);
        EXPECT_EQ(m.ids[partner[p]], m.ids[p]);
    }
    // Each instance's partner map is a permutation.
    auto sorted = partner;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end(),
                                 [](std::size_t a, std::size_t b) { return a == b && a != SIZE_MAX; }),
              sorted.end());
}

TEST(ContrastiveLinear, CloseToExactUnderSmallNoise) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto m = random_masks(16, 16, 4, seed);
        const auto f = class_features(m, 8, 0.05, seed);
        const double exact = sf::contrastive_exact(f, m).value;
        total += std::abs(sf::contrastive_linear(f, m, seed).value - exact) / exact;
    }
    EXPECT_LE(total / 100.0, 0.05);
}

TEST(ContrastiveLinear, GradientsMatchFiniteDifferences) {
    EXPECT_TRUE(sf::check_contrastive({}, sf::ContrastiveEstimator::linear).passed);
    EXPECT_TRUE(sf::check_contrastive({}, sf::ContrastiveEstimator::exact).passed);
}

TEST(Combine, WeightArithmetic) {
    const sf::LossWeights w;
    EXPECT_EQ(sf::combine({0, 0, 0, 0}, w), 0.0);
    EXPECT_EQ(sf::combine({1, 1, 1, 1}, w), 2.21);
    EXPECT_THROW(sf::check_weights({-1.0, 0.01, 0.2, 1.0}), sf::ValidationError);
}

TEST(Total, EstimatorSwapOnNoiselessFeaturesLeavesTotalUnchanged) {
    const auto masks = random_masks(8, 8, 3, 4, true);
    const auto inst = class_features(masks, 4, 0.0, 0);
    const auto rgb = random_map(8, 8, 3, 1);
    const auto rgb_t = random_map(8, 8, 3, 2);
    const auto sem = random_map(8, 8, 5, 3);
    const auto sem_t = random_map(8, 8, 5, 4);
    const std::vector<double> betas{0.2, 0.7, 0.9};
    const sf::ViewPrediction pred{&rgb, &inst, &sem};
    const sf::ViewTargets tgt{&rgb_t, &masks, &sem_t};
    sf::TotalOptions opts;
    opts.estimator = sf::ContrastiveEstimator::exact;
    const auto a = sf::total(std::span(&pred, 1), std::span(&tgt, 1), betas, opts);
    opts.estimator = sf::ContrastiveEstimator::linear;
    const auto b = sf::total(std::span(&pred, 1), std::span(&tgt, 1), betas, opts);
    EXPECT_EQ(a.value, b.value);
    EXPECT_NEAR(a.value,
                sf::combine({sf::photometric(rgb, rgb_t).value, sf::gate_loss(betas).value, 1.0,
                             sf::semantic(sem, sem_t).value},
                            opts.weights),
                1e-14);
}

TEST(Total, FullObjectiveGradientCheck) {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        sf::GradSuiteOptions o;
        o.seed = seed;
        const auto c = sf::check_total(o);
        EXPECT_TRUE(c.passed) << "seed " << seed << " max rel err " << c.report.max_rel_error;
    }
}
