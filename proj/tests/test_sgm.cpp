#include "splatfield/errors.hpp"
#include "splatfield/gradsuite.hpp"
#include "splatfield/optim.hpp"
#include "splatfield/raster.hpp"
#include "splatfield/sgm.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace sf = splatfield;

TEST(Gate, UpperBranchPassesThrough) { EXPECT_DOUBLE_EQ(sf::gate(0.7, {}), 0.7); }

TEST(Gate, LowerBranchIsScaledByLeak) { EXPECT_NEAR(sf::gate(0.3, {}), 0.0003, 1e-18); }

TEST(Gate, ThresholdItselfTakesLowerBranch) {
    EXPECT_NEAR(sf::gate(0.5, {}), 0.0005, 1e-18);
    EXPECT_DOUBLE_EQ(sf::gate_derivative(0.5, {}), 1e-3);
}

TEST(Gate, MonotoneWithOneBreakpoint) {
    sf::GateConfig cfg;
    double prev = -1.0;
    int slope_changes = 0;
    double prev_slope = sf::gate_derivative(0.0, cfg);
    for (int i = 0; i <= 1000; ++i) {
        const double b = i / 1000.0;
        const double g = sf::gate(b, cfg);
        EXPECT_GE(g, prev);
        prev = g;
        const double s = sf::gate_derivative(b, cfg);
        if (s != prev_slope)
            ++slope_changes;
        prev_slope = s;
    }
    EXPECT_EQ(slope_changes, 1);
}

TEST(Gate, ConfigRangeChecks) {
    EXPECT_NO_THROW(sf::check_gate_config({}));
    EXPECT_THROW(sf::check_gate_config({1.5, 1e-3}), sf::ValidationError);
    EXPECT_THROW(sf::check_gate_config({0.5, 0.0}), sf::ValidationError);
}

TEST(GateLoss, SaturatedHigh) {
    const std::vector<double> b(10, 1.0 - 1e-9);
    const auto l = sf::gate_loss(b);
    EXPECT_NEAR(l.bce, 0.0, 1e-6);
    EXPECT_NEAR(l.regularizer, 1.0, 1e-6);
    EXPECT_NEAR(l.value, 1.0, 1e-6);
}

TEST(GateLoss, SaturatedLow) {
    const std::vector<double> b(10, 1e-9);
    const auto l = sf::gate_loss(b);
    EXPECT_NEAR(l.bce, 0.0, 1e-6);
    EXPECT_NEAR(l.regularizer, 0.0, 1e-6);
    EXPECT_NEAR(l.value, 0.0, 1e-6);
}

TEST(GateLoss, HandEvaluatedPair) {
    const std::vector<double> b{0.6, 0.4};
    const auto l = sf::gate_loss(b);
    EXPECT_NEAR(l.value, (-std::log(0.6) - std::log(0.6)) / 2.0 + 0.5, 1e-12);
    EXPECT_NEAR(l.regularizer, 0.5, 1e-15);
}

TEST(GateLoss, EmptyInputRejected) { EXPECT_THROW(sf::gate_loss({}), sf::ValidationError); }

TEST(GateLoss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.02, 0.98);
    std::vector<double> b(40);
    for (double& x : b) {
        do
            x = u(rng);
        while (std::abs(x - 0.5) < 1e-3);
    }
    sf::FdFunction f;
    f.value = [](std::span<const double> x) { return sf::gate_loss(x).value; };
    f.gradient = [](std::span<const double> x) { return sf::gate_loss(x).grad; };
    const auto rep = sf::fdcheck(f, b);
    EXPECT_LE(rep.max_rel_error, 1e-6);
}

TEST(GateLoss, StraddlingThresholdIsExcludedBySuite) {
    const auto c = sf::check_gate_loss({});
    EXPECT_TRUE(c.passed);
    EXPECT_EQ(c.report.excluded, 2u);
}

namespace {

sf::SceneBundle scene_with_betas(std::uint64_t seed, std::size_t n, sf::Camera& cam) {
    auto b = sf::random_scene(seed, n, 16, cam);
    return b;
}

} // namespace

TEST(Prune, AllOnesKeepsEverything) {
    sf::Camera cam;
    auto b = scene_with_betas(1, 20, cam);
    for (auto& g : b.fine)
        g.beta = 1.0;
    const auto r = sf::prune(b, {});
    EXPECT_EQ(r.report.fine_discarded, 0u);
    EXPECT_EQ(r.bundle, b);
}

TEST(Prune, AllZerosEmptiesFineField) {
    sf::Camera cam;
    auto b = scene_with_betas(2, 20, cam);
    for (auto& g : b.fine)
        g.beta = 0.0;
    const auto r = sf::prune(b, {});
    EXPECT_TRUE(r.bundle.fine.empty());
    EXPECT_EQ(r.report.fine_discarded, 20u);
    EXPECT_EQ(r.bundle.coarse, b.coarse);
}

TEST(Prune, SurvivorsAreUnchanged) {
    sf::Camera cam;
    const auto b = scene_with_betas(3, 30, cam);
    const auto r = sf::prune(b, {});
    ASSERT_EQ(r.bundle.fine.size(), r.report.kept_fine_indices.size());
    for (std::size_t k = 0; k < r.bundle.fine.size(); ++k) {
        const auto src = r.report.kept_fine_indices[k];
        EXPECT_EQ(r.bundle.fine[k], b.fine[src]);
        EXPECT_GT(b.fine[src].beta, 0.5);
    }
    for (std::size_t i = 0; i < b.fine.size(); ++i)
        if (b.fine[i].beta > 0.5)
            EXPECT_NE(std::find(r.report.kept_fine_indices.begin(), r.report.kept_fine_indices.end(), i),
                      r.report.kept_fine_indices.end());
}

TEST(Prune, ConfusionCounts) {
    sf::Camera cam;
    auto b = scene_with_betas(4, 6, cam);
    const double betas[] = {0.9, 0.1, 0.2, 0.8, 0.3, 0.7};
    for (std::size_t i = 0; i < 6; ++i)
        b.fine[i].beta = betas[i];
    const std::vector<std::uint8_t> redundant{0, 1, 1, 1, 0, 0};
    const auto r = sf::prune(b, {}, std::span<const std::uint8_t>(redundant));
    ASSERT_TRUE(r.report.confusion.has_value());
    const auto& c = *r.report.confusion;
    EXPECT_EQ(c.redundant_discarded, 2u);
    EXPECT_EQ(c.redundant_kept, 1u);
    EXPECT_EQ(c.needed_discarded, 1u);
    EXPECT_EQ(c.needed_kept, 2u);
    EXPECT_NEAR(c.redundant_recall(), 2.0 / 3.0, 1e-15);
}

TEST(Prune, CoarseFieldOnlyWhenRequested) {
    sf::Camera cam;
    auto b = scene_with_betas(5, 10, cam);
    for (auto& g : b.coarse)
        g.beta = 0.1;
    EXPECT_EQ(sf::prune(b, {}).bundle.coarse.size(), b.coarse.size());
    sf::GateConfig cfg;
    cfg.prune_coarse = true;
    EXPECT_TRUE(sf::prune(b, cfg).bundle.coarse.empty());
}

TEST(Prune, SaturatedScoresRenderLikeTheGatedScene) {
    sf::Camera cam;
    auto b = sf::random_scene(6, 40, 20, cam);
    std::mt19937_64 rng(9);
    std::bernoulli_distribution coin(0.5);
    const double eps = 1e-4;
    for (auto& g : b.fine)
        g.beta = coin(rng) ? 1.0 - eps : eps;
    sf::RenderOptions leaky;
    leaky.gate_mode = sf::GateMode::leaky;
    const auto full = sf::render(b, cam, leaky).output;
    const auto pruned_bundle = sf::prune(b, {}).bundle;
    for (auto mode : {sf::GateMode::leaky, sf::GateMode::identity}) {
        sf::RenderOptions o;
        o.gate_mode = mode;
        const auto pruned = sf::render(pruned_bundle, cam, o).output;
        for (std::size_t i = 0; i < full.rgb.size(); ++i)
            EXPECT_LE(std::abs(full.rgb.data[i] - pruned.rgb.data[i]), 1e-3);
    }
}
