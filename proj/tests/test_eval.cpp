#include "splatfield/errors.hpp"
#include "splatfield/eval.hpp"
#include "splatfield/synth.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

namespace sf = splatfield;
using sf::testing::random_map;

namespace {

double naive_ssim(const sf::FeatureMap& a, const sf::FeatureMap& b) {
    const int W = 11, H = static_cast<int>(a.height), Wd = static_cast<int>(a.width);
    double win[W][W], total = 0;
    for (int i = 0; i < W; ++i)
        for (int j = 0; j < W; ++j) {
            const double di = i - 5, dj = j - 5;
            win[i][j] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
            total += win[i][j];
        }
    auto gray = [](const sf::FeatureMap& m, int r, int c) {
        double s = 0;
        for (std::uint32_t ch = 0; ch < m.channels; ++ch)
            s += m.at(r, c, ch);
        return s / m.channels;
    };
    double sum = 0;
    int count = 0;
    for (int r = 0; r + W <= H; ++r)
        for (int c = 0; c + W <= Wd; ++c) {
            double mx = 0, my = 0;
            for (int i = 0; i < W; ++i)
                for (int j = 0; j < W; ++j) {
                    mx += win[i][j] / total * gray(a, r + i, c + j);
                    my += win[i][j] / total * gray(b, r + i, c + j);
                }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < W; ++i)
                for (int j = 0; j < W; ++j) {
                    const double w = win[i][j] / total;
                    const double dx = gray(a, r + i, c + j) - mx, dy = gray(b, r + i, c + j) - my;
                    vx += w * dx * dx;
                    vy += w * dy * dy;
                    cxy += w * dx * dy;
                }
            const double C1 = 1e-4, C2 = 9e-4;
            sum += (2 * mx * my + C1) * (2 * cxy + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
            ++count;
        }
    return sum / count;
}

sf::InstanceMaskSet label_image(std::uint32_t h, std::uint32_t w, std::uint32_t classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
    sf::InstanceMaskSet m;
    m.height = h;
    m.width = w;
    m.m = classes - 1;
    m.ids.resize(std::size_t{h} * w);
    for (auto& id : m.ids)
        id = static_cast<std::uint16_t>(pick(rng));
    return m;
}

} // namespace

TEST(Psnr, IdenticalImagesHitTheCap) {
    const auto a = random_map(8, 8, 3, 1);
    EXPECT_EQ(sf::psnr(a, a), sf::kPsnrCap);
}

TEST(Psnr, ZeroVersusHalf) {
    EXPECT_NEAR(sf::psnr(sf::FeatureMap(4, 4, 3, 0.0), sf::FeatureMap(4, 4, 3, 0.5)), 6.020599913279624, 1e-12);
}

TEST(Psnr, MatchesDirectFormulaAndIsSymmetric) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto a = random_map(9, 7, 3, seed), b = random_map(9, 7, 3, seed + 50);
        double se = 0;
        for (std::size_t i = 0; i < a.size(); ++i)
            se += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
        const double expect = -10.0 * std::log10(se / a.size());
        EXPECT_NEAR(sf::psnr(a, b), expect, 1e-9);
        EXPECT_EQ(sf::psnr(a, b), sf::psnr(b, a));
    }
}

TEST(Psnr, ShapeMismatchRejected) {
    EXPECT_THROW(sf::psnr(sf::FeatureMap(2, 2, 3), sf::FeatureMap(2, 2, 1)), sf::ValidationError);
}

TEST(Ssim, IdenticalIsOne) {
    const auto a = random_map(20, 17, 3, 2);
    EXPECT_NEAR(sf::ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, NegativeImageScoresBelowOne) {
    const auto a = random_map(16, 16, 1, 3);
    auto neg = a;
    for (double& x : neg.data)
        x = 1.0 - x;
    EXPECT_LT(sf::ssim(a, neg), 1.0);
}

TEST(Ssim, CheckerboardVersusBlurMatchesBruteForce) {
    sf::FeatureMap board(24, 26, 3), blur(24, 26, 3);
    for (std::uint32_t r = 0; r < 24; ++r)
        for (std::uint32_t c = 0; c < 26; ++c)
            for (std::uint32_t ch = 0; ch < 3; ++ch)
                board.at(r, c, ch) = ((r / 3 + c / 3) % 2) ? 0.9 : 0.1;
    for (std::uint32_t r = 0; r < 24; ++r)
        for (std::uint32_t c = 0; c < 26; ++c)
            for (std::uint32_t ch = 0; ch < 3; ++ch) {
                double s = 0;
                int n = 0;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = static_cast<int>(r) + dr, cc = static_cast<int>(c) + dc;
                        if (rr < 0 || cc < 0 || rr >= 24 || cc >= 26)
                            continue;
                        s += board.at(rr, cc, ch);
                        ++n;
                    }
                blur.at(r, c, ch) = s / n;
            }
    const double v = sf::ssim(board, blur);
    EXPECT_LT(v, 1.0);
    EXPECT_NEAR(v, naive_ssim(board, blur), 1e-6);
}

TEST(Ssim, TooSmallImageRejected) {
    EXPECT_THROW(sf::ssim(sf::FeatureMap(8, 8, 3), sf::FeatureMap(8, 8, 3)), sf::ValidationError);
}

TEST(Segmentation, PerfectPrediction) {
    const auto gt = label_image(10, 10, 4, 1);
    const auto m = sf::seg_metrics(gt, gt, 4);
    EXPECT_EQ(m.miou, 1.0);
    EXPECT_EQ(m.accuracy, 1.0);
}

TEST(Segmentation, ComplementOfBinaryMask) {
    auto gt = label_image(10, 10, 2, 2);
    auto pred = gt;
    for (auto& id : pred.ids)
        id = 1 - id;
    const auto m = sf::seg_metrics(pred, gt, 2);
    EXPECT_EQ(m.miou, 0.0);
    EXPECT_EQ(m.accuracy, 0.0);
}

TEST(Segmentation, MatchesConfusionMatrixReference) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::uint32_t K = 5;
        const auto gt = label_image(16, 16, K, seed);
        const auto pred = label_image(16, 16, K, seed + 1000);
        std::vector<std::uint8_t> valid(gt.ids.size());
        std::mt19937_64 rng(seed);
        for (auto& v : valid)
            v = rng() % 4 != 0;
        std::vector<std::vector<double>> cm(K, std::vector<double>(K, 0.0));
        double n = 0;
        for (std::size_t p = 0; p < gt.ids.size(); ++p)
            if (valid[p]) {
                cm[gt.ids[p]][pred.ids[p]] += 1;
                n += 1;
            }
        double diag = 0, iou_sum = 0, present = 0;
        for (std::uint32_t k = 0; k < K; ++k) {
            double row = 0, col = 0;
            for (std::uint32_t j = 0; j < K; ++j) {
                row += cm[k][j];
                col += cm[j][k];
            }
            diag += cm[k][k];
            if (row > 0) {
                iou_sum += cm[k][k] / (row + col - cm[k][k]);
                present += 1;
            }
        }
        const auto m = sf::seg_metrics(pred, gt, K, valid);
        EXPECT_NEAR(m.accuracy, diag / n, 1e-12);
        EXPECT_NEAR(m.miou, iou_sum / present, 1e-12);
        EXPECT_GE(m.miou, 0.0);
        EXPECT_LE(m.miou, 1.0);
    }
}

TEST(Segmentation, IdOutOfRangeRejected) {
    const auto gt = label_image(4, 4, 3, 1);
    EXPECT_THROW(sf::seg_metrics(gt, gt, 2), sf::ValidationError);
}

TEST(Ari, KnownValues) {
    const std::vector<std::int64_t> a{0, 0, 1, 1, 2, 2};
    const std::vector<std::int64_t> relabeled{5, 5, 3, 3, 9, 9};
    EXPECT_DOUBLE_EQ(sf::adjusted_rand_index(a, relabeled), 1.0);
    // No pair agrees: index 0, expected index 9/15, maximum 3.
    const std::vector<std::int64_t> b{0, 1, 0, 2, 1, 2};
    EXPECT_NEAR(sf::adjusted_rand_index(a, b), -0.25, 1e-12);
}

TEST(Accounting, PixelwiseTwoViewBaseline) {
    sf::SceneDims d;
    d.views = 2;
    d.height = d.width = 256;
    d.downsample = 8;
    d.n_dim = 8;
    d.m_dim = 512;
    d.sh_degree = 3;
    const auto r = sf::account_counts(d.pixelwise_fine_count(), d.pixelwise_coarse_count(), d);
    EXPECT_EQ(r.pixelwise_count, 131072u);
    EXPECT_EQ(r.scalars_geometry, 59u);
    EXPECT_EQ(r.baseline_plain_bytes, 131072u * 59u * 4u);
    EXPECT_NEAR(r.baseline_plain_bytes / sf::kBytesPerMB, 30.93, 0.01);
}

TEST(Accounting, DualFieldAtPublishedCounts) {
    sf::SceneDims d;
    d.views = 2;
    d.height = d.width = 256;
    d.downsample = 8;
    d.n_dim = 8;
    d.m_dim = 512;
    d.sh_degree = 3;
    const auto r = sf::account_counts(87700, 2048, d);
    EXPECT_EQ(r.bytes_fine, 87700u * (59u + 8u) * 4u);
    EXPECT_EQ(r.bytes_coarse, 2048u * (59u + 512u) * 4u);
    EXPECT_LE(std::abs(r.bytes_total / sf::kBytesPerMB - 25.58) / 25.58, 0.15);
    EXPECT_LT(r.bytes_total, r.single_field_bytes);
}

TEST(Accounting, LinearInFineCount) {
    sf::SceneDims d;
    const auto a = sf::account_counts(1000, 10, d);
    const auto b = sf::account_counts(2000, 10, d);
    EXPECT_EQ(b.bytes_fine, 2 * a.bytes_fine);
    EXPECT_EQ(b.bytes_coarse, a.bytes_coarse);
}

TEST(Accounting, BetaFlagAddsOneScalar) {
    sf::SceneDims d;
    sf::StorageLayout with;
    with.include_beta = true;
    const auto a = sf::account_counts(10, 0, d);
    const auto b = sf::account_counts(10, 0, d, with);
    EXPECT_EQ(b.scalars_per_fine, a.scalars_per_fine + 1);
}

TEST(Accounting, BundleMatchesCounts) {
    sf::SynthSpec s;
    s.m_dim = 16;
    s.sh_degree = 3;
    const auto scene = sf::synth_scene(s);
    sf::StorageLayout layout;
    const auto a = sf::account(scene.bundle, layout);
    const auto b = sf::account_counts(scene.bundle.fine.size(), scene.bundle.coarse.size(), scene.bundle.dims, layout);
    EXPECT_EQ(a.bytes_total, b.bytes_total);
    EXPECT_LT(a.bytes_total, a.single_field_bytes);
}
