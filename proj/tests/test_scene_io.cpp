#include "splatfield/errors.hpp"
#include "splatfield/gradsuite.hpp"
#include "splatfield/io.hpp"
#include "splatfield/scene.hpp"
#include "splatfield/synth.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

namespace sf = splatfield;
namespace fs = std::filesystem;

namespace {

sf::SceneBundle random_bundle(std::uint64_t seed, std::size_t n) {
    sf::Camera cam;
    auto b = sf::random_scene(seed, n, 16, cam);
    sf::quantize_to_float(b);
    b.provenance = "unit-test";
    return b;
}

fs::path temp_path(const std::string& name) {
    auto dir = fs::temp_directory_path() / "splatfield_unit";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

TEST(Validate, SyntheticBundleHasNoViolations) {
    sf::SynthSpec spec;
    spec.m_dim = 16;
    const auto scene = sf::synth_scene(spec);
    EXPECT_TRUE(sf::validate_bundle(scene.bundle).empty());
}

TEST(Validate, ZeroScaleNamesThePrimitive) {
    auto b = random_bundle(3, 10);
    b.fine[4].scale[1] = 0.0;
    const auto v = sf::validate_bundle(b);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].field, sf::FieldKind::fine);
    EXPECT_EQ(v[0].index, 4u);
    EXPECT_EQ(v[0].member, "scale");
}

TEST(Validate, ShortInstanceFeatureIsOneDimensionReport) {
    sf::SynthSpec spec;
    spec.m_dim = 16;
    auto b = sf::synth_scene(spec).bundle;
    ASSERT_EQ(b.dims.n_dim, 8u);
    b.fine[7].f_inst.resize(7);
    const auto v = sf::validate_bundle(b);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].index, 7u);
    EXPECT_EQ(v[0].member, "f_inst");
}

TEST(Validate, BetaOutsideUnitIntervalIsReported) {
    auto b = random_bundle(4, 6);
    b.fine[2].beta = 1.5;
    b.coarse[0].alpha = -0.1;
    EXPECT_EQ(sf::validate_bundle(b).size(), 2u);
}

TEST(Validate, RenormalizeFixesQuaternions) {
    auto b = random_bundle(5, 6);
    b.fine[0].rot = {2.0, 0.0, 0.0, 0.0};
    b.fine[1].rot = {0.0, 0.0, 0.0, 0.0};
    sf::renormalize_rotations(b);
    EXPECT_DOUBLE_EQ(b.fine[0].rot[0], 1.0);
    EXPECT_DOUBLE_EQ(b.fine[1].rot[0], 1.0);
}

TEST(Bundle, RoundTripIsByteIdentical) {
    const auto b = random_bundle(11, 100);
    const auto bytes = sf::encode_bundle(b);
    const auto back = sf::decode_bundle(bytes);
    EXPECT_EQ(back, b);
    EXPECT_EQ(sf::encode_bundle(back), bytes);
}

TEST(Bundle, SaveAndLoadThroughFile) {
    const auto b = random_bundle(12, 30);
    const auto path = temp_path("rt.spsc");
    sf::save_bundle(b, path);
    EXPECT_EQ(sf::load_bundle(path), b);
}

TEST(Bundle, BadMagic) {
    auto bytes = sf::encode_bundle(random_bundle(13, 5));
    bytes[0] = 'X';
    bytes[1] = 'X';
    bytes[2] = 'X';
    bytes[3] = 'X';
    try {
        sf::decode_bundle(bytes);
        FAIL() << "expected FormatError";
    } catch (const sf::FormatError& e) {
        EXPECT_EQ(e.kind(), sf::FormatError::Kind::bad_magic);
    }
}

TEST(Bundle, TruncationReportsOffset) {
    auto bytes = sf::encode_bundle(random_bundle(14, 20));
    bytes.resize(bytes.size() / 2);
    try {
        sf::decode_bundle(bytes);
        FAIL() << "expected FormatError";
    } catch (const sf::FormatError& e) {
        EXPECT_EQ(e.kind(), sf::FormatError::Kind::truncated);
        EXPECT_GT(e.offset(), 0u);
        EXPECT_LE(e.offset(), bytes.size());
        EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
}

TEST(Bundle, EveryPrefixFailsCleanly) {
    const auto bytes = sf::encode_bundle(random_bundle(15, 3));
    for (std::size_t len = 0; len < bytes.size(); ++len) {
        std::span<const std::uint8_t> prefix(bytes.data(), len);
        EXPECT_THROW(sf::decode_bundle(prefix), sf::FormatError) << "prefix length " << len;
    }
}

TEST(Bundle, ZeroDownsampleIsBadCounts) {
    auto bytes = sf::encode_bundle(random_bundle(16, 3));
    // Header: magic, version, views, height, width, downsample.
    for (int i = 0; i < 4; ++i)
        bytes[20 + i] = 0;
    try {
        sf::decode_bundle(bytes);
        FAIL() << "expected FormatError";
    } catch (const sf::FormatError& e) {
        EXPECT_EQ(e.kind(), sf::FormatError::Kind::bad_counts);
    }
}

TEST(Bundle, UnknownVersion) {
    auto bytes = sf::encode_bundle(random_bundle(17, 3));
    bytes[4] = 9;
    try {
        sf::decode_bundle(bytes);
        FAIL() << "expected FormatError";
    } catch (const sf::FormatError& e) {
        EXPECT_EQ(e.kind(), sf::FormatError::Kind::bad_version);
    }
}

TEST(Bundle, MissingFileIsIoError) {
    EXPECT_THROW(sf::load_bundle(temp_path("does_not_exist.spsc")), sf::IoError);
}

TEST(Masks, RoundTripAndStrictness) {
    auto m = sf::testing::random_masks(5, 7, 3, 2, true);
    EXPECT_EQ(sf::decode_masks(sf::encode_masks(m)), m);

    // A label image that skips id 2 is rejected in strict mode only.
    sf::InstanceMaskSet gap = m;
    for (auto& id : gap.ids)
        if (id == 2)
            id = 1;
    const auto bytes = sf::encode_masks(gap);
    EXPECT_THROW(sf::decode_masks(bytes, true), sf::Error);
    EXPECT_EQ(sf::decode_masks(bytes, false), gap);
}

TEST(Masks, BadMagicAndTruncation) {
    auto bytes = sf::encode_masks(sf::testing::random_masks(4, 4, 2, 1));
    auto bad = bytes;
    bad[0] = 'Z';
    EXPECT_THROW(sf::decode_masks(bad), sf::FormatError);
    bytes.pop_back();
    EXPECT_THROW(sf::decode_masks(bytes), sf::FormatError);
}

TEST(FeatureMaps, RoundTripOfFloatValues) {
    auto m = sf::testing::random_map(3, 4, 5, 7, -2.0, 2.0);
    for (double& x : m.data)
        x = static_cast<float>(x);
    EXPECT_EQ(sf::decode_feature_map(sf::encode_feature_map(m)), m);
}

TEST(Ppm, SaveLoadQuantizesToEightBits) {
    const auto m = sf::testing::random_map(6, 5, 3, 8);
    const auto path = temp_path("img.ppm");
    sf::save_ppm(m, path);
    const auto back = sf::load_ppm(path);
    ASSERT_TRUE(back.same_shape(m));
    for (std::size_t i = 0; i < m.size(); ++i)
        EXPECT_NEAR(back.data[i], m.data[i], 0.5 / 255.0 + 1e-12);
}

TEST(Cameras, JsonRoundTrip) {
    sf::Camera cam = sf::testing::axis_camera(40, 30, 35.5);
    cam.t = {0.25, -1.0, 2.0};
    cam.R = {0, -1, 0, 1, 0, 0, 0, 0, 1};
    EXPECT_EQ(sf::camera_from_json(sf::camera_to_json(cam)), cam);

    const auto path = temp_path("cams.json");
    std::vector<sf::Camera> cams{cam, sf::testing::axis_camera(8, 8, 8)};
    sf::save_cameras(cams, path);
    EXPECT_EQ(sf::load_cameras(path), cams);
}

TEST(Cameras, MissingFieldIsRejected) {
    EXPECT_THROW(sf::camera_from_json(R"({"fx": 1, "fy": 1})"), sf::Error);
}

TEST(Synth, CountsForTheDefaultTwoViewScene) {
    sf::SynthSpec spec;
    spec.seed = 1;
    const auto s = sf::synth_scene(spec);
    EXPECT_EQ(s.bundle.fine.size(), 2048u);
    EXPECT_EQ(s.bundle.coarse.size(), 32u);
    ASSERT_EQ(s.masks.size(), 2u);
    EXPECT_EQ(s.masks[0].m, 3u);
    EXPECT_EQ(s.redundant.size(), s.bundle.fine.size());
}

TEST(Synth, IsDeterministic) {
    sf::SynthSpec spec;
    spec.m_dim = 16;
    spec.noise = 0.05;
    const auto a = sf::synth_scene(spec);
    const auto b = sf::synth_scene(spec);
    EXPECT_EQ(a.bundle, b.bundle);
    EXPECT_EQ(a.masks, b.masks);
    EXPECT_EQ(sf::encode_bundle(a.bundle), sf::encode_bundle(b.bundle));
}

TEST(Synth, NoOverlapMeansNoDuplicates) {
    sf::SynthSpec spec;
    spec.overlap = 0.0;
    spec.m_dim = 16;
    const auto s = sf::synth_scene(spec);
    for (auto r : s.redundant)
        EXPECT_EQ(r, 0);
    std::set<std::array<double, 3>> centers;
    for (const auto& g : s.bundle.fine)
        centers.insert(g.mu);
    EXPECT_EQ(centers.size(), s.bundle.fine.size());
}

TEST(Synth, HalfOverlapMarksDuplicates) {
    sf::SynthSpec spec;
    spec.m_dim = 16;
    const auto s = sf::synth_scene(spec);
    std::size_t dup = 0;
    for (auto r : s.redundant)
        dup += r != 0;
    // The second view repeats half of the first view's columns.
    EXPECT_EQ(dup, 512u);
}

TEST(Synth, RedundancyLabelsSurviveSerialization) {
    sf::SynthSpec spec;
    spec.m_dim = 16;
    const auto s = sf::synth_scene(spec);
    const auto back = sf::decode_bundle(sf::encode_bundle(s.bundle));
    const auto labels = sf::redundancy_labels(back);
    ASSERT_TRUE(labels.has_value());
    EXPECT_EQ(*labels, s.redundant);
}

TEST(Synth, RejectsBadSpec) {
    sf::SynthSpec spec;
    spec.overlap = 1.5;
    EXPECT_THROW(sf::synth_scene(spec), sf::ValidationError);
    spec = {};
    spec.height = 30;  // not a multiple of the downsample ratio
    EXPECT_THROW(sf::synth_scene(spec), sf::ValidationError);
}
