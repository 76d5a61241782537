#include "splatfield/io.hpp"

#include "splatfield/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace splatfield {

namespace {

    constexpr std::array<std::uint8_t, 4> kBundleMagic{'S', 'P', 'S', 'C'};
    constexpr std::array<std::uint8_t, 4> kMaskMagic{'S', 'P', 'M', 'K'};
    constexpr std::array<std::uint8_t, 4> kFeatureMagic{'S', 'P', 'F', 'M'};

    class ByteWriter {
    public:
        void magic(const std::array<std::uint8_t, 4>& m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
        void u16(std::uint16_t v) {
            bytes_.push_back(static_cast<std::uint8_t>(v & 0xff));
            bytes_.push_back(static_cast<std::uint8_t>(v >> 8));
        }
        void u32(std::uint32_t v) {
            for (int i = 0; i < 4; ++i)
                bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
        }
        void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
        void f32s(std::span<const double> v) {
            for (double x : v)
                f32(x);
        }
        void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
        std::vector<std::uint8_t> take() { return std::move(bytes_); }

    private:
        std::vector<std::uint8_t> bytes_;
    };

    class ByteReader {
    public:
        ByteReader(std::span<const std::uint8_t> b, const char* what) : bytes_(b), what_(what) {}

        std::size_t offset() const { return pos_; }
        std::size_t remaining() const { return bytes_.size() - pos_; }

        void need(std::size_t n) const {
            if (remaining() < n)
                throw FormatError(FormatError::Kind::truncated, pos_,
                                  fmt::format("{}: truncated at byte offset {} (needed {} more bytes, {} left)",
                                              what_, pos_, n, remaining()));
        }
        void magic(const std::array<std::uint8_t, 4>& m) {
            need(4);
            if (!std::equal(m.begin(), m.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_)))
                throw FormatError(FormatError::Kind::bad_magic, 0,
                                  fmt::format("{}: bad magic, expected '{}{}{}{}'", what_, char(m[0]), char(m[1]),
                                              char(m[2]), char(m[3])));
            pos_ += 4;
        }
        std::uint16_t u16() {
            need(2);
            const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
            pos_ += 2;
            return v;
        }
        std::uint32_t u32() {
            need(4);
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i)
                v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
            pos_ += 4;
            return v;
        }
        double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
        void f32s(std::span<double> out) {
            need(out.size() * 4);
            for (double& x : out)
                x = f32();
        }
        std::span<const std::uint8_t> raw(std::size_t n) {
            need(n);
            auto s = bytes_.subspan(pos_, n);
            pos_ += n;
            return s;
        }

    private:
        std::span<const std::uint8_t> bytes_;
        const char* what_;
        std::size_t pos_ = 0;
    };

    [[noreturn]] void bad_counts(std::size_t offset, const std::string& msg) {
        throw FormatError(FormatError::Kind::bad_counts, offset, msg);
    }

    void write_primitive(ByteWriter& w, const GaussianPrimitive& g, bool with_sem) {
        w.f32s(g.mu);
        w.f32(g.alpha);
        w.f32s(g.rot);
        w.f32s(g.scale);
        w.f32s(g.sh);
        w.f32(g.beta);
        w.f32s(g.f_inst);
        if (with_sem)
            w.f32s(*g.f_sem);
    }

    GaussianPrimitive read_primitive(ByteReader& r, const SceneDims& d, bool with_sem) {
        GaussianPrimitive g;
        r.f32s(g.mu);
        g.alpha = r.f32();
        r.f32s(g.rot);
        r.f32s(g.scale);
        g.sh.resize(sh_length(d.sh_degree));
        r.f32s(g.sh);
        g.beta = r.f32();
        g.f_inst.resize(d.n_dim);
        r.f32s(g.f_inst);
        if (with_sem) {
            g.f_sem.emplace(d.m_dim);
            r.f32s(*g.f_sem);
        }
        return g;
    }

    std::size_t primitive_scalars(const SceneDims& d, bool with_sem) {
        return 3 + 1 + 4 + 3 + sh_length(d.sh_degree) + 1 + d.n_dim + (with_sem ? d.m_dim : 0);
    }

    void check_writable_bundle(const SceneBundle& b) {
        const SceneDims& d = b.dims;
        auto check = [&](const GaussianPrimitive& g, bool coarse, std::size_t i) {
            if (g.sh.size() != sh_length(d.sh_degree) || g.f_inst.size() != d.n_dim ||
                (coarse && (!g.f_sem || g.f_sem->size() != d.m_dim)) || (!coarse && g.f_sem))
                throw ValidationError(fmt::format("cannot encode {}[{}]: member lengths disagree with the bundle dims",
                                                  coarse ? "coarse" : "fine", i));
        };
        for (std::size_t i = 0; i < b.fine.size(); ++i)
            check(b.fine[i], false, i);
        for (std::size_t i = 0; i < b.coarse.size(); ++i)
            check(b.coarse[i], true, i);
    }

} // namespace

std::vector<std::uint8_t> encode_bundle(const SceneBundle& bundle) {
    check_writable_bundle(bundle);
    const SceneDims& d = bundle.dims;
    ByteWriter w;
    w.magic(kBundleMagic);
    w.u32(kBundleVersion);
    for (std::uint32_t v : {d.views, d.height, d.width, d.downsample, d.n_dim, d.m_dim, d.sh_degree})
        w.u32(v);
    w.u32(static_cast<std::uint32_t>(bundle.fine.size()));
    w.u32(static_cast<std::uint32_t>(bundle.coarse.size()));
    for (const auto& g : bundle.fine)
        write_primitive(w, g, false);
    for (const auto& g : bundle.coarse)
        write_primitive(w, g, true);
    w.u32(static_cast<std::uint32_t>(bundle.provenance.size()));
    w.raw({reinterpret_cast<const std::uint8_t*>(bundle.provenance.data()), bundle.provenance.size()});
    return w.take();
}

SceneBundle decode_bundle(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "SPSC");
    r.magic(kBundleMagic);
    const std::size_t version_at = r.offset();
    const std::uint32_t version = r.u32();
    if (version != kBundleVersion)
        throw FormatError(FormatError::Kind::bad_version, version_at,
                          fmt::format("SPSC: unsupported version {} (expected {})", version, kBundleVersion));

    SceneBundle b;
    SceneDims& d = b.dims;
    const std::size_t header_at = r.offset();
    d.views = r.u32();
    d.height = r.u32();
    d.width = r.u32();
    d.downsample = r.u32();
    d.n_dim = r.u32();
    d.m_dim = r.u32();
    d.sh_degree = r.u32();
    const std::uint32_t n_fine = r.u32();
    const std::uint32_t n_coarse = r.u32();

    if (d.views == 0 || d.height == 0 || d.width == 0 || d.downsample == 0)
        bad_counts(header_at, "SPSC: zero view count or pixel grid in header");
    if (d.height % d.downsample != 0 || d.width % d.downsample != 0)
        bad_counts(header_at, fmt::format("SPSC: downsample ratio {} does not divide {}x{}", d.downsample, d.height,
                                          d.width));
    if (d.sh_degree > 8 || d.n_dim == 0 || d.m_dim == 0 || d.n_dim > (1u << 16) || d.m_dim > (1u << 16))
        bad_counts(header_at, "SPSC: implausible feature dimensions or SH degree in header");

    const std::uint64_t need = (std::uint64_t{n_fine} * primitive_scalars(d, false) +
                                std::uint64_t{n_coarse} * primitive_scalars(d, true)) *
                               4;
    if (need > r.remaining())
        throw FormatError(FormatError::Kind::truncated, bytes.size(),
                          fmt::format("SPSC: header declares {} primitive bytes but the file ends at byte offset {} "
                                      "({} bytes available)",
                                      need, bytes.size(), r.remaining()));

    b.fine.reserve(n_fine);
    for (std::uint32_t i = 0; i < n_fine; ++i)
        b.fine.push_back(read_primitive(r, d, false));
    b.coarse.reserve(n_coarse);
    for (std::uint32_t i = 0; i < n_coarse; ++i)
        b.coarse.push_back(read_primitive(r, d, true));

    const std::uint32_t prov_len = r.u32();
    auto prov = r.raw(prov_len);
    b.provenance.assign(prov.begin(), prov.end());
    if (r.remaining() != 0)
        bad_counts(r.offset(), fmt::format("SPSC: {} trailing bytes after byte offset {}", r.remaining(), r.offset()));

    // Quaternions already within the unit-norm tolerance are kept as stored so
    // that valid bundles round-trip bit-exactly.
    for (auto* field : {&b.fine, &b.coarse})
        for (auto& g : *field) {
            const double n2 = g.rot[0] * g.rot[0] + g.rot[1] * g.rot[1] + g.rot[2] * g.rot[2] + g.rot[3] * g.rot[3];
            if (!(std::abs(std::sqrt(n2) - 1.0) <= kQuatTolerance))
                normalize_quaternion(g.rot);
        }
    const auto violations = validate_bundle(b);
    if (!violations.empty())
        throw ValidationError(fmt::format("SPSC: decoded bundle is invalid ({} violations), first: {}",
                                          violations.size(), describe(violations.front())));
    return b;
}

void save_bundle(const SceneBundle& bundle, const std::filesystem::path& path) {
    write_file(path, encode_bundle(bundle));
}

SceneBundle load_bundle(const std::filesystem::path& path) { return decode_bundle(read_file(path)); }

std::vector<std::uint8_t> encode_masks(const InstanceMaskSet& masks) {
    if (masks.ids.size() != std::size_t{masks.height} * masks.width)
        throw ValidationError("SPMK: id array size does not match the pixel grid");
    ByteWriter w;
    w.magic(kMaskMagic);
    w.u32(kMaskVersion);
    w.u32(masks.height);
    w.u32(masks.width);
    w.u32(masks.m);
    for (auto id : masks.ids)
        w.u16(id);
    return w.take();
}

InstanceMaskSet decode_masks(std::span<const std::uint8_t> bytes, bool strict) {
    ByteReader r(bytes, "SPMK");
    r.magic(kMaskMagic);
    const std::size_t version_at = r.offset();
    if (const auto v = r.u32(); v != kMaskVersion)
        throw FormatError(FormatError::Kind::bad_version, version_at, fmt::format("SPMK: unsupported version {}", v));
    InstanceMaskSet m;
    m.height = r.u32();
    m.width = r.u32();
    m.m = r.u32();
    const std::uint64_t n = std::uint64_t{m.height} * m.width;
    if (n * 2 > r.remaining())
        throw FormatError(FormatError::Kind::truncated, bytes.size(),
                          fmt::format("SPMK: {}x{} mask needs {} bytes, file ends at byte offset {}", m.height,
                                      m.width, n * 2, bytes.size()));
    m.ids.resize(n);
    for (auto& id : m.ids)
        id = r.u16();
    if (r.remaining() != 0)
        bad_counts(r.offset(), "SPMK: trailing bytes after the id array");
    if (strict) {
        if (auto err = check_masks(m); !err.empty())
            throw ValidationError("SPMK: " + err);
    }
    return m;
}

void save_masks(const InstanceMaskSet& masks, const std::filesystem::path& path) {
    write_file(path, encode_masks(masks));
}

InstanceMaskSet load_masks(const std::filesystem::path& path, bool strict) {
    return decode_masks(read_file(path), strict);
}

std::vector<std::uint8_t> encode_feature_map(const FeatureMap& map) {
    if (map.data.size() != map.pixels() * map.channels)
        throw ValidationError("SPFM: data size does not match H*W*C");
    ByteWriter w;
    w.magic(kFeatureMagic);
    w.u32(kFeatureMapVersion);
    w.u32(map.height);
    w.u32(map.width);
    w.u32(map.channels);
    w.f32s(map.data);
    return w.take();
}

FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "SPFM");
    r.magic(kFeatureMagic);
    const std::size_t version_at = r.offset();
    if (const auto v = r.u32(); v != kFeatureMapVersion)
        throw FormatError(FormatError::Kind::bad_version, version_at, fmt::format("SPFM: unsupported version {}", v));
    FeatureMap map;
    map.height = r.u32();
    map.width = r.u32();
    map.channels = r.u32();
    const std::uint64_t n = std::uint64_t{map.height} * map.width * map.channels;
    if (n * 4 > r.remaining())
        throw FormatError(FormatError::Kind::truncated, bytes.size(),
                          fmt::format("SPFM: {}x{}x{} map needs {} bytes, file ends at byte offset {}", map.height,
                                      map.width, map.channels, n * 4, bytes.size()));
    map.data.resize(n);
    r.f32s(map.data);
    if (r.remaining() != 0)
        bad_counts(r.offset(), "SPFM: trailing bytes after the data array");
    if (!map.all_finite())
        throw ValidationError("SPFM: non-finite entries");
    return map;
}

void save_feature_map(const FeatureMap& map, const std::filesystem::path& path) {
    write_file(path, encode_feature_map(map));
}

FeatureMap load_feature_map(const std::filesystem::path& path) { return decode_feature_map(read_file(path)); }

void save_ppm(const FeatureMap& rgb, const std::filesystem::path& path) {
    if (rgb.channels != 3)
        throw ValidationError(fmt::format("PPM output needs 3 channels, got {}", rgb.channels));
    std::string header = fmt::format("P6\n{} {}\n255\n", rgb.width, rgb.height);
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + rgb.data.size());
    for (double v : rgb.data) {
        const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
        bytes.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
    }
    write_file(path, bytes);
}

FeatureMap load_ppm(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n')
                    ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&]() -> std::uint32_t {
        skip_ws();
        std::uint64_t v = 0;
        const std::size_t start = pos;
        while (pos < bytes.size() && std::isdigit(bytes[pos]) && v < (1u << 30))
            v = v * 10 + (bytes[pos++] - '0');
        if (pos == start)
            throw FormatError(FormatError::Kind::invalid_content, pos, "PPM: malformed header");
        return static_cast<std::uint32_t>(v);
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw FormatError(FormatError::Kind::bad_magic, 0, "PPM: only binary P6 images are supported");
    pos = 2;
    const std::uint32_t w = number();
    const std::uint32_t h = number();
    const std::uint32_t maxval = number();
    if (maxval == 0 || maxval > 65535 || w == 0 || h == 0)
        throw FormatError(FormatError::Kind::bad_counts, pos, "PPM: invalid dimensions or maxval");
    ++pos;  // single whitespace before the raster
    const std::size_t bpp = maxval < 256 ? 1 : 2;
    const std::uint64_t need = std::uint64_t{w} * h * 3 * bpp;
    if (pos > bytes.size() || bytes.size() - pos < need)
        throw FormatError(FormatError::Kind::truncated, bytes.size(), "PPM: truncated raster");
    FeatureMap img(h, w, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const std::uint32_t v = bpp == 1 ? bytes[pos + i] : (std::uint32_t{bytes[pos + 2 * i]} << 8) | bytes[pos + 2 * i + 1];
        img.data[i] = static_cast<double>(v) / maxval;
    }
    return img;
}

std::string camera_to_json(const Camera& cam) {
    nlohmann::json j;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    j["width"] = cam.width;
    j["height"] = cam.height;
    j["R"] = cam.R;
    j["t"] = cam.t;
    return j.dump();
}

namespace {
    Camera camera_from(const nlohmann::json& j) {
        try {
            Camera cam;
            cam.fx = j.at("fx").get<double>();
            cam.fy = j.at("fy").get<double>();
            cam.cx = j.at("cx").get<double>();
            cam.cy = j.at("cy").get<double>();
            cam.width = j.at("width").get<std::uint32_t>();
            cam.height = j.at("height").get<std::uint32_t>();
            const auto R = j.at("R").get<std::vector<double>>();
            const auto t = j.at("t").get<std::vector<double>>();
            if (R.size() != 9 || t.size() != 3)
                throw ValidationError("camera JSON: R needs 9 entries and t needs 3");
            std::copy(R.begin(), R.end(), cam.R.begin());
            std::copy(t.begin(), t.end(), cam.t.begin());
            if (auto err = check_camera(cam); !err.empty())
                throw ValidationError("camera JSON: " + err);
            return cam;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(fmt::format("camera JSON: {}", e.what()));
        }
    }
} // namespace

Camera camera_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("camera JSON: {}", e.what()));
    }
    return camera_from(j);
}

std::vector<Camera> load_cameras(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
    std::vector<Camera> cams;
    if (j.is_array()) {
        for (const auto& c : j)
            cams.push_back(camera_from(c));
    } else {
        cams.push_back(camera_from(j));
    }
    return cams;
}

void save_cameras(std::span<const Camera> cams, const std::filesystem::path& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cams)
        arr.push_back(nlohmann::json::parse(camera_to_json(c)));
    const std::string text = arr.dump(2) + "\n";
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError(fmt::format("write to '{}' failed", path.string()));
}

} // namespace splatfield
