#include "splatfield/synth.hpp"

#include "splatfield/dualfield.hpp"
#include "splatfield/errors.hpp"
#include "splatfield/raster.hpp"
#include "splatfield/sh.hpp"
#include "rng.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace splatfield {

namespace {

    using detail::Rng;

    struct Rect {
        std::uint32_t r0, c0, h, w;
        bool contains(std::uint32_t r, std::uint32_t c) const { return r >= r0 && r < r0 + h && c >= c0 && c < c0 + w; }
        bool overlaps(const Rect& o) const {
            return r0 < o.r0 + o.h && o.r0 < r0 + h && c0 < o.c0 + o.w && o.c0 < c0 + w;
        }
    };

    std::string hex_mask(std::span<const std::uint8_t> bits) {
        static constexpr char digits[] = "0123456789abcdef";
        std::vector<int> nibbles((bits.size() + 3) / 4, 0);
        for (std::size_t i = 0; i < bits.size(); ++i)
            if (bits[i])
                nibbles[i / 4] |= 1 << (i % 4);
        std::string out;
        for (int n : nibbles)
            out.push_back(digits[n]);
        return out;
    }

    std::vector<std::uint8_t> unhex_mask(const std::string& hex, std::size_t n) {
        if (hex.size() != (n + 3) / 4)
            throw ValidationError("redundancy mask length does not match the fine field");
        std::vector<std::uint8_t> bits(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const char ch = hex[i / 4];
            int v;
            if (ch >= '0' && ch <= '9')
                v = ch - '0';
            else if (ch >= 'a' && ch <= 'f')
                v = ch - 'a' + 10;
            else
                throw ValidationError("redundancy mask is not lowercase hex");
            bits[i] = (v >> (i % 4)) & 1;
        }
        return bits;
    }

    Camera make_camera(const SynthSpec& s, double focal, double shift_px) {
        Camera cam;
        cam.fx = cam.fy = focal;
        cam.cx = s.width / 2.0;
        cam.cy = s.height / 2.0;
        cam.width = s.width;
        cam.height = s.height;
        cam.t = {-shift_px * s.depth / focal, 0.0, 0.0};
        return cam;
    }

    InstanceMaskSet class_image(const SynthSpec& s, const std::vector<Rect>& objects, std::int64_t col_offset) {
        InstanceMaskSet m;
        m.height = s.height;
        m.width = s.width;
        m.m = s.objects;
        m.ids.assign(std::size_t{s.height} * s.width, 0);
        for (std::uint32_t r = 0; r < s.height; ++r)
            for (std::uint32_t c = 0; c < s.width; ++c) {
                const std::int64_t g = c + col_offset;
                for (std::size_t k = 0; k < objects.size(); ++k)
                    if (g >= 0 && objects[k].contains(r, static_cast<std::uint32_t>(g)))
                        m.ids[std::size_t{r} * s.width + c] = static_cast<std::uint16_t>(k + 1);
            }
        return m;
    }

    /// Clears pixels within `radius` (Chebyshev) of a pixel with a different id.
    InstanceMaskSet erode(const InstanceMaskSet& in, std::uint32_t radius) {
        InstanceMaskSet out = in;
        const auto R = static_cast<std::int64_t>(radius);
        for (std::int64_t r = 0; r < in.height; ++r)
            for (std::int64_t c = 0; c < in.width; ++c) {
                const auto id = in.ids[r * in.width + c];
                bool edge = false;
                for (std::int64_t dr = -R; dr <= R && !edge; ++dr)
                    for (std::int64_t dc = -R; dc <= R && !edge; ++dc) {
                        const std::int64_t rr = r + dr, cc = c + dc;
                        if (rr >= 0 && cc >= 0 && rr < in.height && cc < in.width)
                            edge = in.ids[rr * in.width + cc] != id;
                    }
                if (edge)
                    out.ids[r * in.width + c] = 0;
            }
        return out;
    }

    /// Renumbers the ids present in `classes` to 1..m in ascending class order.
    InstanceMaskSet compact(const InstanceMaskSet& classes) {
        std::vector<std::uint16_t> remap(std::size_t{classes.m} + 1, 0);
        for (auto id : classes.ids)
            remap[id] = 1;
        std::uint16_t next = 0;
        for (std::size_t k = 1; k < remap.size(); ++k)
            remap[k] = remap[k] ? ++next : 0;
        remap[0] = 0;
        InstanceMaskSet out = classes;
        out.m = next;
        for (auto& id : out.ids)
            id = remap[id];
        return out;
    }

} // namespace

void check_synth_spec(const SynthSpec& s) {
    auto fail = [](const std::string& msg) { throw ValidationError("synth: " + msg); };
    if (s.views < 2)
        fail(fmt::format("views = {} must be at least 2", s.views));
    if (s.height == 0 || s.width == 0)
        fail("image size must be positive");
    if (s.downsample == 0 || s.height % s.downsample || s.width % s.downsample)
        fail(fmt::format("downsample ratio {} must divide {}x{}", s.downsample, s.height, s.width));
    if (s.objects == 0)
        fail("at least one object is required");
    if (s.objects + 1 > s.n_dim || s.objects + 1 > s.m_dim)
        fail(fmt::format("{} objects plus background need n_dim and m_dim >= {}", s.objects, s.objects + 1));
    if (s.sh_degree > sh::kMaxDegree)
        fail(fmt::format("SH degree {} exceeds {}", s.sh_degree, sh::kMaxDegree));
    if (!(s.overlap >= 0.0 && s.overlap <= 1.0))
        fail(fmt::format("overlap {} must lie in [0,1]", s.overlap));
    if (!(s.noise >= 0.0) || !std::isfinite(s.noise))
        fail("noise must be a finite non-negative value");
    if (!(s.depth > 0.0) || !(s.focal >= 0.0) || !(s.prim_scale > 0.0))
        fail("depth and primitive scale must be positive");
    if (!(s.alpha > 0.0 && s.alpha <= 1.0))
        fail("alpha must lie in (0,1]");
    if (!(s.beta_min >= 0.0 && s.beta_min <= s.beta_max && s.beta_max <= 1.0))
        fail("need 0 <= beta_min <= beta_max <= 1");
    if (!(s.texture >= 0.0 && s.texture <= 0.5) || !(s.jitter >= 0.0) ||
        !(s.depth_offset >= 0.0 && s.depth_offset < 1.0))
        fail("texture, jitter or depth offset out of range");
    if (s.height < s.downsample || s.width < s.downsample)
        fail("image smaller than one object");
}

SynthScene synth_scene(const SynthSpec& s) {
    check_synth_spec(s);
    Rng rng(s.seed);
    const double focal = s.focal > 0.0 ? s.focal : static_cast<double>(s.width);
    const double px = s.depth / focal;  // world size of one pixel on the plane
    const auto shift = static_cast<std::uint32_t>(std::lround((1.0 - s.overlap) * s.width));
    const std::uint32_t world_w = s.width + (s.views - 1) * shift;

    // Objects: non-overlapping rectangles of side >= S inside view 0.
    std::vector<Rect> objects;
    const std::uint32_t S = s.downsample;
    const std::uint32_t max_side = std::max(S, std::min(s.height, s.width) / 2);
    bool placed = true;
    for (std::uint32_t k = 0; k < s.objects && placed; ++k) {
        placed = false;
        for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
            Rect r;
            r.h = S + rng.below(max_side - S + 1);
            r.w = S + rng.below(max_side - S + 1);
            r.r0 = rng.below(s.height - r.h + 1);
            r.c0 = rng.below(s.width - r.w + 1);
            placed = std::none_of(objects.begin(), objects.end(), [&](const Rect& o) { return o.overlaps(r); });
            if (placed)
                objects.push_back(r);
        }
    }
    // Crowded images: lay every object on a distinct S-aligned cell of side S, picked in seeded order.
    if (!placed) {
        std::vector<Rect> cells;
        for (std::uint32_t r0 = 0; r0 + S <= s.height; r0 += S)
            for (std::uint32_t c0 = 0; c0 + S <= s.width; c0 += S)
                cells.push_back(Rect{r0, c0, S, S});
        if (cells.size() < s.objects)
            throw ValidationError(fmt::format("synth: cannot place {} objects of side >= {} in {}x{}", s.objects, S,
                                              s.height, s.width));
        objects.clear();
        for (std::uint32_t k = 0; k < s.objects; ++k) {
            const std::uint32_t j = k + rng.below(static_cast<std::uint32_t>(cells.size()) - k);
            std::swap(cells[k], cells[j]);
            objects.push_back(cells[k]);
        }
    }

    // Texture: per-class base color plus per-cell variation.
    std::vector<std::array<double, 3>> base(s.objects + 1);
    for (auto& b : base)
        for (double& ch : b)
            ch = rng.uniform(0.25, 0.75);
    std::vector<std::uint16_t> world_class(std::size_t{s.height} * world_w, 0);
    std::vector<std::array<double, 3>> world_color(world_class.size());
    for (std::uint32_t r = 0; r < s.height; ++r)
        for (std::uint32_t g = 0; g < world_w; ++g) {
            const std::size_t i = std::size_t{r} * world_w + g;
            for (std::size_t k = 0; k < objects.size(); ++k)
                if (objects[k].contains(r, g))
                    world_class[i] = static_cast<std::uint16_t>(k + 1);
            for (int ch = 0; ch < 3; ++ch)
                world_color[i][ch] =
                    std::clamp(base[world_class[i]][ch] + rng.uniform(-s.texture, s.texture), 0.0, 1.0);
        }

    SynthScene out;
    SceneBundle& b = out.bundle;
    b.dims = SceneDims{s.views, s.height, s.width, s.downsample, s.n_dim, s.m_dim, s.sh_degree};
    const std::size_t n_sh = sh_length(s.sh_degree);

    for (std::uint32_t v = 0; v < s.views; ++v) {
        const double cam_x = double(v) * shift * px;
        for (std::uint32_t r = 0; r < s.height; ++r)
            for (std::uint32_t c = 0; c < s.width; ++c) {
                const std::uint32_t g = c + v * shift;
                bool redundant = false;
                for (std::uint32_t u = 0; u < v && !redundant; ++u)
                    redundant = g >= u * shift && g - u * shift < s.width;
                const std::size_t wi = std::size_t{r} * world_w + g;
                const std::uint16_t cls = world_class[wi];

                GaussianPrimitive p;
                const std::array<double, 3> cell{(g + 0.5 - s.width / 2.0) * px, (r + 0.5 - s.height / 2.0) * px,
                                                 s.depth};
                if (redundant) {
                    // Along the creating camera's ray, slightly closer, then jittered.
                    const double f = 1.0 - s.depth_offset;
                    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
                    p.mu = {cam_x + f * (cell[0] - cam_x) + s.jitter * px * std::cos(theta),
                            f * cell[1] + s.jitter * px * std::sin(theta), f * cell[2]};
                } else {
                    p.mu = cell;
                }
                p.alpha = s.alpha;
                p.scale = {s.prim_scale * px, s.prim_scale * px, s.prim_scale * px};
                p.sh.assign(n_sh, 0.0);
                for (int ch = 0; ch < 3; ++ch)
                    p.sh[ch] = sh::dc_from_color(world_color[wi][ch]);
                p.beta = rng.uniform(s.beta_min, s.beta_max);
                p.f_inst.assign(s.n_dim, 0.0);
                p.f_inst[cls] = 1.0;
                if (s.noise > 0.0)
                    for (double& x : p.f_inst)
                        x += s.noise * rng.normal();
                b.fine.push_back(std::move(p));
                out.redundant.push_back(redundant ? 1 : 0);
                out.fine_class.push_back(cls);
            }
    }

    b.coarse = downsample_coarse(b.fine, b.dims);
    const auto src = coarse_source_indices(b.dims);
    for (std::size_t j = 0; j < b.coarse.size(); ++j) {
        (*b.coarse[j].f_sem)[out.fine_class[src[j]]] = 1.0;
        b.coarse[j].beta = 1.0;
    }

    nlohmann::json prov = {{"generator", "synth"},
                           {"seed", s.seed},
                           {"views", s.views},
                           {"size", {s.height, s.width}},
                           {"objects", s.objects},
                           {"overlap", s.overlap},
                           {"noise", s.noise},
                           {"shift_columns", shift}};
    prov["redundant"] = hex_mask(out.redundant);
    b.provenance = prov.dump();
    quantize_to_float(b);

    // Reference renders come from the duplicate-free scene at full importance.
    SceneBundle reference;
    reference.dims = b.dims;
    for (std::size_t i = 0; i < b.fine.size(); ++i)
        if (!out.redundant[i]) {
            reference.fine.push_back(b.fine[i]);
            reference.fine.back().beta = 1.0;
        }
    RenderOptions ropts;
    const RenderRequest rgb_only{true, false, false};

    for (std::uint32_t v = 0; v < s.views; ++v) {
        out.cameras.push_back(make_camera(s, focal, double(v) * shift));
        out.classes.push_back(class_image(s, objects, std::int64_t{v} * shift));
        out.masks.push_back(compact(erode(out.classes.back(), s.mask_erosion)));
        out.rgb.push_back(render(reference, out.cameras.back(), ropts, rgb_only).output.rgb);
        FeatureMap sem(s.height, s.width, s.m_dim);
        for (std::size_t p = 0; p < sem.pixels(); ++p)
            sem.pixel(p)[out.classes.back().ids[p]] = 1.0;
        out.sem.push_back(std::move(sem));
    }
    const std::uint32_t half = shift / 2;
    out.heldout_camera = make_camera(s, focal, half);
    out.heldout_classes = class_image(s, objects, half);
    out.heldout_rgb = render(reference, out.heldout_camera, ropts, rgb_only).output.rgb;
    return out;
}

std::optional<std::vector<std::uint8_t>> redundancy_labels(const SceneBundle& bundle) {
    const auto prov = nlohmann::json::parse(bundle.provenance, nullptr, false);
    if (prov.is_discarded() || !prov.is_object() || !prov.contains("redundant") || !prov["redundant"].is_string())
        return std::nullopt;
    return unhex_mask(prov["redundant"].get<std::string>(), bundle.fine.size());
}

void set_redundancy_labels(SceneBundle& bundle, std::span<const std::uint8_t> labels) {
    auto prov = nlohmann::json::parse(bundle.provenance, nullptr, false);
    if (prov.is_discarded() || !prov.is_object()) {
        prov = nlohmann::json::object();
        if (!bundle.provenance.empty())
            prov["note"] = bundle.provenance;
    }
    prov["redundant"] = hex_mask(labels);
    bundle.provenance = prov.dump();
}

} // namespace splatfield
