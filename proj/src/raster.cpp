#include "splatfield/raster.hpp"

#include "raster_detail.hpp"
#include "splatfield/errors.hpp"
#include "splatfield/sh.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <cstdlib>
#include <string>

namespace splatfield {

namespace {

    using Mat3 = Eigen::Matrix3d;
    using Vec3 = Eigen::Vector3d;

    Mat3 camera_rotation(const Camera& cam) {
        Mat3 W;
        W << cam.R[0], cam.R[1], cam.R[2], cam.R[3], cam.R[4], cam.R[5], cam.R[6], cam.R[7], cam.R[8];
        return W;
    }

    Mat3 quaternion_matrix(const std::array<double, 4>& q_raw) {
        const double n = std::sqrt(q_raw[0] * q_raw[0] + q_raw[1] * q_raw[1] + q_raw[2] * q_raw[2] +
                                   q_raw[3] * q_raw[3]);
        const double w = q_raw[0] / n, x = q_raw[1] / n, y = q_raw[2] / n, z = q_raw[3] / n;
        Mat3 R;
        R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
             2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
        return R;
    }

    void check_payload(std::span<const ProjectedGaussian> splats, const Payload& payload) {
        if (payload.values.size() != splats.size() * payload.channels)
            throw ValidationError(fmt::format("payload holds {} values for {} splats x {} channels",
                                              payload.values.size(), splats.size(), payload.channels));
    }

    /// Composites one pixel given candidate splats in depth order.
    template <class Candidates>
    void blend_pixel(std::span<const ProjectedGaussian> splats, const Payload& payload, const Candidates& cand,
                     double px, double py, const RenderOptions& opts, double* out_channels, double& out_T,
                     double* contrib) {
        const std::size_t C = payload.channels;
        double T = 1.0;
        detail::Sample s;
        for (std::size_t k : cand) {
            if (!detail::evaluate_sample(splats[k], px, py, opts, s))
                continue;
            const double w = s.a * T;
            const double* p = payload.values.data() + k * C;
            for (std::size_t c = 0; c < C; ++c)
                out_channels[c] += p[c] * w;
            contrib[k] += w;
            T *= (1.0 - s.a);
        }
        out_T = T;
    }

} // namespace

unsigned resolve_threads(const RenderOptions& opts) {
    if (opts.deterministic)
        return 1;
    if (opts.threads > 0)
        return opts.threads;
    if (const char* env = std::getenv("SPLATFIELD_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0)
            return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::array<double, 9> world_covariance(const GaussianPrimitive& g) {
    const Mat3 R = quaternion_matrix(g.rot);
    const Mat3 M = R * Vec3(g.scale[0], g.scale[1], g.scale[2]).asDiagonal();
    const Mat3 S = M * M.transpose();
    std::array<double, 9> out{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            out[3 * i + j] = S(i, j);
    return out;
}

Projection project(std::span<const GaussianPrimitive> prims, const Camera& cam, std::uint32_t sh_degree,
                   const RenderOptions& opts) {
    if (auto err = check_camera(cam); !err.empty())
        throw ValidationError("project: " + err);
    if (opts.gate_mode == GateMode::leaky)
        check_gate_config(opts.gate);

    Projection out;
    out.stats.input = prims.size();
    out.splats.reserve(prims.size());
    const Mat3 W = camera_rotation(cam);
    const Vec3 tc(cam.t[0], cam.t[1], cam.t[2]);
    const auto cc = cam.center();
    const Vec3 campos(cc[0], cc[1], cc[2]);

    for (std::size_t i = 0; i < prims.size(); ++i) {
        const GaussianPrimitive& g = prims[i];
        const Vec3 mu(g.mu[0], g.mu[1], g.mu[2]);
        const Vec3 t = W * mu + tc;
        if (!(t.z() > opts.near)) {
            ++out.stats.culled_near;
            continue;
        }
        const double z = t.z(), z2 = z * z;
        Eigen::Matrix<double, 2, 3> J;
        J << cam.fx / z, 0.0, -cam.fx * t.x() / z2, 0.0, cam.fy / z, -cam.fy * t.y() / z2;
        const Mat3 Rq = quaternion_matrix(g.rot);
        const Mat3 M = Rq * Vec3(g.scale[0], g.scale[1], g.scale[2]).asDiagonal();
        const Mat3 Sigma = M * M.transpose();
        const Eigen::Matrix<double, 2, 3> A = J * W;
        const Eigen::Matrix2d cov = A * Sigma * A.transpose();

        ProjectedGaussian s;
        s.cov2d = {cov(0, 0) + opts.cov_floor, 0.5 * (cov(0, 1) + cov(1, 0)), cov(1, 1) + opts.cov_floor};
        const double det = s.cov2d[0] * s.cov2d[2] - s.cov2d[1] * s.cov2d[1];
        if (!(det > 0.0) || !std::isfinite(det)) {
            ++out.stats.culled_degenerate;
            continue;
        }
        s.conic = {s.cov2d[2] / det, -s.cov2d[1] / det, s.cov2d[0] / det};
        s.center2d = {cam.fx * t.x() / z + cam.cx, cam.fy * t.y() / z + cam.cy};
        s.depth = z;
        const double rx = opts.cutoff_sigma * std::sqrt(s.cov2d[0]) + 1e-6;
        const double ry = opts.cutoff_sigma * std::sqrt(s.cov2d[2]) + 1e-6;
        s.bbox = {s.center2d[0] - rx, s.center2d[0] + rx, s.center2d[1] - ry, s.center2d[1] + ry};

        Vec3 v = mu - campos;
        const double vn = v.norm();
        const std::array<double, 3> dir = vn > 0.0 ? std::array<double, 3>{v.x() / vn, v.y() / vn, v.z() / vn}
                                                   : std::array<double, 3>{0.0, 0.0, 1.0};
        const auto basis = sh::evaluate_basis(dir, sh_degree, false);
        const auto raw = sh::raw_color(g.sh, basis, sh_degree);
        for (int c = 0; c < 3; ++c) {
            s.rgb_clamped[c] = raw[c] < 0.0 || raw[c] > 1.0;
            s.rgb[c] = std::clamp(raw[c], 0.0, 1.0);
        }
        const double gated = opts.gate_mode == GateMode::leaky ? gate(g.beta, opts.gate) : g.beta;
        s.alpha_eff = g.alpha * gated;
        s.source_index = i;
        out.splats.push_back(s);
    }
    return out;
}

CompositeOutput composite(std::span<const ProjectedGaussian> splats, const Payload& payload, std::uint32_t width,
                          std::uint32_t height, const RenderOptions& opts) {
    check_payload(splats, payload);
    const std::size_t C = payload.channels;
    CompositeOutput out;
    out.channels.assign(std::size_t{width} * height * C, 0.0);
    out.transmittance.assign(std::size_t{width} * height, 1.0);
    out.contrib.assign(splats.size(), 0.0);

    const detail::TileGrid grid = detail::bin_tiles(splats, width, height, opts.tile);
    const std::size_t n_tiles = grid.lists.size();
    const unsigned workers = resolve_threads(opts);
    std::vector<std::vector<double>> contrib_parts(workers, std::vector<double>(splats.size(), 0.0));

    detail::parallel_for(n_tiles, workers, [&](std::size_t tb, std::size_t te, unsigned worker) {
        double* contrib = contrib_parts[worker].data();
        for (std::size_t tile = tb; tile < te; ++tile) {
            const auto& list = grid.lists[tile];
            const std::uint32_t tx = static_cast<std::uint32_t>(tile % grid.tiles_x);
            const std::uint32_t ty = static_cast<std::uint32_t>(tile / grid.tiles_x);
            const std::uint32_t x0 = tx * grid.tile, y0 = ty * grid.tile;
            const std::uint32_t x1 = std::min(width, x0 + grid.tile), y1 = std::min(height, y0 + grid.tile);
            for (std::uint32_t y = y0; y < y1; ++y) {
                for (std::uint32_t x = x0; x < x1; ++x) {
                    const std::size_t p = std::size_t{y} * width + x;
                    blend_pixel(splats, payload, list, x + 0.5, y + 0.5, opts, out.channels.data() + p * C,
                                out.transmittance[p], contrib);
                }
            }
        }
    });
    for (const auto& part : contrib_parts)
        for (std::size_t k = 0; k < splats.size(); ++k)
            out.contrib[k] += part[k];
    return out;
}

CompositeOutput composite_reference(std::span<const ProjectedGaussian> splats, const Payload& payload,
                                    std::uint32_t width, std::uint32_t height, const RenderOptions& opts) {
    check_payload(splats, payload);
    const std::size_t C = payload.channels;
    CompositeOutput out;
    out.channels.assign(std::size_t{width} * height * C, 0.0);
    out.transmittance.assign(std::size_t{width} * height, 1.0);
    out.contrib.assign(splats.size(), 0.0);

    std::vector<std::size_t> hits;
    detail::Sample s;
    for (std::uint32_t y = 0; y < height; ++y) {
        for (std::uint32_t x = 0; x < width; ++x) {
            hits.clear();
            for (std::size_t k = 0; k < splats.size(); ++k)
                if (detail::evaluate_sample(splats[k], x + 0.5, y + 0.5, opts, s))
                    hits.push_back(k);
            std::sort(hits.begin(), hits.end(), [&](std::size_t a, std::size_t b) {
                if (splats[a].depth != splats[b].depth)
                    return splats[a].depth < splats[b].depth;
                return splats[a].source_index < splats[b].source_index;
            });
            const std::size_t p = std::size_t{y} * width + x;
            blend_pixel(splats, payload, hits, x + 0.5, y + 0.5, opts, out.channels.data() + p * C,
                        out.transmittance[p], out.contrib.data());
        }
    }
    return out;
}

RenderResult render(const SceneBundle& bundle, const Camera& cam, const RenderOptions& opts, RenderRequest request) {
    const SceneDims& d = bundle.dims;
    RenderResult res;
    RenderTape& tape = res.tape;
    tape.recorded = true;
    tape.camera = cam;
    tape.options = opts;
    tape.request = request;
    tape.sh_degree = d.sh_degree;
    tape.fine_count = bundle.fine.size();
    tape.coarse_count = bundle.coarse.size();

    const std::uint32_t W = cam.width, H = cam.height;
    RenderOutput& out = res.output;
    out.contrib_fine.assign(bundle.fine.size(), 0.0);
    out.contrib_coarse.assign(bundle.coarse.size(), 0.0);

    for (std::size_t i = 0; i < bundle.fine.size(); ++i)
        if (bundle.fine[i].sh.size() != sh_length(d.sh_degree) || bundle.fine[i].f_inst.size() != d.n_dim)
            throw ValidationError(fmt::format("render: fine[{}] member lengths disagree with the bundle dims", i));

    // Fine field: rgb + instance features share one composite.
    tape.fine = project(bundle.fine, cam, d.sh_degree, opts);
    out.fine_stats = tape.fine.stats;
    {
        const std::size_t n_rgb = request.rgb ? 3 : 0;
        const std::size_t n_inst = request.inst ? d.n_dim : 0;
        Payload payload;
        payload.channels = n_rgb + n_inst;
        payload.values.reserve(tape.fine.splats.size() * payload.channels);
        for (const auto& s : tape.fine.splats) {
            if (request.rgb)
                payload.values.insert(payload.values.end(), s.rgb.begin(), s.rgb.end());
            if (request.inst) {
                const auto& f = bundle.fine[s.source_index].f_inst;
                payload.values.insert(payload.values.end(), f.begin(), f.end());
            }
        }
        const CompositeOutput comp = composite(tape.fine.splats, payload, W, H, opts);
        if (request.rgb)
            out.rgb = FeatureMap(H, W, 3);
        if (request.inst)
            out.inst = FeatureMap(H, W, d.n_dim);
        out.acc = FeatureMap(H, W, 1);
        for (std::size_t p = 0; p < std::size_t{W} * H; ++p) {
            const double* src = comp.channels.data() + p * payload.channels;
            if (request.rgb)
                std::copy(src, src + 3, out.rgb.data.begin() + static_cast<std::ptrdiff_t>(p * 3));
            if (request.inst)
                std::copy(src + n_rgb, src + n_rgb + n_inst,
                          out.inst.data.begin() + static_cast<std::ptrdiff_t>(p * n_inst));
            out.acc.data[p] = 1.0 - comp.transmittance[p];
        }
        for (std::size_t k = 0; k < tape.fine.splats.size(); ++k)
            out.contrib_fine[tape.fine.splats[k].source_index] = comp.contrib[k];
    }

    if (request.sem) {
        for (std::size_t i = 0; i < bundle.coarse.size(); ++i)
            if (!bundle.coarse[i].f_sem || bundle.coarse[i].f_sem->size() != d.m_dim)
                throw ValidationError(fmt::format("render: coarse[{}] has no {}-dim semantic feature", i, d.m_dim));
        tape.coarse = project(bundle.coarse, cam, d.sh_degree, opts);
        out.coarse_stats = tape.coarse.stats;
        Payload payload;
        payload.channels = d.m_dim;
        payload.values.reserve(tape.coarse.splats.size() * d.m_dim);
        for (const auto& s : tape.coarse.splats) {
            const auto& f = *bundle.coarse[s.source_index].f_sem;
            payload.values.insert(payload.values.end(), f.begin(), f.end());
        }
        const CompositeOutput comp = composite(tape.coarse.splats, payload, W, H, opts);
        out.sem = FeatureMap(H, W, d.m_dim);
        out.sem.data = comp.channels;
        for (std::size_t k = 0; k < tape.coarse.splats.size(); ++k)
            out.contrib_coarse[tape.coarse.splats[k].source_index] = comp.contrib[k];
    }
    return res;
}

} // namespace splatfield
