#include "splatfield/raster.hpp"

#include "raster_detail.hpp"
#include "splatfield/errors.hpp"
#include "splatfield/sh.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

namespace splatfield {

namespace {

    using Mat3 = Eigen::Matrix3d;
    using Vec3 = Eigen::Vector3d;

    struct Hit {
        std::size_t k;
        detail::Sample s;
        double T;  ///< transmittance in front of this splat
    };

    void backward_pixel(std::span<const ProjectedGaussian> splats, const Payload& payload,
                        const std::vector<std::size_t>& cand, double px, double py, const RenderOptions& opts,
                        const double* d_out, double d_acc, std::vector<Hit>& hits, CompositeGrad& g) {
        const std::size_t C = payload.channels;
        hits.clear();
        double T = 1.0;
        detail::Sample s;
        for (std::size_t k : cand) {
            if (!detail::evaluate_sample(splats[k], px, py, opts, s))
                continue;
            hits.push_back({k, s, T});
            T *= (1.0 - s.a);
        }
        const double T_final = T;

        // suffix[c] = sum over later splats of payload * weight
        double suffix_buf[64];
        std::vector<double> suffix_heap;
        double* suffix = suffix_buf;
        if (C > 64) {
            suffix_heap.assign(C, 0.0);
            suffix = suffix_heap.data();
        } else {
            std::fill(suffix_buf, suffix_buf + C, 0.0);
        }

        for (std::size_t h = hits.size(); h-- > 0;) {
            const Hit& hit = hits[h];
            const std::size_t k = hit.k;
            const double a = hit.s.a;
            const double w = a * hit.T;
            const double* p = payload.values.data() + k * C;
            double* gp = g.payload.data() + k * C;

            double d_a = 0.0;
            const double one_minus = 1.0 - a;
            if (one_minus > 1e-12) {
                for (std::size_t c = 0; c < C; ++c) {
                    gp[c] += d_out[c] * w;
                    d_a += d_out[c] * (p[c] * hit.T - suffix[c] / one_minus);
                }
                d_a += d_acc * T_final / one_minus;
            } else {
                // Fully opaque sample: later splats see T = 0; recompute with this one removed.
                std::vector<double> later(C, 0.0);
                double T_ex = hit.T;
                for (std::size_t j = h + 1; j < hits.size(); ++j) {
                    const double* pj = payload.values.data() + hits[j].k * C;
                    for (std::size_t c = 0; c < C; ++c)
                        later[c] += pj[c] * hits[j].s.a * T_ex;
                    T_ex *= (1.0 - hits[j].s.a);
                }
                for (std::size_t c = 0; c < C; ++c) {
                    gp[c] += d_out[c] * w;
                    d_a += d_out[c] * (p[c] * hit.T - later[c]);
                }
                d_a += d_acc * T_ex;
            }
            for (std::size_t c = 0; c < C; ++c)
                suffix[c] += p[c] * w;

            if (hit.s.a_raw >= opts.max_alpha)
                continue;  // clamped: opacity is locally constant
            const double d_araw = d_a;
            g.alpha_eff[k] += d_araw * hit.s.g;
            const double d_g = d_araw * splats[k].alpha_eff;
            // g = exp(-0.5 d^T Q d), d = pixel - center
            const double dgg = d_g * hit.s.g;
            const auto& q = splats[k].conic;
            const double dx = hit.s.dx, dy = hit.s.dy;
            g.center2d[2 * k + 0] += dgg * (q[0] * dx + q[1] * dy);
            g.center2d[2 * k + 1] += dgg * (q[1] * dx + q[2] * dy);
            g.conic[3 * k + 0] += dgg * (-0.5 * dx * dx);
            g.conic[3 * k + 1] += dgg * (-dx * dy);
            g.conic[3 * k + 2] += dgg * (-0.5 * dy * dy);
        }
    }

    Mat3 normalized_quaternion_matrix(const std::array<double, 4>& n) {
        const double w = n[0], x = n[1], y = n[2], z = n[3];
        Mat3 R;
        R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
             2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
        return R;
    }

    struct SplatGrad {
        std::array<double, 2> center{};
        std::array<double, 3> conic{};
        double alpha_eff = 0.0;
        std::array<double, 3> rgb{};
        bool has_rgb = false;
    };

    /// Chains screen-space gradients back to the primitive parameters.
    void project_backward(const GaussianPrimitive& prim, const ProjectedGaussian& s, const Camera& cam,
                          std::uint32_t sh_degree, const RenderOptions& opts, const SplatGrad& sg,
                          PrimitiveGrad& out) {
        // Opacity and importance.
        const bool leaky = opts.gate_mode == GateMode::leaky;
        const double gated = leaky ? gate(prim.beta, opts.gate) : prim.beta;
        const double dgated = leaky ? gate_derivative(prim.beta, opts.gate) : 1.0;
        out.alpha += sg.alpha_eff * gated;
        out.beta += sg.alpha_eff * prim.alpha * dgated;

        Mat3 W;
        W << cam.R[0], cam.R[1], cam.R[2], cam.R[3], cam.R[4], cam.R[5], cam.R[6], cam.R[7], cam.R[8];
        const Vec3 mu(prim.mu[0], prim.mu[1], prim.mu[2]);
        const Vec3 t = W * mu + Vec3(cam.t[0], cam.t[1], cam.t[2]);
        const double x = t.x(), y = t.y(), z = t.z(), z2 = z * z, z3 = z2 * z;
        Eigen::Matrix<double, 2, 3> J;
        J << cam.fx / z, 0.0, -cam.fx * x / z2, 0.0, cam.fy / z, -cam.fy * y / z2;

        const double qn = std::sqrt(prim.rot[0] * prim.rot[0] + prim.rot[1] * prim.rot[1] +
                                    prim.rot[2] * prim.rot[2] + prim.rot[3] * prim.rot[3]);
        const std::array<double, 4> qu{prim.rot[0] / qn, prim.rot[1] / qn, prim.rot[2] / qn, prim.rot[3] / qn};
        const Mat3 Rq = normalized_quaternion_matrix(qu);
        const Vec3 sc(prim.scale[0], prim.scale[1], prim.scale[2]);
        const Mat3 M = Rq * sc.asDiagonal();
        const Mat3 Sigma = M * M.transpose();
        const Eigen::Matrix<double, 2, 3> A = J * W;

        // conic -> covariance
        const double a = s.cov2d[0], b = s.cov2d[1], c = s.cov2d[2];
        const double det = a * c - b * b, det2 = det * det;
        const double gqa = sg.conic[0], gqb = sg.conic[1], gqc = sg.conic[2];
        const double ga = gqa * (-c * c / det2) + gqb * (b * c / det2) + gqc * (1.0 / det - a * c / det2);
        const double gb = gqa * (2.0 * b * c / det2) + gqb * (-1.0 / det - 2.0 * b * b / det2) +
                          gqc * (2.0 * a * b / det2);
        const double gc = gqa * (1.0 / det - a * c / det2) + gqb * (a * b / det2) + gqc * (-a * a / det2);
        Eigen::Matrix2d GC;
        GC << ga, 0.5 * gb, 0.5 * gb, gc;

        const Mat3 dSigma = A.transpose() * GC * A;
        const Eigen::Matrix<double, 2, 3> dA = 2.0 * GC * A * Sigma;
        const Eigen::Matrix<double, 2, 3> dJ = dA * W.transpose();

        Vec3 dt = J.transpose() * Eigen::Vector2d(sg.center[0], sg.center[1]);
        dt.x() += dJ(0, 2) * (-cam.fx / z2);
        dt.y() += dJ(1, 2) * (-cam.fy / z2);
        dt.z() += dJ(0, 0) * (-cam.fx / z2) + dJ(0, 2) * (2.0 * cam.fx * x / z3) + dJ(1, 1) * (-cam.fy / z2) +
                  dJ(1, 2) * (2.0 * cam.fy * y / z3);
        Vec3 dmu = W.transpose() * dt;

        // Sigma = M M^T, M = Rq diag(s)
        const Mat3 dM = 2.0 * dSigma * M;
        Mat3 dR;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                dR(i, j) = dM(i, j) * sc(j);
        for (int j = 0; j < 3; ++j)
            out.scale[j] += dM.col(j).dot(Rq.col(j));

        const double w = qu[0], qx = qu[1], qy = qu[2], qz = qu[3];
        std::array<double, 4> dqn{};
        dqn[0] = 2.0 * (-qz * dR(0, 1) + qy * dR(0, 2) + qz * dR(1, 0) - qx * dR(1, 2) - qy * dR(2, 0) + qx * dR(2, 1));
        dqn[1] = 2.0 * (qy * dR(0, 1) + qz * dR(0, 2) + qy * dR(1, 0) - 2.0 * qx * dR(1, 1) - w * dR(1, 2) +
                        qz * dR(2, 0) + w * dR(2, 1) - 2.0 * qx * dR(2, 2));
        dqn[2] = 2.0 * (-2.0 * qy * dR(0, 0) + qx * dR(0, 1) + w * dR(0, 2) + qx * dR(1, 0) + qz * dR(1, 2) -
                        w * dR(2, 0) + qz * dR(2, 1) - 2.0 * qy * dR(2, 2));
        dqn[3] = 2.0 * (-2.0 * qz * dR(0, 0) - w * dR(0, 1) + qx * dR(0, 2) + w * dR(1, 0) - 2.0 * qz * dR(1, 1) +
                        qy * dR(1, 2) + qx * dR(2, 0) + qy * dR(2, 1));
        double dot = 0.0;
        for (int i = 0; i < 4; ++i)
            dot += dqn[i] * qu[i];
        for (int i = 0; i < 4; ++i)
            out.rot[i] += (dqn[i] - qu[i] * dot) / qn;

        // View-dependent color.
        if (sg.has_rgb) {
            std::array<double, 3> drgb = sg.rgb;
            for (int ch = 0; ch < 3; ++ch)
                if (s.rgb_clamped[ch])
                    drgb[ch] = 0.0;
            const auto cc = cam.center();
            const Vec3 v = mu - Vec3(cc[0], cc[1], cc[2]);
            const double vn = v.norm();
            const std::array<double, 3> dir = vn > 0.0
                                                  ? std::array<double, 3>{v.x() / vn, v.y() / vn, v.z() / vn}
                                                  : std::array<double, 3>{0.0, 0.0, 1.0};
            const auto basis = sh::evaluate_basis(dir, sh_degree, true);
            const std::size_t nb = sh_basis_count(sh_degree);
            Vec3 ddir = Vec3::Zero();
            for (std::size_t j = 0; j < nb; ++j) {
                double coef_dot = 0.0;
                for (int ch = 0; ch < 3; ++ch) {
                    out.sh[3 * j + ch] += drgb[ch] * basis.value[j];
                    coef_dot += drgb[ch] * prim.sh[3 * j + ch];
                }
                ddir += coef_dot * Vec3(basis.grad[j][0], basis.grad[j][1], basis.grad[j][2]);
            }
            if (vn > 0.0) {
                const Vec3 dn(dir[0], dir[1], dir[2]);
                dmu += (ddir - dn * dn.dot(ddir)) / vn;
            }
        }
        for (int i = 0; i < 3; ++i)
            out.mu[i] += dmu(i);
    }

    PrimitiveGrad zero_grad(const GaussianPrimitive& g) {
        PrimitiveGrad pg;
        pg.sh.assign(g.sh.size(), 0.0);
        pg.f_inst.assign(g.f_inst.size(), 0.0);
        if (g.f_sem)
            pg.f_sem.assign(g.f_sem->size(), 0.0);
        return pg;
    }

    std::span<const double> maybe(const FeatureMap& m, std::size_t expected, const char* name) {
        if (m.data.empty())
            return {};
        if (m.data.size() != expected)
            throw ValidationError(fmt::format("render_backward: upstream {} gradient has {} entries, expected {}",
                                              name, m.data.size(), expected));
        return m.data;
    }

} // namespace

CompositeGrad composite_backward(std::span<const ProjectedGaussian> splats, const Payload& payload,
                                 std::uint32_t width, std::uint32_t height, const RenderOptions& opts,
                                 std::span<const double> d_channels, std::span<const double> d_acc) {
    const std::size_t C = payload.channels;
    const std::size_t P = std::size_t{width} * height;
    if (payload.values.size() != splats.size() * C)
        throw ValidationError("composite_backward: payload size mismatch");
    if (d_channels.size() != P * C)
        throw ValidationError("composite_backward: upstream channel gradient size mismatch");
    if (!d_acc.empty() && d_acc.size() != P)
        throw ValidationError("composite_backward: upstream opacity gradient size mismatch");

    const detail::TileGrid grid = detail::bin_tiles(splats, width, height, opts.tile);
    const unsigned workers = resolve_threads(opts);
    auto make = [&] {
        CompositeGrad g;
        g.payload.assign(splats.size() * C, 0.0);
        g.alpha_eff.assign(splats.size(), 0.0);
        g.center2d.assign(splats.size() * 2, 0.0);
        g.conic.assign(splats.size() * 3, 0.0);
        return g;
    };
    std::vector<CompositeGrad> parts;
    for (unsigned w = 0; w < workers; ++w)
        parts.push_back(make());

    detail::parallel_for(grid.lists.size(), workers, [&](std::size_t tb, std::size_t te, unsigned worker) {
        std::vector<Hit> hits;
        CompositeGrad& g = parts[worker];
        for (std::size_t tile = tb; tile < te; ++tile) {
            const auto& list = grid.lists[tile];
            if (list.empty())
                continue;
            const std::uint32_t tx = static_cast<std::uint32_t>(tile % grid.tiles_x);
            const std::uint32_t ty = static_cast<std::uint32_t>(tile / grid.tiles_x);
            const std::uint32_t x0 = tx * grid.tile, y0 = ty * grid.tile;
            const std::uint32_t x1 = std::min(width, x0 + grid.tile), y1 = std::min(height, y0 + grid.tile);
            for (std::uint32_t y = y0; y < y1; ++y)
                for (std::uint32_t x = x0; x < x1; ++x) {
                    const std::size_t p = std::size_t{y} * width + x;
                    backward_pixel(splats, payload, list, x + 0.5, y + 0.5, opts, d_channels.data() + p * C,
                                   d_acc.empty() ? 0.0 : d_acc[p], hits, g);
                }
        }
    });

    CompositeGrad total = std::move(parts.front());
    for (std::size_t w = 1; w < parts.size(); ++w) {
        auto add = [](std::vector<double>& dst, const std::vector<double>& src) {
            for (std::size_t i = 0; i < dst.size(); ++i)
                dst[i] += src[i];
        };
        add(total.payload, parts[w].payload);
        add(total.alpha_eff, parts[w].alpha_eff);
        add(total.center2d, parts[w].center2d);
        add(total.conic, parts[w].conic);
    }
    return total;
}

BundleGrad render_backward(const SceneBundle& bundle, const RenderTape& tape, const RenderUpstream& up) {
    if (!tape.recorded)
        throw NumericError("render_backward: missing forward tape");
    if (tape.fine_count != bundle.fine.size() || tape.coarse_count != bundle.coarse.size() ||
        tape.sh_degree != bundle.dims.sh_degree)
        throw NumericError("render_backward: tape was recorded for a different bundle");

    const Camera& cam = tape.camera;
    const RenderOptions& opts = tape.options;
    const SceneDims& d = bundle.dims;
    const std::size_t P = std::size_t{cam.width} * cam.height;

    BundleGrad out;
    out.fine.reserve(bundle.fine.size());
    for (const auto& g : bundle.fine)
        out.fine.push_back(zero_grad(g));
    out.coarse.reserve(bundle.coarse.size());
    for (const auto& g : bundle.coarse)
        out.coarse.push_back(zero_grad(g));

    const auto d_rgb = maybe(up.d_rgb, P * 3, "rgb");
    const auto d_inst = maybe(up.d_inst, P * d.n_dim, "instance");
    const auto d_sem = maybe(up.d_sem, P * d.m_dim, "semantic");
    const auto d_acc = maybe(up.d_acc, P, "opacity");

    // Fine field.
    if (!d_rgb.empty() || !d_inst.empty() || !d_acc.empty()) {
        const auto& splats = tape.fine.splats;
        const std::size_t N = d.n_dim;
        Payload payload;
        payload.channels = 3 + N;
        payload.values.reserve(splats.size() * payload.channels);
        for (const auto& s : splats) {
            payload.values.insert(payload.values.end(), s.rgb.begin(), s.rgb.end());
            const auto& f = bundle.fine[s.source_index].f_inst;
            payload.values.insert(payload.values.end(), f.begin(), f.end());
        }
        std::vector<double> d_channels(P * payload.channels, 0.0);
        for (std::size_t p = 0; p < P; ++p) {
            double* dst = d_channels.data() + p * payload.channels;
            if (!d_rgb.empty())
                std::copy(d_rgb.begin() + p * 3, d_rgb.begin() + p * 3 + 3, dst);
            if (!d_inst.empty())
                std::copy(d_inst.begin() + p * N, d_inst.begin() + (p + 1) * N, dst + 3);
        }
        const CompositeGrad cg = composite_backward(splats, payload, cam.width, cam.height, opts, d_channels, d_acc);
        for (std::size_t k = 0; k < splats.size(); ++k) {
            const std::size_t src = splats[k].source_index;
            SplatGrad sg;
            sg.center = {cg.center2d[2 * k], cg.center2d[2 * k + 1]};
            sg.conic = {cg.conic[3 * k], cg.conic[3 * k + 1], cg.conic[3 * k + 2]};
            sg.alpha_eff = cg.alpha_eff[k];
            sg.has_rgb = true;
            for (int c = 0; c < 3; ++c)
                sg.rgb[c] = cg.payload[k * payload.channels + c];
            for (std::size_t c = 0; c < N; ++c)
                out.fine[src].f_inst[c] += cg.payload[k * payload.channels + 3 + c];
            project_backward(bundle.fine[src], splats[k], cam, tape.sh_degree, opts, sg, out.fine[src]);
        }
    }

    // Coarse field.
    if (!d_sem.empty()) {
        if (!tape.request.sem)
            throw NumericError("render_backward: semantic gradient given but the forward pass skipped the coarse field");
        const auto& splats = tape.coarse.splats;
        Payload payload;
        payload.channels = d.m_dim;
        payload.values.reserve(splats.size() * d.m_dim);
        for (const auto& s : splats) {
            const auto& f = *bundle.coarse[s.source_index].f_sem;
            payload.values.insert(payload.values.end(), f.begin(), f.end());
        }
        const CompositeGrad cg = composite_backward(splats, payload, cam.width, cam.height, opts, d_sem, {});
        for (std::size_t k = 0; k < splats.size(); ++k) {
            const std::size_t src = splats[k].source_index;
            SplatGrad sg;
            sg.center = {cg.center2d[2 * k], cg.center2d[2 * k + 1]};
            sg.conic = {cg.conic[3 * k], cg.conic[3 * k + 1], cg.conic[3 * k + 2]};
            sg.alpha_eff = cg.alpha_eff[k];
            for (std::size_t c = 0; c < d.m_dim; ++c)
                out.coarse[src].f_sem[c] += cg.payload[k * d.m_dim + c];
            project_backward(bundle.coarse[src], splats[k], cam, tape.sh_degree, opts, sg, out.coarse[src]);
        }
    }
    return out;
}

} // namespace splatfield
