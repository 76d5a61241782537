#include "splatfield/scene.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <vector>

namespace splatfield {

namespace {

    constexpr std::size_t kBundleLevel = std::numeric_limits<std::size_t>::max();

    bool finite_all(std::span<const double> v) {
        for (double x : v)
            if (!std::isfinite(x))
                return false;
        return true;
    }

    void check_primitive(const GaussianPrimitive& g, FieldKind field, std::size_t index,
                         const SceneDims& dims, std::vector<Violation>& out) {
        auto report = [&](const char* member, std::string msg) {
            out.push_back({field, index, member, std::move(msg)});
        };

        if (!finite_all(g.mu))
            report("mu", "non-finite center");
        if (!(g.alpha >= 0.0 && g.alpha <= 1.0))
            report("alpha", fmt::format("opacity {} outside [0,1]", g.alpha));
        if (!(g.beta >= 0.0 && g.beta <= 1.0))
            report("beta", fmt::format("importance {} outside [0,1]", g.beta));
        for (int k = 0; k < 3; ++k) {
            if (!(g.scale[k] > 0.0) || !std::isfinite(g.scale[k])) {
                report("scale", fmt::format("scale[{}] = {} is not strictly positive", k, g.scale[k]));
                break;
            }
        }
        const double qn = std::sqrt(g.rot[0] * g.rot[0] + g.rot[1] * g.rot[1] + g.rot[2] * g.rot[2] +
                                    g.rot[3] * g.rot[3]);
        if (!(std::abs(qn - 1.0) <= kQuatTolerance))
            report("rot", fmt::format("quaternion norm {} differs from 1", qn));
        if (g.sh.size() != sh_length(dims.sh_degree))
            report("sh", fmt::format("length {} but degree {} needs {}", g.sh.size(), dims.sh_degree,
                                     sh_length(dims.sh_degree)));
        else if (!finite_all(g.sh))
            report("sh", "non-finite coefficient");
        if (g.f_inst.size() != dims.n_dim)
            report("f_inst", fmt::format("length {} but N = {}", g.f_inst.size(), dims.n_dim));
        else if (!finite_all(g.f_inst))
            report("f_inst", "non-finite entry");

        if (field == FieldKind::fine) {
            if (g.f_sem)
                report("f_sem", "fine primitive carries a semantic feature");
        } else if (!g.f_sem) {
            report("f_sem", "coarse primitive is missing its semantic feature");
        } else if (g.f_sem->size() != dims.m_dim) {
            report("f_sem", fmt::format("length {} but M = {}", g.f_sem->size(), dims.m_dim));
        } else if (!finite_all(*g.f_sem)) {
            report("f_sem", "non-finite entry");
        }
    }

} // namespace

std::vector<Violation> validate_bundle(const SceneBundle& bundle) {
    std::vector<Violation> out;
    const SceneDims& d = bundle.dims;
    auto bundle_issue = [&](const char* member, std::string msg) {
        out.push_back({FieldKind::fine, kBundleLevel, member, std::move(msg)});
    };
    if (d.views == 0)
        bundle_issue("views", "view count must be positive");
    if (d.height == 0 || d.width == 0)
        bundle_issue("height/width", "pixel grid must be non-empty");
    if (d.downsample == 0 || (d.height % d.downsample) != 0 || (d.width % d.downsample) != 0)
        bundle_issue("downsample", fmt::format("ratio {} does not divide {}x{}", d.downsample, d.height, d.width));
    if (d.n_dim == 0)
        bundle_issue("n_dim", "instance feature dimension must be positive");
    if (d.m_dim == 0)
        bundle_issue("m_dim", "semantic feature dimension must be positive");

    for (std::size_t i = 0; i < bundle.fine.size(); ++i)
        check_primitive(bundle.fine[i], FieldKind::fine, i, d, out);
    for (std::size_t i = 0; i < bundle.coarse.size(); ++i)
        check_primitive(bundle.coarse[i], FieldKind::coarse, i, d, out);
    return out;
}

std::string describe(const Violation& v) {
    const char* field = v.field == FieldKind::fine ? "fine" : "coarse";
    if (v.index == kBundleLevel)
        return fmt::format("bundle.{}: {}", v.member, v.message);
    return fmt::format("{}[{}].{}: {}", field, v.index, v.member, v.message);
}

void normalize_quaternion(std::array<double, 4>& q) {
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (!(n > 0.0) || !std::isfinite(n)) {
        q = {1.0, 0.0, 0.0, 0.0};
        return;
    }
    for (double& x : q)
        x /= n;
}

void renormalize_rotations(SceneBundle& bundle) {
    for (auto& g : bundle.fine)
        normalize_quaternion(g.rot);
    for (auto& g : bundle.coarse)
        normalize_quaternion(g.rot);
}

namespace {

    void to_float(std::span<double> values) {
        for (double& x : values)
            x = static_cast<double>(static_cast<float>(x));
    }

    void to_float(GaussianPrimitive& g) {
        to_float(g.mu);
        to_float(std::span(&g.alpha, 1));
        to_float(g.rot);
        to_float(g.scale);
        to_float(g.sh);
        to_float(std::span(&g.beta, 1));
        to_float(g.f_inst);
        if (g.f_sem)
            to_float(*g.f_sem);
    }

} // namespace

void quantize_to_float(SceneBundle& bundle) {
    for (auto& g : bundle.fine)
        to_float(g);
    for (auto& g : bundle.coarse)
        to_float(g);
}

std::array<double, 3> Camera::center() const {
    return {-(R[0] * t[0] + R[3] * t[1] + R[6] * t[2]),
            -(R[1] * t[0] + R[4] * t[1] + R[7] * t[2]),
            -(R[2] * t[0] + R[5] * t[1] + R[8] * t[2])};
}

std::string check_camera(const Camera& cam) {
    if (cam.width == 0 || cam.height == 0)
        return "camera image size must be positive";
    if (!(cam.fx > 0.0) || !(cam.fy > 0.0))
        return fmt::format("focal lengths must be positive (fx={}, fy={})", cam.fx, cam.fy);
    if (!(cam.cx >= 0.0 && cam.cx < cam.width) || !(cam.cy >= 0.0 && cam.cy < cam.height))
        return fmt::format("principal point ({}, {}) outside the {}x{} image", cam.cx, cam.cy, cam.width,
                           cam.height);
    for (double x : cam.t)
        if (!std::isfinite(x))
            return "translation is not finite";
    // R R^T = I
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k)
                s += cam.R[3 * i + k] * cam.R[3 * j + k];
            if (!(std::abs(s - (i == j ? 1.0 : 0.0)) <= 1e-6))
                return "rotation is not orthonormal";
        }
    }
    return {};
}

std::string check_masks(const InstanceMaskSet& masks) {
    if (masks.ids.size() != std::size_t{masks.height} * masks.width)
        return fmt::format("mask holds {} ids for a {}x{} grid", masks.ids.size(), masks.height, masks.width);
    std::vector<bool> seen(std::size_t{masks.m} + 1, false);
    for (std::size_t p = 0; p < masks.ids.size(); ++p) {
        if (masks.ids[p] > masks.m)
            return fmt::format("pixel {} has id {} > m = {}", p, masks.ids[p], masks.m);
        seen[masks.ids[p]] = true;
    }
    for (std::uint32_t k = 1; k <= masks.m; ++k)
        if (!seen[k])
            return fmt::format("instance {} never occurs", k);
    return {};
}

bool FeatureMap::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x))
            return false;
    return true;
}

} // namespace splatfield
