#include "splatfield/sh.hpp"

#include "splatfield/errors.hpp"
#include "splatfield/scene.hpp"

namespace splatfield::sh {

namespace {
    constexpr double kC1 = 0.4886025119029199;
    constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                               0.5462742152960396};
    constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658, 0.3731763325901154,
                               -0.4570457994644658, 1.445305721320277, -0.5900435899266435};
} // namespace

Basis evaluate_basis(const std::array<double, 3>& dir, std::uint32_t degree, bool with_grad) {
    if (degree > kMaxDegree)
        throw ValidationError("SH degree above 3 is not supported");
    Basis b;
    b.value[0] = kC0;
    if (degree == 0)
        return b;

    const double x = dir[0], y = dir[1], z = dir[2];
    b.value[1] = -kC1 * y;
    b.value[2] = kC1 * z;
    b.value[3] = -kC1 * x;
    if (with_grad) {
        b.grad[1] = {0.0, -kC1, 0.0};
        b.grad[2] = {0.0, 0.0, kC1};
        b.grad[3] = {-kC1, 0.0, 0.0};
    }
    if (degree == 1)
        return b;

    const double xx = x * x, yy = y * y, zz = z * z;
    b.value[4] = kC2[0] * x * y;
    b.value[5] = kC2[1] * y * z;
    b.value[6] = kC2[2] * (2.0 * zz - xx - yy);
    b.value[7] = kC2[3] * x * z;
    b.value[8] = kC2[4] * (xx - yy);
    if (with_grad) {
        b.grad[4] = {kC2[0] * y, kC2[0] * x, 0.0};
        b.grad[5] = {0.0, kC2[1] * z, kC2[1] * y};
        b.grad[6] = {-2.0 * kC2[2] * x, -2.0 * kC2[2] * y, 4.0 * kC2[2] * z};
        b.grad[7] = {kC2[3] * z, 0.0, kC2[3] * x};
        b.grad[8] = {2.0 * kC2[4] * x, -2.0 * kC2[4] * y, 0.0};
    }
    if (degree == 2)
        return b;

    b.value[9] = kC3[0] * y * (3.0 * xx - yy);
    b.value[10] = kC3[1] * x * y * z;
    b.value[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    b.value[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b.value[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    b.value[14] = kC3[5] * z * (xx - yy);
    b.value[15] = kC3[6] * x * (xx - 3.0 * yy);
    if (with_grad) {
        b.grad[9] = {kC3[0] * 6.0 * x * y, kC3[0] * (3.0 * xx - 3.0 * yy), 0.0};
        b.grad[10] = {kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y};
        b.grad[11] = {-2.0 * kC3[2] * x * y, kC3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * kC3[2] * y * z};
        b.grad[12] = {-6.0 * kC3[3] * x * z, -6.0 * kC3[3] * y * z, kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)};
        b.grad[13] = {kC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kC3[4] * x * y, 8.0 * kC3[4] * x * z};
        b.grad[14] = {2.0 * kC3[5] * x * z, -2.0 * kC3[5] * y * z, kC3[5] * (xx - yy)};
        b.grad[15] = {kC3[6] * (3.0 * xx - 3.0 * yy), -6.0 * kC3[6] * x * y, 0.0};
    }
    return b;
}

std::array<double, 3> raw_color(std::span<const double> coeffs, const Basis& basis, std::uint32_t degree) {
    std::array<double, 3> rgb{0.5, 0.5, 0.5};
    const std::size_t n = sh_basis_count(degree);
    for (std::size_t j = 0; j < n; ++j)
        for (int ch = 0; ch < 3; ++ch)
            rgb[ch] += coeffs[3 * j + ch] * basis.value[j];
    return rgb;
}

} // namespace splatfield::sh
