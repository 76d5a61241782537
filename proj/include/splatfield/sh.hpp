#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace splatfield::sh {

inline constexpr double kC0 = 0.28209479177387814;
inline constexpr std::uint32_t kMaxDegree = 3;

/// Real SH basis values for a unit direction, up to degree 3 (16 entries).
struct Basis {
    std::array<double, 16> value{};
    std::array<std::array<double, 3>, 16> grad{};  ///< d value / d dir
};

Basis evaluate_basis(const std::array<double, 3>& dir, std::uint32_t degree, bool with_grad);

/// Color before clamping: sum_j sh[3j+ch] * Y_j(dir) + 0.5.
std::array<double, 3> raw_color(std::span<const double> coeffs, const Basis& basis, std::uint32_t degree);

/// Inverse of the degree-0 term: coefficient that yields `color` with no higher bands.
inline double dc_from_color(double color) { return (color - 0.5) / kC0; }

} // namespace splatfield::sh
