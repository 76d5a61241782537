#include "splatfield/eval.hpp"

#include "splatfield/errors.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>

namespace splatfield {

namespace {

    void require_same(const FeatureMap& a, const FeatureMap& b, const char* what) {
        if (!a.same_shape(b))
            throw ValidationError(fmt::format("{}: shape mismatch {}x{}x{} vs {}x{}x{}", what, a.height, a.width,
                                              a.channels, b.height, b.width, b.channels));
        if (a.data.empty())
            throw ValidationError(fmt::format("{}: empty image", what));
    }

    std::vector<double> grayscale(const FeatureMap& m) {
        std::vector<double> g(m.pixels(), 0.0);
        for (std::size_t p = 0; p < m.pixels(); ++p) {
            double s = 0.0;
            for (double x : m.pixel(p))
                s += x;
            g[p] = s / m.channels;
        }
        return g;
    }

    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;

    std::array<double, kWin> gaussian_1d() {
        std::array<double, kWin> w{};
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - kWin / 2;
            w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
            sum += w[i];
        }
        for (double& x : w)
            x /= sum;
        return w;
    }

    /// Separable valid-region filter.
    std::vector<double> filter_valid(const std::vector<double>& img, std::uint32_t h, std::uint32_t w,
                                     const std::array<double, kWin>& k) {
        const std::uint32_t ow = w - kWin + 1, oh = h - kWin + 1;
        std::vector<double> tmp(std::size_t{h} * ow, 0.0), out(std::size_t{oh} * ow, 0.0);
        for (std::uint32_t r = 0; r < h; ++r)
            for (std::uint32_t c = 0; c < ow; ++c) {
                double s = 0.0;
                for (int i = 0; i < kWin; ++i)
                    s += k[i] * img[std::size_t{r} * w + c + i];
                tmp[std::size_t{r} * ow + c] = s;
            }
        for (std::uint32_t r = 0; r < oh; ++r)
            for (std::uint32_t c = 0; c < ow; ++c) {
                double s = 0.0;
                for (int i = 0; i < kWin; ++i)
                    s += k[i] * tmp[std::size_t{r + i} * ow + c];
                out[std::size_t{r} * ow + c] = s;
            }
        return out;
    }

    double choose2(double n) { return n * (n - 1.0) / 2.0; }

} // namespace

double psnr(const FeatureMap& a, const FeatureMap& b) {
    require_same(a, b, "psnr");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.data.size());
    if (mse < 1e-10)
        return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const FeatureMap& a, const FeatureMap& b) {
    require_same(a, b, "ssim");
    if (a.height < kWin || a.width < kWin)
        throw ValidationError(fmt::format("ssim: {}x{} image is smaller than the {}x{} window", a.height, a.width,
                                          kWin, kWin));
    const auto k = gaussian_1d();
    const auto x = grayscale(a), y = grayscale(b);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, a.height, a.width, k);
    const auto my = filter_valid(y, a.height, a.width, k);
    const auto sxx = filter_valid(xx, a.height, a.width, k);
    const auto syy = filter_valid(yy, a.height, a.width, k);
    const auto sxy = filter_valid(xy, a.height, a.width, k);
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cxy = sxy[i] - mx[i] * my[i];
        sum += ((2.0 * mx[i] * my[i] + C1) * (2.0 * cxy + C2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    return sum / static_cast<double>(mx.size());
}

SegMetrics seg_metrics(const InstanceMaskSet& pred, const InstanceMaskSet& gt, std::uint32_t class_count,
                       std::span<const std::uint8_t> valid) {
    if (pred.height != gt.height || pred.width != gt.width || pred.ids.size() != gt.ids.size())
        throw ValidationError(fmt::format("seg_metrics: {}x{} prediction vs {}x{} ground truth", pred.height,
                                          pred.width, gt.height, gt.width));
    if (!valid.empty() && valid.size() != gt.ids.size())
        throw ValidationError("seg_metrics: validity mask has the wrong size");
    if (class_count == 0)
        throw ValidationError("seg_metrics: class count must be positive");

    std::vector<std::size_t> inter(class_count, 0), pred_n(class_count, 0), gt_n(class_count, 0);
    SegMetrics out;
    std::size_t correct = 0;
    for (std::size_t p = 0; p < gt.ids.size(); ++p) {
        if (!valid.empty() && !valid[p])
            continue;
        const auto g = gt.ids[p], q = pred.ids[p];
        if (g >= class_count || q >= class_count)
            throw ValidationError(fmt::format("seg_metrics: id {} at pixel {} is not below class count {}",
                                              std::max(g, q), p, class_count));
        ++gt_n[g];
        ++pred_n[q];
        if (g == q) {
            ++inter[g];
            ++correct;
        }
        ++out.pixels;
    }
    out.iou.assign(class_count, -1.0);
    double sum = 0.0;
    for (std::uint32_t c = 0; c < class_count; ++c) {
        if (gt_n[c] == 0)
            continue;
        out.iou[c] = static_cast<double>(inter[c]) / static_cast<double>(gt_n[c] + pred_n[c] - inter[c]);
        sum += out.iou[c];
        ++out.classes_present;
    }
    out.miou = out.classes_present ? sum / static_cast<double>(out.classes_present) : 0.0;
    out.accuracy = out.pixels ? static_cast<double>(correct) / static_cast<double>(out.pixels) : 0.0;
    return out;
}

double adjusted_rand_index(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
    if (a.size() != b.size())
        throw ValidationError("adjusted_rand_index: labelings differ in length");
    const double n = static_cast<double>(a.size());
    std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> table;
    std::map<std::int64_t, std::size_t> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++table[{a[i], b[i]}];
        ++ra[a[i]];
        ++rb[b[i]];
    }
    double index = 0.0, sa = 0.0, sb = 0.0;
    for (const auto& [k, v] : table)
        index += choose2(static_cast<double>(v));
    for (const auto& [k, v] : ra)
        sa += choose2(static_cast<double>(v));
    for (const auto& [k, v] : rb)
        sb += choose2(static_cast<double>(v));
    const double expected = sa * sb / choose2(n);
    const double max_index = 0.5 * (sa + sb);
    if (max_index == expected)
        return 1.0;
    return (index - expected) / (max_index - expected);
}

StorageReport account_counts(std::size_t fine_count, std::size_t coarse_count, const SceneDims& dims,
                             const StorageLayout& layout) {
    StorageReport r;
    r.fine_count = fine_count;
    r.coarse_count = coarse_count;
    r.scalars_geometry = 3 + 1 + 4 + 3 + sh_length(layout.sh_degree) + (layout.include_beta ? 1 : 0);
    r.scalars_per_fine = r.scalars_geometry + dims.n_dim;
    r.scalars_per_coarse = (layout.coarse_geometry ? r.scalars_geometry : 0) + dims.m_dim;
    r.bytes_fine = 4 * fine_count * r.scalars_per_fine;
    r.bytes_coarse = 4 * coarse_count * r.scalars_per_coarse;
    r.bytes_total = r.bytes_fine + r.bytes_coarse;

    const std::size_t D = layout.baseline_semantic_dim ? layout.baseline_semantic_dim : dims.m_dim;
    r.pixelwise_count = dims.pixelwise_fine_count();
    r.baseline_plain_bytes = 4 * r.pixelwise_count * r.scalars_geometry;
    r.baseline_semantic_bytes = 4 * r.pixelwise_count * (r.scalars_geometry + D);
    r.single_field_bytes = 4 * fine_count * (r.scalars_geometry + dims.m_dim);
    return r;
}

StorageReport account(const SceneBundle& bundle, const StorageLayout& layout) {
    return account_counts(bundle.fine.size(), bundle.coarse.size(), bundle.dims, layout);
}

} // namespace splatfield
