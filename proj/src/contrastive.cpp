#include "splatfield/loss.hpp"

#include "splatfield/errors.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <random>

namespace splatfield {

namespace {

    constexpr std::size_t kUnpaired = std::numeric_limits<std::size_t>::max();

    /// Labelled pixels with their L2-normalized features.
    struct Normalized {
        std::size_t dim = 0;
        std::vector<std::size_t> pixel;      ///< source pixel index
        std::vector<std::uint16_t> id;       ///< instance id (>= 1)
        std::vector<double> feat;            ///< normalized, dim per entry
        std::vector<double> norm;            ///< pre-normalization length
        std::vector<std::size_t> count;      ///< pixels per instance id, index 0 unused
        std::vector<std::size_t> slot;       ///< pixel index -> labelled slot (kUnpaired if background)
    };

    Normalized normalize(const FeatureMap& inst, const InstanceMaskSet& masks, const ContrastiveOptions& opts) {
        if (inst.height != masks.height || inst.width != masks.width)
            throw ValidationError(fmt::format("contrastive: {}x{} feature map vs {}x{} masks", inst.height,
                                              inst.width, masks.height, masks.width));
        if (inst.channels < 2)
            throw ValidationError("contrastive: instance features need at least 2 channels");
        if (auto err = check_masks(masks); !err.empty())
            throw ValidationError("contrastive: " + err);

        Normalized n;
        n.dim = inst.channels;
        n.count.assign(std::size_t{masks.m} + 1, 0);
        n.slot.assign(inst.pixels(), kUnpaired);
        for (std::size_t p = 0; p < inst.pixels(); ++p) {
            const std::uint16_t id = masks.ids[p];
            if (id == 0)
                continue;
            n.slot[p] = n.pixel.size();
            n.pixel.push_back(p);
            n.id.push_back(id);
            ++n.count[id];
            const auto f = inst.pixel(p);
            double len2 = 0.0;
            for (double x : f)
                len2 += x * x;
            const double len = std::sqrt(len2);
            const double denom = std::max(len, opts.norm_eps);
            n.norm.push_back(len);
            for (double x : f)
                n.feat.push_back(x / denom);
        }
        if (n.pixel.empty())
            throw ValidationError("contrastive: the mask set contains no instance pixels");
        return n;
    }

    double dot(const double* a, const double* b, std::size_t d) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            s += a[i] * b[i];
        return s;
    }

    /// Intra term value and dL/dS from the mean similarity S.
    std::pair<double, double> intra_from_mean(double S, const ContrastiveOptions& opts) {
        const double clamped = std::clamp(S, opts.log_floor, 1.0);
        const double value = -std::log(clamped);
        const double dS = S < opts.log_floor ? 0.0 : -1.0 / clamped;
        return {value, dS};
    }

    /// Chains gradients from normalized features back to the raw map.
    FeatureMap unnormalize_grad(const FeatureMap& inst, const Normalized& n, const std::vector<double>& g_hat,
                                const ContrastiveOptions& opts) {
        FeatureMap grad(inst.height, inst.width, inst.channels);
        const std::size_t d = n.dim;
        for (std::size_t s = 0; s < n.pixel.size(); ++s) {
            const double* fh = n.feat.data() + s * d;
            const double* g = g_hat.data() + s * d;
            auto out = grad.pixel(n.pixel[s]);
            if (n.norm[s] > opts.norm_eps) {
                const double proj = dot(fh, g, d);
                for (std::size_t c = 0; c < d; ++c)
                    out[c] = (g[c] - fh[c] * proj) / n.norm[s];
            } else {
                for (std::size_t c = 0; c < d; ++c)
                    out[c] = g[c] / opts.norm_eps;
            }
        }
        return grad;
    }

    std::uint64_t splitmix64(std::uint64_t& state) {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

} // namespace

ContrastiveResult contrastive_exact(const FeatureMap& inst, const InstanceMaskSet& masks,
                                    const ContrastiveOptions& opts) {
    const Normalized n = normalize(inst, masks, opts);
    const std::size_t L = n.pixel.size(), d = n.dim;

    std::uint64_t intra_pairs = 0, inter_pairs = 0;
    for (std::size_t k = 1; k < n.count.size(); ++k) {
        intra_pairs += std::uint64_t{n.count[k]} * (n.count[k] > 0 ? n.count[k] - 1 : 0);
        inter_pairs += std::uint64_t{n.count[k]} * (L - n.count[k]);
    }
    if (intra_pairs == 0)
        throw ValidationError("contrastive: no instance has two or more pixels");

    // Pairwise sums, ordered pairs u != v.
    double intra_sum = 0.0, inter_sum = 0.0;
    for (std::size_t u = 0; u < L; ++u) {
        const double* fu = n.feat.data() + u * d;
        for (std::size_t v = 0; v < L; ++v) {
            if (v == u)
                continue;
            const double sim = dot(fu, n.feat.data() + v * d, d);
            if (n.id[u] == n.id[v])
                intra_sum += sim;
            else if (opts.include_inter)
                inter_sum += 1.0 - sim;
        }
    }
    if (opts.ops) {
        opts.ops->intra_similarity += intra_pairs;
        opts.ops->inter_similarity += opts.include_inter ? inter_pairs : 0;
        opts.ops->feature_reads += std::uint64_t{L} * L;
    }

    ContrastiveResult res;
    const double S = intra_sum / static_cast<double>(intra_pairs);
    const auto [intra, dS] = intra_from_mean(S, opts);
    res.intra = intra;
    double inter_scale = 0.0;
    if (opts.include_inter && inter_pairs > 0) {
        const bool mean_mode = opts.inter_norm == InterNormalization::mean;
        inter_scale = mean_mode ? 1.0 / static_cast<double>(inter_pairs) : 1.0;
        res.inter = mean_mode ? inter_sum / static_cast<double>(inter_pairs) : inter_sum;
    }
    res.value = res.intra + res.inter;

    // d/dfhat_u of the pair sums through per-instance and global feature sums.
    std::vector<double> sum_all(d, 0.0), sum_inst(n.count.size() * d, 0.0);
    for (std::size_t u = 0; u < L; ++u)
        for (std::size_t c = 0; c < d; ++c) {
            sum_all[c] += n.feat[u * d + c];
            sum_inst[n.id[u] * d + c] += n.feat[u * d + c];
        }
    std::vector<double> g_hat(L * d, 0.0);
    const double intra_coef = dS * 2.0 / static_cast<double>(intra_pairs);
    const double inter_coef = -2.0 * inter_scale;
    for (std::size_t u = 0; u < L; ++u) {
        const std::size_t k = n.id[u];
        for (std::size_t c = 0; c < d; ++c) {
            const double own = n.feat[u * d + c];
            const double same = sum_inst[k * d + c] - own;
            const double other = sum_all[c] - sum_inst[k * d + c];
            g_hat[u * d + c] = intra_coef * same + inter_coef * other;
        }
    }
    res.grad = unnormalize_grad(inst, n, g_hat, opts);
    return res;
}

std::vector<std::size_t> shuffle_partners(const InstanceMaskSet& masks, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> members(std::size_t{masks.m} + 1);
    for (std::size_t p = 0; p < masks.ids.size(); ++p)
        if (masks.ids[p] != 0 && masks.ids[p] <= masks.m)
            members[masks.ids[p]].push_back(p);

    std::vector<std::size_t> partner(masks.ids.size(), kUnpaired);
    std::uint64_t state = seed;
    std::vector<std::size_t> perm;
    for (std::size_t k = 1; k < members.size(); ++k) {
        const auto& mem = members[k];
        const std::size_t n = mem.size();
        if (n < 2)
            continue;
        perm.resize(n);
        for (int attempt = 0; attempt < 16; ++attempt) {
            for (std::size_t i = 0; i < n; ++i)
                perm[i] = i;
            for (std::size_t i = n - 1; i > 0; --i) {
                const std::size_t j = static_cast<std::size_t>(splitmix64(state) % (i + 1));
                std::swap(perm[i], perm[j]);
            }
            bool fixed = false;
            for (std::size_t i = 0; i < n && !fixed; ++i)
                fixed = perm[i] == i;
            if (!fixed)
                break;
        }
        for (std::size_t i = 0; i < n; ++i)
            partner[mem[i]] = mem[perm[i]];
    }
    return partner;
}

ContrastiveResult contrastive_linear(const FeatureMap& inst, const InstanceMaskSet& masks, std::uint64_t seed,
                                     const ContrastiveOptions& opts) {
    const Normalized n = normalize(inst, masks, opts);
    const std::size_t L = n.pixel.size(), d = n.dim;
    const std::vector<std::size_t> partner = shuffle_partners(masks, seed);

    // Intra: one shuffled partner per pixel.
    double intra_sum = 0.0;
    std::size_t paired = 0;
    for (std::size_t u = 0; u < L; ++u) {
        if (n.count[n.id[u]] < 2)
            continue;
        const std::size_t v = n.slot[partner[n.pixel[u]]];
        intra_sum += dot(n.feat.data() + u * d, n.feat.data() + v * d, d);
        ++paired;
    }
    if (paired == 0)
        throw ValidationError("contrastive: no instance has two or more pixels");

    // Inter: instance-mean features.
    std::vector<std::size_t> present;
    for (std::size_t k = 1; k < n.count.size(); ++k)
        if (n.count[k] > 0)
            present.push_back(k);
    const std::size_t m = present.size();
    std::vector<double> mean(n.count.size() * d, 0.0), mean_hat(n.count.size() * d, 0.0),
        mean_len(n.count.size(), 0.0);
    for (std::size_t u = 0; u < L; ++u)
        for (std::size_t c = 0; c < d; ++c)
            mean[n.id[u] * d + c] += n.feat[u * d + c];
    for (std::size_t k : present) {
        double len2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            mean[k * d + c] /= static_cast<double>(n.count[k]);
            len2 += mean[k * d + c] * mean[k * d + c];
        }
        mean_len[k] = std::sqrt(len2);
        const double denom = std::max(mean_len[k], opts.norm_eps);
        for (std::size_t c = 0; c < d; ++c)
            mean_hat[k * d + c] = mean[k * d + c] / denom;
    }

    ContrastiveResult res;
    const double S = intra_sum / static_cast<double>(paired);
    const auto [intra, dS] = intra_from_mean(S, opts);
    res.intra = intra;

    const bool use_inter = opts.include_inter && m >= 2;
    const bool mean_mode = opts.inter_norm == InterNormalization::mean;
    std::vector<double> g_mean_hat(n.count.size() * d, 0.0);
    if (use_inter) {
        double inter_sum = 0.0;
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = 0; b < m; ++b) {
                if (a == b)
                    continue;
                const std::size_t k = present[a], l = present[b];
                const double w = mean_mode ? 1.0 : static_cast<double>(n.count[k]) * static_cast<double>(n.count[l]);
                const double sim = dot(mean_hat.data() + k * d, mean_hat.data() + l * d, d);
                inter_sum += w * (1.0 - sim);
                for (std::size_t c = 0; c < d; ++c) {
                    g_mean_hat[k * d + c] -= w * mean_hat[l * d + c];
                    g_mean_hat[l * d + c] -= w * mean_hat[k * d + c];
                }
            }
        }
        const double scale = mean_mode ? 1.0 / static_cast<double>(m * (m - 1)) : 1.0;
        res.inter = mean_mode ? inter_sum / static_cast<double>(m * (m - 1)) : inter_sum;
        for (double& x : g_mean_hat)
            x *= scale;
    }
    res.value = res.intra + res.inter;
    if (opts.ops) {
        opts.ops->intra_similarity += paired;
        opts.ops->inter_similarity += use_inter ? m * (m - 1) : 0;
        opts.ops->feature_reads += 2 * std::uint64_t{L};
    }

    std::vector<double> g_hat(L * d, 0.0);
    const double intra_coef = dS / static_cast<double>(paired);
    for (std::size_t u = 0; u < L; ++u) {
        if (n.count[n.id[u]] < 2)
            continue;
        const std::size_t v = n.slot[partner[n.pixel[u]]];
        for (std::size_t c = 0; c < d; ++c) {
            g_hat[u * d + c] += intra_coef * n.feat[v * d + c];
            g_hat[v * d + c] += intra_coef * n.feat[u * d + c];
        }
    }
    if (use_inter) {
        // mean_hat = mean / |mean|, mean = sum(fhat) / count
        std::vector<double> g_mean(n.count.size() * d, 0.0);
        for (std::size_t k : present) {
            const double* mh = mean_hat.data() + k * d;
            const double* g = g_mean_hat.data() + k * d;
            if (mean_len[k] > opts.norm_eps) {
                const double proj = dot(mh, g, d);
                for (std::size_t c = 0; c < d; ++c)
                    g_mean[k * d + c] = (g[c] - mh[c] * proj) / mean_len[k];
            } else {
                for (std::size_t c = 0; c < d; ++c)
                    g_mean[k * d + c] = g[c] / opts.norm_eps;
            }
        }
        for (std::size_t u = 0; u < L; ++u) {
            const std::size_t k = n.id[u];
            const double inv = 1.0 / static_cast<double>(n.count[k]);
            for (std::size_t c = 0; c < d; ++c)
                g_hat[u * d + c] += g_mean[k * d + c] * inv;
        }
    }
    res.grad = unnormalize_grad(inst, n, g_hat, opts);
    return res;
}

} // namespace splatfield
