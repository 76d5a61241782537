#include "splatfield/dualfield.hpp"

#include "splatfield/errors.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>

namespace splatfield {

namespace {

    std::vector<double> normalized(std::span<const double> f) {
        double len2 = 0.0;
        for (double x : f)
            len2 += x * x;
        const double len = std::sqrt(len2);
        std::vector<double> out(f.begin(), f.end());
        if (len > 0.0)
            for (double& x : out)
                x /= len;
        return out;
    }

    double dot(std::span<const double> a, std::span<const double> b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
            s += a[i] * b[i];
        return s;
    }

    bool is_zero(std::span<const double> v) {
        for (double x : v)
            if (x != 0.0)
                return false;
        return true;
    }

    /// Disjoint-set forest for the connected-components oracle.
    struct UnionFind {
        std::vector<std::size_t> parent;
        explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
        std::size_t find(std::size_t x) {
            while (parent[x] != x)
                x = parent[x] = parent[parent[x]];
            return x;
        }
        void unite(std::size_t a, std::size_t b) {
            a = find(a);
            b = find(b);
            if (a != b)
                parent[std::max(a, b)] = std::min(a, b);
        }
    };

} // namespace

std::vector<std::size_t> coarse_source_indices(const SceneDims& dims) {
    const std::uint32_t S = dims.downsample;
    if (S == 0 || dims.height % S != 0 || dims.width % S != 0)
        throw ValidationError(fmt::format("downsample ratio {} must divide {}x{}", S, dims.height, dims.width));
    std::vector<std::size_t> idx;
    idx.reserve(dims.pixelwise_coarse_count());
    const std::size_t per_view = std::size_t{dims.height} * dims.width;
    for (std::uint32_t v = 0; v < dims.views; ++v)
        for (std::uint32_t r = 0; r < dims.height / S; ++r)
            for (std::uint32_t c = 0; c < dims.width / S; ++c)
                idx.push_back(v * per_view + std::size_t{r * S + S / 2} * dims.width + (c * S + S / 2));
    return idx;
}

std::vector<GaussianPrimitive> downsample_coarse(std::span<const GaussianPrimitive> fine, const SceneDims& dims) {
    if (fine.size() != dims.pixelwise_fine_count())
        throw ValidationError(fmt::format("downsample_coarse needs a pixel-wise fine field of {} primitives, got {}",
                                          dims.pixelwise_fine_count(), fine.size()));
    std::vector<GaussianPrimitive> coarse;
    for (std::size_t i : coarse_source_indices(dims)) {
        GaussianPrimitive g = fine[i];
        g.f_sem = std::vector<double>(dims.m_dim, 0.0);
        coarse.push_back(std::move(g));
    }
    return coarse;
}

InstanceClustering cluster_instances(std::span<const GaussianPrimitive> fine, double sim_threshold,
                                     ClusterMode mode) {
    if (fine.empty())
        throw ValidationError("cluster_instances: empty fine field");
    if (!(sim_threshold > 0.0 && sim_threshold < 1.0))
        throw ValidationError(fmt::format("similarity threshold {} must lie in (0,1)", sim_threshold));

    std::vector<std::vector<double>> feats;
    feats.reserve(fine.size());
    for (const auto& g : fine) {
        for (double x : g.f_inst)
            if (!std::isfinite(x))
                throw ValidationError("cluster_instances: non-finite instance feature");
        feats.push_back(normalized(g.f_inst));
    }

    InstanceClustering out;
    out.assignment.assign(fine.size(), kUnclustered);
    std::vector<std::vector<double>> sums;

    if (mode == ClusterMode::greedy) {
        for (std::size_t i = 0; i < fine.size(); ++i) {
            if (is_zero(feats[i]))
                continue;
            std::int64_t chosen = kUnclustered;
            for (std::size_t k = 0; k < out.centroids.size(); ++k) {
                if (dot(feats[i], out.centroids[k]) > sim_threshold) {
                    chosen = static_cast<std::int64_t>(k);
                    break;
                }
            }
            if (chosen == kUnclustered) {
                chosen = static_cast<std::int64_t>(out.centroids.size());
                out.centroids.emplace_back(feats[i].size(), 0.0);
                sums.emplace_back(feats[i].size(), 0.0);
                out.members.push_back(0);
            }
            auto& sum = sums[chosen];
            for (std::size_t c = 0; c < sum.size(); ++c)
                sum[c] += feats[i][c];
            ++out.members[chosen];
            out.centroids[chosen] = normalized(sum);
            out.assignment[i] = chosen;
        }
    } else {
        UnionFind uf(fine.size());
        for (std::size_t i = 0; i < fine.size(); ++i) {
            if (is_zero(feats[i]))
                continue;
            for (std::size_t j = i + 1; j < fine.size(); ++j)
                if (!is_zero(feats[j]) && dot(feats[i], feats[j]) > sim_threshold)
                    uf.unite(i, j);
        }
        // Clusters numbered by their lowest member index.
        std::vector<std::int64_t> root_cluster(fine.size(), kUnclustered);
        for (std::size_t i = 0; i < fine.size(); ++i) {
            if (is_zero(feats[i]))
                continue;
            const std::size_t r = uf.find(i);
            if (root_cluster[r] == kUnclustered) {
                root_cluster[r] = static_cast<std::int64_t>(sums.size());
                sums.emplace_back(feats[i].size(), 0.0);
                out.members.push_back(0);
            }
            const auto k = root_cluster[r];
            for (std::size_t c = 0; c < feats[i].size(); ++c)
                sums[k][c] += feats[i][c];
            ++out.members[k];
            out.assignment[i] = k;
        }
        for (const auto& s : sums)
            out.centroids.push_back(normalized(s));
    }
    out.sem_labels.assign(out.centroids.size(), std::nullopt);
    out.votes.assign(out.centroids.size(), 0);
    return out;
}

InstanceClustering attach_semantics(InstanceClustering clustering, std::span<const GaussianPrimitive> coarse) {
    if (clustering.size() == 0)
        throw ValidationError("attach_semantics: empty clustering");
    std::vector<std::vector<double>> sums(clustering.size());
    std::vector<std::size_t> votes(clustering.size(), 0);
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        const auto& g = coarse[i];
        if (!g.f_sem)
            throw ValidationError(fmt::format("attach_semantics: coarse primitive {} has no semantic feature", i));
        const auto f = normalized(g.f_inst);
        if (is_zero(f))
            continue;
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t k = 0; k < clustering.size(); ++k) {
            if (clustering.centroids[k].size() != f.size())
                throw ValidationError("attach_semantics: instance feature dimension mismatch");
            const double s = dot(f, clustering.centroids[k]);
            if (s > best_sim) {
                best_sim = s;
                best = k;
            }
        }
        auto& sum = sums[best];
        if (sum.empty())
            sum.assign(g.f_sem->size(), 0.0);
        if (sum.size() != g.f_sem->size())
            throw ValidationError("attach_semantics: semantic feature dimension mismatch");
        for (std::size_t c = 0; c < sum.size(); ++c)
            sum[c] += (*g.f_sem)[c];
        ++votes[best];
    }
    for (std::size_t k = 0; k < clustering.size(); ++k) {
        clustering.votes[k] = votes[k];
        if (votes[k] == 0) {
            clustering.sem_labels[k] = std::nullopt;
            continue;
        }
        for (double& x : sums[k])
            x /= static_cast<double>(votes[k]);
        clustering.sem_labels[k] = std::move(sums[k]);
    }
    return clustering;
}

std::vector<std::vector<double>> queries_from_map(const FeatureMap& map) {
    if (map.height != 1)
        throw ValidationError(fmt::format("query map must have height 1, got {}", map.height));
    std::vector<std::vector<double>> q;
    for (std::size_t p = 0; p < map.pixels(); ++p) {
        const auto row = map.pixel(p);
        q.emplace_back(row.begin(), row.end());
    }
    return q;
}

QueryResult query(const InstanceClustering& clustering, std::span<const std::vector<double>> queries,
                  const SceneBundle& bundle, const Camera& cam, const RenderOptions& opts) {
    if (queries.empty())
        throw ValidationError("query: no query vectors");
    if (clustering.assignment.size() != bundle.fine.size())
        throw ValidationError("query: clustering does not match the fine field");
    bool any_label = false;
    for (const auto& l : clustering.sem_labels)
        any_label = any_label || l.has_value();
    if (!any_label)
        throw ValidationError("query: no cluster carries a semantic label");
    if (auto err = check_camera(cam); !err.empty())
        throw ValidationError("query: " + err);

    if (queries.size() >= 0xFFFF)
        throw ValidationError("query: too many query vectors for a 16-bit label image");
    const auto Q = static_cast<std::uint32_t>(queries.size());
    std::vector<std::vector<double>> qn;
    for (const auto& q : queries) {
        if (q.size() != queries[0].size())
            throw ValidationError("query: query vectors differ in length");
        qn.push_back(normalized(q));
    }

    QueryResult res;
    res.cluster_labels.assign(clustering.size(), Q);
    for (std::size_t k = 0; k < clustering.size(); ++k) {
        const auto& label = clustering.sem_labels[k];
        if (!label)
            continue;
        if (label->size() != qn[0].size())
            throw ValidationError(fmt::format("query: vectors have {} channels but cluster labels have {}",
                                              qn[0].size(), label->size()));
        const auto ln = normalized(*label);
        double best = -2.0;
        for (std::uint32_t q = 0; q < Q; ++q) {
            const double s = dot(ln, qn[q]);
            if (s > best) {
                best = s;
                res.cluster_labels[k] = q;
            }
        }
    }
    res.primitive_labels.resize(bundle.fine.size(), Q);
    for (std::size_t i = 0; i < bundle.fine.size(); ++i)
        if (clustering.assignment[i] != kUnclustered)
            res.primitive_labels[i] = res.cluster_labels[clustering.assignment[i]];

    // Render one-hot cluster payloads and take the heaviest cluster per pixel.
    const Projection proj = project(bundle.fine, cam, bundle.dims.sh_degree, opts);
    const std::size_t K = clustering.size();
    Payload payload;
    payload.channels = K;
    payload.values.assign(proj.splats.size() * K, 0.0);
    for (std::size_t s = 0; s < proj.splats.size(); ++s) {
        const auto a = clustering.assignment[proj.splats[s].source_index];
        if (a != kUnclustered)
            payload.values[s * K + a] = 1.0;
    }
    const CompositeOutput comp = composite(proj.splats, payload, cam.width, cam.height, opts);

    res.labels.height = cam.height;
    res.labels.width = cam.width;
    res.labels.m = Q;
    res.labels.ids.assign(std::size_t{cam.width} * cam.height, static_cast<std::uint16_t>(Q));
    res.acc = FeatureMap(cam.height, cam.width, 1);
    for (std::size_t p = 0; p < res.labels.ids.size(); ++p) {
        res.acc.data[p] = 1.0 - comp.transmittance[p];
        double best = 0.0;
        std::size_t best_k = K;
        for (std::size_t k = 0; k < K; ++k) {
            const double w = comp.channels[p * K + k];
            if (w > best) {
                best = w;
                best_k = k;
            }
        }
        if (best_k < K)
            res.labels.ids[p] = static_cast<std::uint16_t>(res.cluster_labels[best_k]);
    }
    return res;
}

} // namespace splatfield
