#pragma once

#include "splatfield/raster.hpp"
#include "splatfield/scene.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace splatfield {

/// Fine indices sampled by `downsample_coarse`, in output order: for each view,
/// pixel (r*S + S/2, c*S + S/2) for r < H/S, c < W/S.
std::vector<std::size_t> coarse_source_indices(const SceneDims& dims);

/// Copies the sampled fine primitives and gives each a zero f_sem of length
/// dims.m_dim. Throws ValidationError unless the fine field is pixel-wise.
std::vector<GaussianPrimitive> downsample_coarse(std::span<const GaussianPrimitive> fine, const SceneDims& dims);

enum class ClusterMode {
    greedy,                ///< centroid-threshold agglomeration in index order
    connected_components,  ///< components of the pairwise similarity graph; O(n^2)
};

inline constexpr std::int64_t kUnclustered = -1;

struct InstanceClustering {
    std::vector<std::int64_t> assignment;             ///< per fine primitive, or kUnclustered
    std::vector<std::vector<double>> centroids;        ///< unit-norm mean instance feature
    std::vector<std::size_t> members;                  ///< primitives per cluster
    std::vector<std::optional<std::vector<double>>> sem_labels;
    std::vector<std::size_t> votes;                    ///< coarse primitives attached per cluster

    std::size_t size() const { return centroids.size(); }
};

/// Clusters fine primitives by cosine similarity of f_inst. Primitives with
/// a zero instance feature stay unclustered. Throws ValidationError on an
/// empty field or a threshold outside (0,1).
InstanceClustering cluster_instances(std::span<const GaussianPrimitive> fine, double sim_threshold = 0.9,
                                     ClusterMode mode = ClusterMode::greedy);

/// Each coarse primitive votes its f_sem to the cluster whose centroid is most
/// similar to its f_inst; votes are averaged.
InstanceClustering attach_semantics(InstanceClustering clustering, std::span<const GaussianPrimitive> coarse);

struct QueryResult {
    InstanceMaskSet labels;                      ///< per pixel query index; m = Q means "other"
    std::vector<std::uint32_t> primitive_labels; ///< per fine primitive
    std::vector<std::uint32_t> cluster_labels;   ///< per cluster
    FeatureMap acc;                              ///< fine-field accumulated opacity
};

/// Labels clusters by their most similar query vector and renders the result.
/// Throws ValidationError when no cluster carries a semantic label.
QueryResult query(const InstanceClustering& clustering, std::span<const std::vector<double>> queries,
                  const SceneBundle& bundle, const Camera& cam, const RenderOptions& opts = {});

/// Rows of an H=1, W=Q, C=M feature map as query vectors.
std::vector<std::vector<double>> queries_from_map(const FeatureMap& map);

} // namespace splatfield
