#pragma once

#include "splatfield/scene.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace splatfield {

/**
 * Synthetic multi-view scene: a textured plane at depth `depth` seen by
 * cameras translated along x. View v is shifted by round((1 - overlap) * W)
 * pixel columns per step, so pixel centers of every view land on the same
 * world grid. A pixel whose world cell was already seen by an earlier view
 * becomes a duplicate primitive: same color, jittered laterally and moved
 * slightly toward the cameras. Duplicates are the ground-truth redundant set.
 *
 * Objects are axis-aligned rectangles inside view 0's footprint; id 0 is the
 * background. Instance features are one-hot class vectors plus Gaussian noise.
 */
struct SynthSpec {
    std::uint64_t seed = 1;
    std::uint32_t views = 2;
    std::uint32_t height = 32;
    std::uint32_t width = 32;
    std::uint32_t objects = 3;
    double overlap = 0.5;      ///< rho in [0,1]
    double noise = 0.0;        ///< sigma of the instance-feature noise
    std::uint32_t downsample = 8;
    std::uint32_t n_dim = 8;
    std::uint32_t m_dim = 512;
    std::uint32_t sh_degree = 0;

    double depth = 4.0;
    double focal = 0.0;            ///< pixels; 0 means equal to width
    double prim_scale = 0.2;       ///< in-plane scale, pixels
    double alpha = 0.95;
    double beta_min = 0.6;         ///< initial importance range
    double beta_max = 0.9;
    double texture = 0.4;          ///< per-cell color variation amplitude
    double jitter = 0.35;          ///< duplicate lateral offset, pixels
    double depth_offset = 0.05;    ///< duplicate offset toward the camera, fraction of depth
    std::uint32_t mask_erosion = 1;///< instance-mask pixels this close to another class become background
};

/// Throws ValidationError for out-of-range fields.
void check_synth_spec(const SynthSpec& spec);

struct SynthScene {
    SceneBundle bundle;
    std::vector<Camera> cameras;
    std::vector<InstanceMaskSet> masks;   ///< per view, eroded, ids compacted to the instances visible there
    std::vector<InstanceMaskSet> classes; ///< per view, global class ids (0 background, k object k)
    std::vector<FeatureMap> rgb;          ///< reference renders of the duplicate-free scene
    std::vector<FeatureMap> sem;          ///< one-hot class targets, C = m_dim
    Camera heldout_camera;                ///< halfway between views 0 and 1
    FeatureMap heldout_rgb;
    InstanceMaskSet heldout_classes;
    std::vector<std::uint8_t> redundant;  ///< per fine primitive
    std::vector<std::uint16_t> fine_class;
};

/// Pure function of `spec`.
SynthScene synth_scene(const SynthSpec& spec);

/// Redundancy labels stored in a bundle's provenance, when present.
std::optional<std::vector<std::uint8_t>> redundancy_labels(const SceneBundle& bundle);

/// Rewrites the provenance so its redundancy labels equal `labels`.
void set_redundancy_labels(SceneBundle& bundle, std::span<const std::uint8_t> labels);

} // namespace splatfield
