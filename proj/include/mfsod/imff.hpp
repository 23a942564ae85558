#pragma once

#include <utility>

#include "mfsod/layers.hpp"
#include "mfsod/ops.hpp"

namespace mfsod {

/// The three pairwise comparisons of the projected unimodal features:
/// sum (total information), product (shared) and difference.
template <typename T>
struct InteractionMaps {
    VarPtr<T> tot, sh, diff;
};

/// Information-weighted fusion of same-level RGB and depth features.
/// Both modalities go through one shared projection; a 1x1 convolution
/// over the interaction maps yields a two-channel score that a per-location
/// softmax turns into blending weights, so the fused output is a convex
/// combination of the two inputs.
template <typename T>
struct ImffModule {
    Conv2d<T> proj;        // shared 3x3 projection, resolution preserving
    Conv2d<T> weight_gen;  // 1x1 over cat(tot, sh, diff) -> 2 score channels

    ImffModule() = default;
    ImffModule(int channels, Rng& rng)
        : proj(channels, channels, 3, 1, 1, 1, true, rng),
          weight_gen(3 * channels, 2, 1, 1, 0, 1, true, rng) {}

    VarPtr<T> project(const VarPtr<T>& features) const { return proj(features); }

    static InteractionMaps<T> interactions(const VarPtr<T>& proj_rgb, const VarPtr<T>& proj_depth) {
        require(proj_rgb->value.same_shape(proj_depth->value),
                "imff interactions: projected feature shapes differ");
        return {add(proj_rgb, proj_depth), mul(proj_rgb, proj_depth), sub(proj_rgb, proj_depth)};
    }

    /// Per-location weights (w_rgb, w_depth); softmax over the channel pair
    /// makes them positive and sum to one.
    std::pair<VarPtr<T>, VarPtr<T>> selection_weights(const InteractionMaps<T>& maps) const {
        auto scores = weight_gen(concat_channels<T>({maps.tot, maps.sh, maps.diff}));
        auto weights = softmax_channels(scores);
        return {slice_channels(weights, 0, 1), slice_channels(weights, 1, 2)};
    }

    static VarPtr<T> weighted_fusion(const VarPtr<T>& rgb, const VarPtr<T>& depth,
                                     const VarPtr<T>& w_rgb, const VarPtr<T>& w_depth) {
        require(rgb->value.same_shape(depth->value), "imff fusion: feature shapes differ");
        return add(mul_channel_broadcast(w_rgb, rgb), mul_channel_broadcast(w_depth, depth));
    }

    VarPtr<T> fuse(const VarPtr<T>& rgb, const VarPtr<T>& depth) const {
        auto maps = interactions(project(rgb), project(depth));
        auto [w_rgb, w_depth] = selection_weights(maps);
        return weighted_fusion(rgb, depth, w_rgb, w_depth);
    }

    size_t param_count() const { return proj.param_count() + weight_gen.param_count(); }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) {
        proj.visit(prefix + ".proj", params, buffers);
        weight_gen.visit(prefix + ".weight_gen", params, buffers);
    }
};

}  // namespace mfsod
