#pragma once

#include <array>

#include "mfsod/layers.hpp"
#include "mfsod/ops.hpp"
#include "mfsod/resize.hpp"

namespace mfsod {

/// Working set of one decoder pass. Stage j (0-based here, 1-based in docs)
/// operates at the resolution of network level j+2.
template <typename T>
struct LfdfStageBank {
    std::array<VarPtr<T>, 4> reduced{};
    std::array<VarPtr<T>, 4> forward_feats{}, forward_maps{};
    std::array<VarPtr<T>, 4> backward_feats{}, backward_maps{};
};

/// Decoder fusing feature-level and decision-level information. Every
/// internal feature runs at 64 channels; a shallow-to-deep sweep and a
/// deep-to-shallow sweep each emit one saliency logit map per stage, and
/// the final head mixes the shallowest backward feature with all six
/// intermediate maps.
template <typename T>
struct LfdfModule {
    static constexpr int kChannels = 64;

    std::array<Conv2d<T>, 4> reduce;    // 1x1, level channels -> 64
    std::array<Conv2d<T>, 4> fwd_agg;   // 3x3 over concatenated stages (+ lower map)
    std::array<Conv2d<T>, 4> fwd_pred;  // 1x1 -> saliency logits
    std::array<Conv2d<T>, 4> bwd_agg;
    std::array<Conv2d<T>, 4> bwd_pred;
    Conv2d<T> final_head;  // 1x1 over feat + six maps

    LfdfModule() = default;
    LfdfModule(const std::array<int, 4>& in_channels, Rng& rng) {
        for (int j = 0; j < 4; ++j)
            reduce[j] = Conv2d<T>(in_channels[j], kChannels, 1, 1, 0, 1, true, rng);
        for (int j = 0; j < 4; ++j) {
            int in_c = 4 * kChannels + (j > 0 ? 1 : 0);
            fwd_agg[j] = Conv2d<T>(in_c, kChannels, 3, 1, 1, 1, true, rng);
            fwd_pred[j] = Conv2d<T>(kChannels, 1, 1, 1, 0, 1, true, rng);
        }
        for (int j = 0; j < 4; ++j) {
            int in_c = j == 3 ? kChannels + 1 : 2 * kChannels + 2;
            bwd_agg[j] = Conv2d<T>(in_c, kChannels, 3, 1, 1, 1, true, rng);
            bwd_pred[j] = Conv2d<T>(kChannels, 1, 1, 1, 0, 1, true, rng);
        }
        final_head = Conv2d<T>(kChannels + 6, 1, 1, 1, 0, 1, true, rng);
    }

    VarPtr<T> reduce_channels(const VarPtr<T>& features, int stage) const {
        return reduce.at(stage)(features);
    }

    static VarPtr<T> fuse_level2(const VarPtr<T>& rgb_l2, const VarPtr<T>& depth_l2) {
        return add(rgb_l2, depth_l2);
    }

    /// Shallow-to-deep sweep. Each stage sees every reduced stage resized to
    /// its own resolution; stages after the first also see the previous
    /// stage's saliency map.
    void forward_aggregate(LfdfStageBank<T>& bank) const {
        for (int j = 0; j < 4; ++j)
            if (!bank.reduced[j]) throw StateError("forward_aggregate: reduced stage missing");
        for (int j = 0; j < 4; ++j) {
            const int th = bank.reduced[j]->value.h, tw = bank.reduced[j]->value.w;
            std::vector<VarPtr<T>> inputs;
            for (int k = 0; k < 4; ++k) inputs.push_back(bilinear_resize(bank.reduced[k], th, tw));
            if (j > 0) inputs.push_back(bilinear_resize(bank.forward_maps[j - 1], th, tw));
            bank.forward_feats[j] = relu(fwd_agg[j](concat_channels(inputs)));
            bank.forward_maps[j] = fwd_pred[j](bank.forward_feats[j]);
        }
    }

    /// Deep-to-shallow sweep over the forward results. The deepest stage
    /// re-reads only its own feature/map pair; shallower stages also take
    /// the next deeper backward feature/map, resized up.
    void backward_aggregate(LfdfStageBank<T>& bank) const {
        for (int j = 0; j < 4; ++j)
            if (!bank.forward_feats[j] || !bank.forward_maps[j])
                throw StateError("backward_aggregate: forward results missing");
        for (int j = 3; j >= 0; --j) {
            std::vector<VarPtr<T>> inputs;
            if (j < 3) {
                const int th = bank.forward_feats[j]->value.h, tw = bank.forward_feats[j]->value.w;
                inputs.push_back(bilinear_resize(bank.backward_feats[j + 1], th, tw));
                inputs.push_back(bilinear_resize(bank.backward_maps[j + 1], th, tw));
            }
            inputs.push_back(bank.forward_feats[j]);
            inputs.push_back(bank.forward_maps[j]);
            bank.backward_feats[j] = relu(bwd_agg[j](concat_channels(inputs)));
            bank.backward_maps[j] = bwd_pred[j](bank.backward_feats[j]);
        }
    }

    /// Final logits at stage-1 resolution, from the shallowest backward
    /// feature plus the six deeper maps of both sweeps.
    VarPtr<T> final_logits_stage(const LfdfStageBank<T>& bank) const {
        for (int j = 0; j < 4; ++j)
            if (!bank.backward_feats[j] || !bank.backward_maps[j])
                throw StateError("final_prediction: backward results missing");
        const int th = bank.backward_feats[0]->value.h, tw = bank.backward_feats[0]->value.w;
        std::vector<VarPtr<T>> inputs = {bank.backward_feats[0]};
        for (int j = 1; j < 4; ++j) inputs.push_back(bilinear_resize(bank.backward_maps[j], th, tw));
        for (int j = 1; j < 4; ++j) inputs.push_back(bilinear_resize(bank.forward_maps[j], th, tw));
        return final_head(concat_channels(inputs));
    }

    /// Full-resolution saliency probabilities in [0,1].
    VarPtr<T> final_prediction(const LfdfStageBank<T>& bank, int out_h, int out_w) const {
        return sigmoid(bilinear_resize(final_logits_stage(bank), out_h, out_w));
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) {
        for (int j = 0; j < 4; ++j) {
            std::string stage = std::to_string(j + 1);
            reduce[j].visit(prefix + ".reduce" + stage, params, buffers);
            fwd_agg[j].visit(prefix + ".fwd_agg" + stage, params, buffers);
            fwd_pred[j].visit(prefix + ".fwd_pred" + stage, params, buffers);
            bwd_agg[j].visit(prefix + ".bwd_agg" + stage, params, buffers);
            bwd_pred[j].visit(prefix + ".bwd_pred" + stage, params, buffers);
        }
        final_head.visit(prefix + ".final_head", params, buffers);
    }
};

}  // namespace mfsod
