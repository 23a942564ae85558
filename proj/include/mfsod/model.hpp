#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mfsod/backbone.hpp"
#include "mfsod/imff.hpp"
#include "mfsod/lfdf.hpp"
#include "mfsod/tensorfile.hpp"

namespace mfsod {

/// Where the two modalities merge: as a stacked 4-channel input, or by the
/// information-weighted fusion module after k levels of unimodal extraction.
enum class FusionMode { InputConcat, Level1, Level2, Level3, Level4, Level5 };

inline std::string to_string(FusionMode m) {
    switch (m) {
        case FusionMode::InputConcat: return "input_concat";
        case FusionMode::Level1: return "level1";
        case FusionMode::Level2: return "level2";
        case FusionMode::Level3: return "level3";
        case FusionMode::Level4: return "level4";
        case FusionMode::Level5: return "level5";
    }
    return "level3";
}

inline FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "input_concat") return FusionMode::InputConcat;
    if (s == "level1") return FusionMode::Level1;
    if (s == "level2") return FusionMode::Level2;
    if (s == "level3") return FusionMode::Level3;
    if (s == "level4") return FusionMode::Level4;
    if (s == "level5") return FusionMode::Level5;
    throw ConfigError("unknown fusion mode '" + s + "'");
}

inline int fusion_level(FusionMode m) {
    switch (m) {
        case FusionMode::InputConcat: return 0;
        case FusionMode::Level1: return 1;
        case FusionMode::Level2: return 2;
        case FusionMode::Level3: return 3;
        case FusionMode::Level4: return 4;
        case FusionMode::Level5: return 5;
    }
    return 3;
}

inline const std::vector<FusionMode>& all_fusion_modes() {
    static const std::vector<FusionMode> modes = {FusionMode::InputConcat, FusionMode::Level1,
                                                  FusionMode::Level2,      FusionMode::Level3,
                                                  FusionMode::Level4,      FusionMode::Level5};
    return modes;
}

struct ModelConfig {
    BackboneConfig backbone;
    FusionMode fusion_mode = FusionMode::Level3;
    uint64_t seed = 0;

    void validate() const { backbone.validate(); }

    nlohmann::json to_json() const {
        return {{"variant", mfsod::to_string(backbone.variant)},
                {"level_channels", backbone.level_channels},
                {"stage_repeats", backbone.stage_repeats},
                {"input_h", backbone.input_h},
                {"input_w", backbone.input_w},
                {"pretrained_weights_path", backbone.pretrained_weights_path},
                {"fusion_mode", mfsod::to_string(fusion_mode)},
                {"seed", seed}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.backbone.variant = backbone_variant_from_string(j.value("variant", "lightweight-shuffle"));
        if (j.contains("level_channels")) {
            auto lc = j.at("level_channels");
            for (int i = 0; i < 5; ++i) c.backbone.level_channels[i] = lc.at(i);
        }
        if (j.contains("stage_repeats")) {
            auto sr = j.at("stage_repeats");
            for (int i = 0; i < 3; ++i) c.backbone.stage_repeats[i] = sr.at(i);
        }
        c.backbone.input_h = j.value("input_h", 224);
        c.backbone.input_w = j.value("input_w", 224);
        c.backbone.pretrained_weights_path = j.value("pretrained_weights_path", "");
        c.fusion_mode = fusion_mode_from_string(j.value("fusion_mode", "level3"));
        c.seed = j.value("seed", uint64_t(0));
        return c;
    }
};

/// All maps emitted by one pass: the full-resolution probability map plus
/// the eight intermediate logit maps consumed by deep supervision.
template <typename T>
struct SaliencyOutputs {
    VarPtr<T> final_prob;    // (N,1,H,W), in [0,1]
    VarPtr<T> final_logits;  // (N,1,H,W)
    std::array<VarPtr<T>, 4> forward_maps{};   // logits at stage resolutions
    std::array<VarPtr<T>, 4> backward_maps{};  // logits at stage resolutions
};

template <typename T>
class SodModel {
public:
    ModelConfig config;

    explicit SodModel(const ModelConfig& cfg) : config(cfg) {
        config.validate();
        Rng rng(config.seed);
        const int k = fusion_level(config.fusion_mode);
        const auto& bb = config.backbone;
        if (k == 0) {
            mono_ = Extractor<T>(bb, 1, 5, 4, rng);
        } else {
            rgb_low_ = Extractor<T>(bb, 1, k, 3, rng);
            depth_low_ = Extractor<T>(bb, 1, k, 1, rng);
            if (k < 5) shared_high_ = Extractor<T>(bb, k + 1, 5, 0, rng);
            imff_ = ImffModule<T>(bb.level_channels[k - 1], rng);
        }
        lfdf_ = LfdfModule<T>(
            {bb.level_channels[1], bb.level_channels[2], bb.level_channels[3], bb.level_channels[4]},
            rng);
        if (!bb.pretrained_weights_path.empty()) load_pretrained_backbone();
    }

    SaliencyOutputs<T> forward(const VarPtr<T>& rgb, const VarPtr<T>& depth,
                               bool training = false) {
        const Tensor<T>& rv = rgb->value;
        const Tensor<T>& dv = depth->value;
        require(rv.c == 3, "rgb input must have 3 channels, got " + rv.shape_str());
        require(dv.c == 1, "depth input must have 1 channel, got " + dv.shape_str());
        require(rv.n == dv.n && rv.h == dv.h && rv.w == dv.w,
                "rgb/depth shapes differ: " + rv.shape_str() + " vs " + dv.shape_str());
        require(rv.h % 32 == 0 && rv.w % 32 == 0,
                "input size must be divisible by 32, got " + rv.shape_str());

        const int k = fusion_level(config.fusion_mode);
        std::array<VarPtr<T>, 4> decoder_in;  // network levels 2..5
        if (k == 0) {
            auto pyr = mono_.forward_pyramid(concat_channels<T>({rgb, depth}), training);
            for (int level = 2; level <= 5; ++level) decoder_in[level - 2] = pyr.at(level);
        } else {
            auto rgb_pyr = rgb_low_.forward_pyramid(rgb, training);
            auto depth_pyr = depth_low_.forward_pyramid(depth, training);
            auto fused = imff_.fuse(rgb_pyr.at(k), depth_pyr.at(k));
            for (int level = 2; level < k; ++level)
                decoder_in[level - 2] = LfdfModule<T>::fuse_level2(rgb_pyr.at(level),
                                                                   depth_pyr.at(level));
            if (k >= 2) decoder_in[k - 2] = fused;
            if (k < 5) {
                auto high = shared_high_.forward_pyramid(fused, training);
                for (int level = k + 1; level <= 5; ++level) decoder_in[level - 2] = high.at(level);
            }
        }

        LfdfStageBank<T> bank;
        for (int j = 0; j < 4; ++j) bank.reduced[j] = lfdf_.reduce_channels(decoder_in[j], j);
        lfdf_.forward_aggregate(bank);
        lfdf_.backward_aggregate(bank);

        SaliencyOutputs<T> out;
        out.final_logits = bilinear_resize(lfdf_.final_logits_stage(bank), rv.h, rv.w);
        out.final_prob = sigmoid(out.final_logits);
        out.forward_maps = bank.forward_maps;
        out.backward_maps = bank.backward_maps;
        return out;
    }

    void visit(const ParamVisitor<T>& params, const BufferVisitor<T>& buffers) {
        const int k = fusion_level(config.fusion_mode);
        if (k == 0) {
            mono_.visit("mono", params, buffers);
        } else {
            rgb_low_.visit("rgb", params, buffers);
            depth_low_.visit("depth", params, buffers);
            if (k < 5) shared_high_.visit("shared", params, buffers);
            imff_.visit("imff", params, buffers);
        }
        lfdf_.visit("lfdf", params, buffers);
    }

    std::vector<std::pair<std::string, VarPtr<T>>> named_parameters() {
        std::vector<std::pair<std::string, VarPtr<T>>> out;
        visit([&](const std::string& n, const VarPtr<T>& p) { out.emplace_back(n, p); },
              [](const std::string&, Tensor<T>&) {});
        return out;
    }

    std::vector<VarPtr<T>> parameters() {
        std::vector<VarPtr<T>> out;
        for (auto& [n, p] : named_parameters()) out.push_back(p);
        return out;
    }

    size_t count_parameters() {
        size_t total = 0;
        for (auto& p : parameters()) total += p->value.size();
        return total;
    }

    /// Per-component parameter totals keyed by the name prefix.
    std::map<std::string, size_t> parameter_breakdown() {
        std::map<std::string, size_t> out;
        for (auto& [name, p] : named_parameters()) {
            auto head = name.substr(0, name.find('.'));
            out[head] += p->value.size();
        }
        return out;
    }

    bool has_imff() const { return fusion_level(config.fusion_mode) > 0; }
    ImffModule<T>& imff() { return imff_; }
    LfdfModule<T>& lfdf() { return lfdf_; }

    void save_checkpoint(const std::string& path) {
        std::vector<std::pair<std::string, const Tensor<T>*>> refs;
        visit([&](const std::string& n, const VarPtr<T>& p) { refs.emplace_back(n, &p->value); },
              [&](const std::string& n, Tensor<T>& buf) { refs.emplace_back(n, &buf); });
        nlohmann::json meta = {{"format", "mfsod-checkpoint"}, {"config", config.to_json()}};
        tensorfile::save(path, refs, meta);
    }

    static SodModel<T> load_checkpoint(const std::string& path) {
        auto contents = tensorfile::load<T>(path);
        if (contents.meta.value("format", "") != "mfsod-checkpoint")
            throw CheckpointError("not a model checkpoint: " + path);
        ModelConfig cfg;
        try {
            cfg = ModelConfig::from_json(contents.meta.at("config"));
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError("corrupt checkpoint config in " + path + ": " + e.what());
        }
        cfg.backbone.pretrained_weights_path.clear();  // weights come from this file
        SodModel<T> model(cfg);
        model.visit(
            [&](const std::string& name, const VarPtr<T>& p) {
                auto it = contents.tensors.find(name);
                if (it == contents.tensors.end())
                    throw CheckpointError("checkpoint missing tensor '" + name + "' in " + path);
                if (!it->second.same_shape(p->value))
                    throw CheckpointError("checkpoint tensor '" + name + "' has shape " +
                                          it->second.shape_str() + ", expected " +
                                          p->value.shape_str());
                p->value = it->second;
            },
            [&](const std::string& name, Tensor<T>& buf) {
                auto it = contents.tensors.find(name);
                if (it == contents.tensors.end())
                    throw CheckpointError("checkpoint missing buffer '" + name + "' in " + path);
                buf = it->second;
            });
        return model;
    }

    /// Names of trainable tensors whose gradient is missing or identically
    /// zero after a backward pass; empty means full gradient coverage.
    std::vector<std::string> parameters_without_gradient() {
        std::vector<std::string> missing;
        for (auto& [name, p] : named_parameters()) {
            bool live = !p->grad.empty();
            if (live) {
                live = false;
                for (T g : p->grad.v)
                    if (g != T(0)) {
                        live = true;
                        break;
                    }
            }
            if (!live) missing.push_back(name);
        }
        return missing;
    }

private:
    void load_pretrained_backbone() {
        auto contents = tensorfile::load<T>(config.backbone.pretrained_weights_path);
        if (contents.meta.value("format", "") != "mfsod-backbone")
            throw ConfigError("not a backbone weight file: " +
                              config.backbone.pretrained_weights_path);
        if (contents.meta.value("variant", "") != mfsod::to_string(config.backbone.variant))
            throw ConfigError("pretrained weight variant mismatch for " +
                              config.backbone.pretrained_weights_path);
        const int k = fusion_level(config.fusion_mode);
        if (k == 0) {
            backbone_detail::load_weights_into(mono_, contents.tensors);
        } else {
            backbone_detail::load_weights_into(rgb_low_, contents.tensors);
            backbone_detail::load_weights_into(depth_low_, contents.tensors);
            if (k < 5) backbone_detail::load_weights_into(shared_high_, contents.tensors);
        }
    }

    Extractor<T> rgb_low_, depth_low_, shared_high_;
    Extractor<T> mono_;
    ImffModule<T> imff_;
    LfdfModule<T> lfdf_;
};

}  // namespace mfsod
