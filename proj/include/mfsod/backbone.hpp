#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mfsod/layers.hpp"
#include "mfsod/ops.hpp"
#include "mfsod/pooling.hpp"
#include "mfsod/tensorfile.hpp"

namespace mfsod {

enum class BackboneVariant { LightweightShuffle, VggStyle };

inline std::string to_string(BackboneVariant v) {
    return v == BackboneVariant::LightweightShuffle ? "lightweight-shuffle" : "vgg-style";
}
inline BackboneVariant backbone_variant_from_string(const std::string& s) {
    if (s == "lightweight-shuffle") return BackboneVariant::LightweightShuffle;
    if (s == "vgg-style") return BackboneVariant::VggStyle;
    throw ConfigError("unknown backbone variant '" + s + "'");
}

struct BackboneConfig {
    BackboneVariant variant = BackboneVariant::LightweightShuffle;
    /// Channels of the five feature levels; level i halves the resolution i times.
    std::array<int, 5> level_channels = {24, 116, 232, 464, 1024};
    /// Shuffle units per stage (levels 2-4). Depths picked so the shipped
    /// level-3 fusion model lands at ~3.9M trainable parameters.
    std::array<int, 3> stage_repeats = {4, 8, 12};
    int input_h = 224;
    int input_w = 224;
    std::string pretrained_weights_path;

    static BackboneConfig vgg_default() {
        BackboneConfig c;
        c.variant = BackboneVariant::VggStyle;
        c.level_channels = {64, 128, 256, 512, 512};
        return c;
    }

    void validate() const {
        for (int ch : level_channels)
            if (ch <= 0) throw ConfigError("level_channels must all be positive");
        if (variant == BackboneVariant::LightweightShuffle) {
            for (int i = 1; i < 4; ++i)
                if (level_channels[i] % 2 != 0)
                    throw ConfigError("shuffle stages need even channel counts");
            for (int r : stage_repeats)
                if (r < 1) throw ConfigError("stage_repeats must be >= 1");
        }
        if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0)
            throw ConfigError("input size must be positive and divisible by 32");
    }
};

/// Feature maps keyed by level index; level i sits at stride 2^i.
template <typename T>
struct FeaturePyramid {
    std::map<int, VarPtr<T>> levels;

    const VarPtr<T>& at(int level) const {
        auto it = levels.find(level);
        if (it == levels.end())
            throw StateError("feature pyramid missing level " + std::to_string(level));
        return it->second;
    }
};

namespace backbone_detail {

/// Stride-1 shuffle unit: passthrough half plus a bottleneck branch,
/// re-interleaved by a two-group channel shuffle.
template <typename T>
struct ShuffleBasicUnit : Module<T> {
    ConvBnAct<T> pw1, pw2;
    ConvBnAct<T> dw;

    ShuffleBasicUnit(int channels, Rng& rng) {
        int half = channels / 2;
        pw1 = ConvBnAct<T>(half, half, 1, 1, 0, 1, true, rng);
        dw = ConvBnAct<T>(half, half, 3, 1, 1, half, false, rng);
        pw2 = ConvBnAct<T>(half, half, 1, 1, 0, 1, true, rng);
    }

    VarPtr<T> forward(const VarPtr<T>& x, bool training) override {
        int half = x->value.c / 2;
        auto keep = slice_channels(x, 0, half);
        auto y = slice_channels(x, half, x->value.c);
        y = pw2(dw(pw1(y, training), training), training);
        return channel_shuffle(concat_channels<T>({keep, y}), 2);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) override {
        pw1.visit(prefix + ".pw1", params, buffers);
        dw.visit(prefix + ".dw", params, buffers);
        pw2.visit(prefix + ".pw2", params, buffers);
    }
};

/// Two-branch unit used at stage entries; changes channel count and,
/// when stride 2, halves the resolution.
template <typename T>
struct ShuffleChangeUnit : Module<T> {
    ConvBnAct<T> b1_dw, b1_pw;
    ConvBnAct<T> b2_pw1, b2_dw, b2_pw2;

    ShuffleChangeUnit(int in_c, int out_c, int stride, Rng& rng) {
        int half = out_c / 2;
        b1_dw = ConvBnAct<T>(in_c, in_c, 3, stride, 1, in_c, false, rng);
        b1_pw = ConvBnAct<T>(in_c, half, 1, 1, 0, 1, true, rng);
        b2_pw1 = ConvBnAct<T>(in_c, half, 1, 1, 0, 1, true, rng);
        b2_dw = ConvBnAct<T>(half, half, 3, stride, 1, half, false, rng);
        b2_pw2 = ConvBnAct<T>(half, half, 1, 1, 0, 1, true, rng);
    }

    VarPtr<T> forward(const VarPtr<T>& x, bool training) override {
        auto a = b1_pw(b1_dw(x, training), training);
        auto b = b2_pw2(b2_dw(b2_pw1(x, training), training), training);
        return channel_shuffle(concat_channels<T>({a, b}), 2);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) override {
        b1_dw.visit(prefix + ".b1_dw", params, buffers);
        b1_pw.visit(prefix + ".b1_pw", params, buffers);
        b2_pw1.visit(prefix + ".b2_pw1", params, buffers);
        b2_dw.visit(prefix + ".b2_dw", params, buffers);
        b2_pw2.visit(prefix + ".b2_pw2", params, buffers);
    }
};

/// Level 1: stride-2 stem convolution.
template <typename T>
struct StemBlock : Module<T> {
    ConvBnAct<T> stem;

    StemBlock(int in_c, int out_c, Rng& rng) : stem(in_c, out_c, 3, 2, 1, 1, true, rng) {}

    VarPtr<T> forward(const VarPtr<T>& x, bool training) override { return stem(x, training); }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) override {
        stem.visit(prefix + ".stem", params, buffers);
    }
};

/// Levels 2-4: optional pooled entry, a channel-change unit, then basic
/// units. Level 2 downsamples through its pool, levels 3-4 through the
/// entry unit's stride.
template <typename T>
struct ShuffleStage : Module<T> {
    bool entry_pool;
    std::vector<std::unique_ptr<Module<T>>> units;

    ShuffleStage(int in_c, int out_c, int repeats, bool entry_pool_, Rng& rng)
        : entry_pool(entry_pool_) {
        units.push_back(
            std::make_unique<ShuffleChangeUnit<T>>(in_c, out_c, entry_pool_ ? 1 : 2, rng));
        for (int i = 1; i < repeats; ++i)
            units.push_back(std::make_unique<ShuffleBasicUnit<T>>(out_c, rng));
    }

    VarPtr<T> forward(const VarPtr<T>& x, bool training) override {
        auto y = entry_pool ? max_pool2d(x, 3, 2, 1) : x;
        for (auto& u : units) y = u->forward(y, training);
        return y;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) override {
        for (size_t i = 0; i < units.size(); ++i)
            units[i]->visit(prefix + ".unit" + std::to_string(i), params, buffers);
    }
};

/// Level 5: pooled downsample then the 1x1 expansion convolution.
template <typename T>
struct ExpansionBlock : Module<T> {
    ConvBnAct<T> expand;

    ExpansionBlock(int in_c, int out_c, Rng& rng) : expand(in_c, out_c, 1, 1, 0, 1, true, rng) {}

    VarPtr<T> forward(const VarPtr<T>& x, bool training) override {
        return expand(max_pool2d(x, 3, 2, 1), training);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) override {
        expand.visit(prefix + ".expand", params, buffers);
    }
};

/// Plain conv stack level for the vgg-style variant.
template <typename T>
struct PlainConvBlock : Module<T> {
    std::vector<Conv2d<T>> convs;

    PlainConvBlock(int in_c, int out_c, int repeats, Rng& rng) {
        for (int i = 0; i < repeats; ++i)
            convs.emplace_back(i == 0 ? in_c : out_c, out_c, 3, 1, 1, 1, true, rng);
    }

    VarPtr<T> forward(const VarPtr<T>& x, bool) override {
        auto y = x;
        for (auto& conv : convs) y = relu(conv(y));
        return max_pool2d(y, 2, 2, 0);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) override {
        for (size_t i = 0; i < convs.size(); ++i)
            convs[i].visit(prefix + ".conv" + std::to_string(i), params, buffers);
    }
};

template <typename T>
std::unique_ptr<Module<T>> make_level_block(const BackboneConfig& cfg, int level, int in_channels,
                                            Rng& rng) {
    const auto& ch = cfg.level_channels;
    if (cfg.variant == BackboneVariant::VggStyle) {
        static constexpr std::array<int, 5> repeats = {2, 2, 3, 3, 3};
        return std::make_unique<PlainConvBlock<T>>(in_channels, ch[level - 1], repeats[level - 1],
                                                   rng);
    }
    switch (level) {
        case 1:
            return std::make_unique<StemBlock<T>>(in_channels, ch[0], rng);
        case 2:
            return std::make_unique<ShuffleStage<T>>(ch[0], ch[1], cfg.stage_repeats[0], true, rng);
        case 3:
            return std::make_unique<ShuffleStage<T>>(ch[1], ch[2], cfg.stage_repeats[1], false, rng);
        case 4:
            return std::make_unique<ShuffleStage<T>>(ch[2], ch[3], cfg.stage_repeats[2], false, rng);
        case 5:
            return std::make_unique<ExpansionBlock<T>>(ch[3], ch[4], rng);
        default:
            throw ConfigError("level out of range");
    }
}

}  // namespace backbone_detail

/// Runs a contiguous range of feature levels [level_lo, level_hi].
template <typename T>
struct Extractor {
    BackboneConfig config;
    int level_lo = 1, level_hi = 0;  // empty range until constructed
    int in_channels = 3;
    std::vector<std::unique_ptr<Module<T>>> blocks;  // one per level

    Extractor() = default;
    Extractor(const BackboneConfig& cfg, int lo, int hi, int in_ch, Rng& rng)
        : config(cfg), level_lo(lo), level_hi(hi), in_channels(in_ch) {
        for (int level = lo; level <= hi; ++level) {
            int block_in = (level == lo && lo == 1) ? in_ch : 0;
            if (level > 1) block_in = cfg.level_channels[level - 2];
            blocks.push_back(backbone_detail::make_level_block<T>(cfg, level, block_in, rng));
        }
    }

    /// Runs all levels, collecting each level's output.
    FeaturePyramid<T> forward_pyramid(const VarPtr<T>& x, bool training = false) {
        check_input(x->value);
        FeaturePyramid<T> pyr;
        auto y = x;
        for (int level = level_lo; level <= level_hi; ++level) {
            y = blocks[level - level_lo]->forward(y, training);
            pyr.levels[level] = y;
        }
        return pyr;
    }

    void check_input(const Tensor<T>& x) const {
        if (level_lo == 1) {
            require(x.c == in_channels, "extractor expects " + std::to_string(in_channels) +
                                            "-channel input, got " + x.shape_str());
            require(x.h % 32 == 0 && x.w % 32 == 0,
                    "input spatial size must be divisible by 32, got " + x.shape_str());
        } else {
            require(x.c == config.level_channels[level_lo - 2],
                    "extractor expects level-" + std::to_string(level_lo - 1) + " features with " +
                        std::to_string(config.level_channels[level_lo - 2]) + " channels, got " +
                        x.shape_str());
        }
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) {
        const std::string base = prefix.empty() ? "" : prefix + ".";
        for (int level = level_lo; level <= level_hi; ++level)
            blocks[level - level_lo]->visit(base + "level" + std::to_string(level), params,
                                            buffers);
    }

    size_t param_count() {
        size_t total = 0;
        visit(
            "", [&](const std::string&, const VarPtr<T>& p) { total += p->value.size(); },
            [](const std::string&, Tensor<T>&) {});
        return total;
    }
};

template <typename T>
struct Extractors {
    Extractor<T> rgb;     // levels 1..split, 3-channel input
    Extractor<T> depth;   // levels 1..split, 1-channel input
    Extractor<T> shared;  // levels split+1..5
};

namespace backbone_detail {

/// Collapses a 3-channel stem kernel to 1 channel by averaging, the usual
/// way of reusing color-pretrained stems for depth input.
template <typename T>
Tensor<T> average_input_channels(const Tensor<T>& w) {
    Tensor<T> out(w.n, 1, w.h, w.w);
    for (int o = 0; o < w.n; ++o)
        for (int y = 0; y < w.h; ++y)
            for (int x = 0; x < w.w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < w.c; ++i) acc += w.at(o, i, y, x);
                out.at(o, 0, y, x) = static_cast<T>(acc / w.c);
            }
    return out;
}

/// Widens a stem kernel with zero-filled extra input channels.
template <typename T>
Tensor<T> widen_input_channels(const Tensor<T>& w, int new_c) {
    Tensor<T> out(w.n, new_c, w.h, w.w);
    for (int o = 0; o < w.n; ++o)
        for (int i = 0; i < w.c; ++i)
            for (int y = 0; y < w.h; ++y)
                for (int x = 0; x < w.w; ++x) out.at(o, i, y, x) = w.at(o, i, y, x);
    return out;
}

template <typename T>
void load_weights_into(Extractor<T>& ex, const std::map<std::string, Tensor<T>>& weights) {
    ex.visit(
        "",
        [&](const std::string& name, const VarPtr<T>& p) {
            auto it = weights.find(name);
            if (it == weights.end())
                throw ConfigError("pretrained weights missing tensor '" + name + "'");
            const Tensor<T>& src = it->second;
            if (src.same_shape(p->value)) {
                p->value = src;
            } else if (src.n == p->value.n && src.h == p->value.h && src.w == p->value.w &&
                       p->value.c == 1) {
                p->value = average_input_channels(src);
            } else if (src.n == p->value.n && src.h == p->value.h && src.w == p->value.w &&
                       src.c < p->value.c) {
                p->value = widen_input_channels(src, p->value.c);
            } else {
                throw ConfigError("pretrained tensor '" + name + "' has shape " + src.shape_str() +
                                  ", expected " + p->value.shape_str());
            }
        },
        [&](const std::string& name, Tensor<T>& buf) {
            auto it = weights.find(name);
            if (it != weights.end() && it->second.same_shape(buf)) buf = it->second;
        });
}

}  // namespace backbone_detail

/// Writes a unified five-level extractor's tensors as a reusable weight
/// file (the format `pretrained_weights_path` consumes).
template <typename T>
void save_backbone_weights(const std::string& path, Extractor<T>& unified) {
    std::vector<std::pair<std::string, Tensor<T>>> named;
    unified.visit(
        "", [&](const std::string& name, const VarPtr<T>& p) { named.emplace_back(name, p->value); },
        [&](const std::string& name, Tensor<T>& buf) { named.emplace_back(name, buf); });
    std::vector<std::pair<std::string, const Tensor<T>*>> refs;
    refs.reserve(named.size());
    for (auto& [name, t] : named) refs.emplace_back(name, &t);
    nlohmann::json meta = {{"format", "mfsod-backbone"},
                           {"variant", to_string(unified.config.variant)}};
    tensorfile::save(path, refs, meta);
}

/// Builds the two unimodal extractors (levels 1-3, independent parameters)
/// and the shared high-level extractor (levels 4-5). Initialization is
/// deterministic in `seed`; pretrained weights, when configured, overwrite
/// the random draws.
template <typename T>
Extractors<T> build_extractors(const BackboneConfig& config, uint64_t seed = 0, int split = 3) {
    config.validate();
    if (split < 1 || split > 5) throw ConfigError("fusion split must be in 1..5");
    Rng rng(seed);
    Extractors<T> out;
    out.rgb = Extractor<T>(config, 1, split, 3, rng);
    out.depth = Extractor<T>(config, 1, split, 1, rng);
    if (split < 5) out.shared = Extractor<T>(config, split + 1, 5, 0, rng);
    else out.shared = Extractor<T>();

    if (!config.pretrained_weights_path.empty()) {
        auto contents = tensorfile::load<T>(config.pretrained_weights_path);
        if (contents.meta.value("format", "") != "mfsod-backbone")
            throw ConfigError("not a backbone weight file: " + config.pretrained_weights_path);
        std::string file_variant = contents.meta.value("variant", "");
        if (file_variant != to_string(config.variant))
            throw ConfigError("weight file variant '" + file_variant +
                              "' does not match configured variant '" + to_string(config.variant) +
                              "'");
        backbone_detail::load_weights_into(out.rgb, contents.tensors);
        backbone_detail::load_weights_into(out.depth, contents.tensors);
        if (split < 5) backbone_detail::load_weights_into(out.shared, contents.tensors);
    }
    return out;
}

/// Levels 1-3 of one modality.
template <typename T>
FeaturePyramid<T> extract_low_level(const VarPtr<T>& image, Extractor<T>& extractor,
                                    bool training = false) {
    return extractor.forward_pyramid(image, training);
}

/// Levels 4-5 from fused level-3 features.
template <typename T>
FeaturePyramid<T> extract_high_level(const VarPtr<T>& fused_l3, Extractor<T>& shared,
                                     bool training = false) {
    return shared.forward_pyramid(fused_l3, training);
}

}  // namespace mfsod
