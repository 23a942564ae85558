#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "mfsod/model.hpp"
#include "mfsod/training.hpp"
#include "testutil.hpp"

using namespace mfsod;
using testutil::rand_tensor;

namespace {

ModelConfig small_config(FusionMode mode = FusionMode::Level3) {
    ModelConfig cfg;
    cfg.fusion_mode = mode;
    cfg.backbone.input_h = cfg.backbone.input_w = 64;
    return cfg;
}

std::vector<std::pair<std::string, Tensor<float>>> all_params(SodModel<float>& m) {
    std::vector<std::pair<std::string, Tensor<float>>> out;
    for (auto& [n, p] : m.named_parameters()) out.emplace_back(n, p->value);
    return out;
}

}  // namespace

TEST_CASE("identical seeds build bit-identical models") {
    auto cfg = small_config();
    cfg.seed = 1234;
    SodModel<float> a(cfg), b(cfg);
    auto pa = all_params(a), pb = all_params(b);
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].first == pb[i].first);
        REQUIRE(pa[i].second.v == pb[i].second.v);
    }

    cfg.seed = 99;
    SodModel<float> c(cfg);
    REQUIRE(all_params(c)[0].second.v != pa[0].second.v);
}

TEST_CASE("fusion mode controls where the fusion module lives") {
    SodModel<float> level3(small_config(FusionMode::Level3));
    int imff_tensors = 0;
    for (auto& [name, p] : level3.named_parameters())
        if (name.rfind("imff.", 0) == 0) ++imff_tensors;
    REQUIRE(imff_tensors == 4);  // proj w/b + score w/b
    REQUIRE(level3.imff().proj.weight->value.shape() == std::array<int, 4>{232, 232, 3, 3});

    SodModel<float> concat(small_config(FusionMode::InputConcat));
    for (auto& [name, p] : concat.named_parameters()) REQUIRE(name.rfind("imff.", 0) != 0);
    REQUIRE_FALSE(concat.has_imff());
}

TEST_CASE("forward emits the full resolution ladder") {
    ModelConfig cfg;  // 224 input contract
    SodModel<float> model(cfg);
    Rng rng(41);
    auto rgb = make_var(rand_tensor<float>(rng, 1, 3, 224, 224));
    auto depth = make_var(rand_tensor<float>(rng, 1, 1, 224, 224));
    auto out = model.forward(rgb, depth);
    REQUIRE(out.final_prob->value.shape() == std::array<int, 4>{1, 1, 224, 224});
    const int sizes[4] = {56, 28, 14, 7};
    for (int j = 0; j < 4; ++j) {
        REQUIRE(out.forward_maps[j]->value.h == sizes[j]);
        REQUIRE(out.backward_maps[j]->value.h == sizes[j]);
    }
    for (float v : out.final_prob->value.v) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }
}

TEST_CASE("every fusion mode runs end to end") {
    Rng rng(42);
    auto rgb = make_var(rand_tensor<float>(rng, 1, 3, 64, 64));
    auto depth = make_var(rand_tensor<float>(rng, 1, 1, 64, 64));
    for (auto mode : all_fusion_modes()) {
        SodModel<float> model(small_config(mode));
        auto out = model.forward(rgb, depth);
        REQUIRE(out.final_prob->value.shape() == std::array<int, 4>{1, 1, 64, 64});
        REQUIRE(out.final_prob->value.all_finite());
    }
}

TEST_CASE("batch elements are independent") {
    SodModel<float> model(small_config());
    Rng rng(43);
    auto rgb1 = rand_tensor<float>(rng, 1, 3, 64, 64);
    auto depth1 = rand_tensor<float>(rng, 1, 1, 64, 64);
    Tensor<float> rgb2(2, 3, 64, 64), depth2(2, 1, 64, 64);
    for (int copy = 0; copy < 2; ++copy) {
        std::copy(rgb1.v.begin(), rgb1.v.end(), rgb2.v.begin() + copy * rgb1.size());
        std::copy(depth1.v.begin(), depth1.v.end(), depth2.v.begin() + copy * depth1.size());
    }
    auto out = model.forward(make_var(rgb2), make_var(depth2));
    size_t per = out.final_prob->value.size() / 2;
    for (size_t i = 0; i < per; ++i)
        REQUIRE(out.final_prob->value.v[i] == out.final_prob->value.v[per + i]);
}

TEST_CASE("constant inputs stay finite") {
    SodModel<float> model(small_config());
    auto rgb = make_var(Tensor<float>::full(1, 3, 64, 64, 0.5f));
    auto depth = make_var(Tensor<float>::full(1, 1, 64, 64, 0.25f));
    auto out = model.forward(rgb, depth);
    REQUIRE(out.final_prob->value.all_finite());
    for (int j = 0; j < 4; ++j) {
        REQUIRE(out.forward_maps[j]->value.all_finite());
        REQUIRE(out.backward_maps[j]->value.all_finite());
    }
}

TEST_CASE("invalid forward inputs raise input errors") {
    SodModel<float> model(small_config());
    Rng rng(44);
    auto rgb = make_var(rand_tensor<float>(rng, 1, 3, 64, 64));
    auto depth = make_var(rand_tensor<float>(rng, 1, 1, 64, 64));
    REQUIRE_THROWS_AS(model.forward(depth, depth), InputError);  // 1-channel "rgb"
    REQUIRE_THROWS_AS(model.forward(rgb, rgb), InputError);      // 3-channel "depth"
    auto odd = make_var(rand_tensor<float>(rng, 1, 3, 60, 60));
    auto odd_d = make_var(rand_tensor<float>(rng, 1, 1, 60, 60));
    REQUIRE_THROWS_AS(model.forward(odd, odd_d), InputError);
    auto mismatched = make_var(rand_tensor<float>(rng, 1, 1, 32, 32));
    REQUIRE_THROWS_AS(model.forward(rgb, mismatched), InputError);
}

TEST_CASE("parameter counting") {
    SECTION("a bare 1x1 conv with bias counts 65") {
        Rng rng(45);
        Conv2d<float> conv(64, 1, 1, 1, 0, 1, true, rng);
        REQUIRE(conv.param_count() == 65);
    }

    SECTION("the shipped level-3 model lands in the documented band") {
        SodModel<float> model(small_config(FusionMode::Level3));
        size_t total = model.count_parameters();
        REQUIRE(total >= 3'400'000);
        REQUIRE(total <= 4'400'000);
    }

    SECTION("totals grow with the fusion level") {
        std::vector<size_t> totals;
        for (auto mode : all_fusion_modes())
            totals.push_back(SodModel<float>(small_config(mode)).count_parameters());
        REQUIRE(totals[0] <= totals[1]);
        for (size_t i = 1; i + 1 < totals.size(); ++i) REQUIRE(totals[i] < totals[i + 1]);
        // deep fusion is much more expensive than shallow fusion
        REQUIRE(totals[5] - totals[3] > totals[2] - totals[1]);
    }
}

TEST_CASE("one backward pass reaches every trainable parameter") {
    SodModel<float> model(small_config());
    Rng rng(46);
    auto rgb = make_var(rand_tensor<float>(rng, 2, 3, 64, 64));
    auto depth = make_var(rand_tensor<float>(rng, 2, 1, 64, 64));
    Tensor<float> gt(2, 1, 64, 64);
    for (auto& v : gt.v) v = rng.uniform_int(0, 1);

    auto out = model.forward(rgb, depth, /*training=*/true);
    auto loss = deep_supervision_loss(out, gt);
    backward(loss);
    auto missing = model.parameters_without_gradient();
    CAPTURE(missing);
    REQUIRE(missing.empty());
}

TEST_CASE("checkpoints round-trip exactly") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "mfsod_model_test";
    fs::create_directories(dir);
    auto path = (dir / "model.ckpt").string();

    auto cfg = small_config(FusionMode::Level2);
    cfg.seed = 77;
    SodModel<float> model(cfg);
    Rng rng(47);
    auto rgb = make_var(rand_tensor<float>(rng, 1, 3, 64, 64));
    auto depth = make_var(rand_tensor<float>(rng, 1, 1, 64, 64));
    auto before = model.forward(rgb, depth);
    model.save_checkpoint(path);

    auto loaded = SodModel<float>::load_checkpoint(path);
    REQUIRE(loaded.config.fusion_mode == FusionMode::Level2);
    REQUIRE(loaded.config.seed == 77);
    auto pa = all_params(model), pb = all_params(loaded);
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i].second.v == pb[i].second.v);
    auto after = loaded.forward(rgb, depth);
    REQUIRE(before.final_prob->value.v == after.final_prob->value.v);

    SECTION("checkpoints convert across scalar widths") {
        auto wide_path = (dir / "model_f64.ckpt").string();
        SodModel<double> wide(cfg);
        wide.save_checkpoint(wide_path);
        auto narrow = SodModel<float>::load_checkpoint(wide_path);
        auto pw = wide.named_parameters();
        auto pn = narrow.named_parameters();
        REQUIRE(pw.size() == pn.size());
        for (size_t i = 0; i < pw.size(); ++i)
            REQUIRE(pn[i].second->value.v[0] ==
                    Catch::Approx(pw[i].second->value.v[0]).margin(1e-7));
    }

    SECTION("corrupt files are checkpoint errors") {
        auto truncated = (dir / "truncated.ckpt").string();
        {
            std::ifstream in(path, std::ios::binary);
            std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
            std::ofstream out(truncated, std::ios::binary);
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        }
        REQUIRE_THROWS_AS(SodModel<float>::load_checkpoint(truncated), CheckpointError);

        auto garbage = (dir / "garbage.ckpt").string();
        std::ofstream(garbage) << "not a checkpoint at all";
        REQUIRE_THROWS_AS(SodModel<float>::load_checkpoint(garbage), CheckpointError);
    }
    fs::remove_all(dir);
}

TEST_CASE("model config serializes losslessly") {
    ModelConfig cfg;
    cfg.backbone.level_channels = {16, 32, 64, 128, 256};
    cfg.backbone.stage_repeats = {2, 3, 4};
    cfg.backbone.input_h = 96;
    cfg.backbone.input_w = 64;
    cfg.fusion_mode = FusionMode::Level4;
    cfg.seed = 31337;
    auto restored = ModelConfig::from_json(cfg.to_json());
    REQUIRE(restored.backbone.level_channels == cfg.backbone.level_channels);
    REQUIRE(restored.backbone.stage_repeats == cfg.backbone.stage_repeats);
    REQUIRE(restored.backbone.input_h == 96);
    REQUIRE(restored.fusion_mode == FusionMode::Level4);
    REQUIRE(restored.seed == 31337);
}
