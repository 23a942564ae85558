#include <catch2/catch_amalgamated.hpp>

#include "mfsod/lfdf.hpp"
#include "testutil.hpp"

using namespace mfsod;
using testutil::fd_check;
using testutil::naive_conv2d;
using testutil::rand_tensor;

namespace {

/// Toy bank: stage resolutions (8,4,2,1), i.e. a notional 32x32 input.
template <typename T>
LfdfStageBank<T> make_reduced_bank(const LfdfModule<T>& lfdf, const std::array<Tensor<T>, 4>& ins,
                                   bool inputs_require_grad = false) {
    LfdfStageBank<T> bank;
    for (int j = 0; j < 4; ++j)
        bank.reduced[j] = lfdf.reduce_channels(make_var(ins[j], inputs_require_grad), j);
    return bank;
}

std::array<Tensor<double>, 4> toy_inputs(Rng& rng, const std::array<int, 4>& channels) {
    return {rand_tensor<double>(rng, 1, channels[0], 8, 8),
            rand_tensor<double>(rng, 1, channels[1], 4, 4),
            rand_tensor<double>(rng, 1, channels[2], 2, 2),
            rand_tensor<double>(rng, 1, channels[3], 1, 1)};
}

}  // namespace

TEST_CASE("reduce_channels is a 64-wide 1x1 convolution") {
    Rng rng(31);
    LfdfModule<double> lfdf({128, 16, 16, 16}, rng);

    auto x = rand_tensor<double>(rng, 1, 128, 8, 8);
    auto out = lfdf.reduce_channels(make_var(x), 0);
    REQUIRE(out->value.shape() == std::array<int, 4>{1, 64, 8, 8});

    SECTION("matches the naive 1x1 oracle") {
        auto ref = naive_conv2d(x, lfdf.reduce[0].weight->value, &lfdf.reduce[0].bias->value, 1, 0, 1);
        REQUIRE(testutil::max_rel_diff(out->value, ref) < 1e-6);
    }

    SECTION("identity-like weights copy the first 64 channels") {
        for (auto& v : lfdf.reduce[0].weight->value.v) v = 0.0;
        for (auto& v : lfdf.reduce[0].bias->value.v) v = 0.0;
        for (int o = 0; o < 64; ++o) lfdf.reduce[0].weight->value.at(o, o, 0, 0) = 1.0;
        auto copy = lfdf.reduce_channels(make_var(x), 0);
        for (int j = 0; j < 64; ++j)
            for (int p = 0; p < 64; ++p)
                REQUIRE(copy->value.v[static_cast<size_t>(j) * 64 + p] ==
                        x.v[static_cast<size_t>(j) * 64 + p]);
    }

    SECTION("channel mismatch raises") {
        REQUIRE_THROWS_AS(lfdf.reduce_channels(make_var(rand_tensor<double>(rng, 1, 64, 8, 8)), 0),
                          InputError);
    }
}

TEST_CASE("fuse_level2 is an elementwise sum") {
    Rng rng(32);
    auto a = rand_tensor<double>(rng, 2, 6, 4, 4);
    auto b = rand_tensor<double>(rng, 2, 6, 4, 4);
    auto sum = LfdfModule<double>::fuse_level2(make_var(a), make_var(b));
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(sum->value.v[i] == a.v[i] + b.v[i]);

    auto zero = make_var(Tensor<double>(2, 6, 4, 4));
    REQUIRE(LfdfModule<double>::fuse_level2(make_var(a), zero)->value.v == a.v);

    auto twice = LfdfModule<double>::fuse_level2(make_var(a), make_var(a));
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(twice->value.v[i] == 2.0 * a.v[i]);

    REQUIRE_THROWS_AS(
        LfdfModule<double>::fuse_level2(make_var(a), make_var(rand_tensor<double>(rng, 2, 6, 4, 5))),
        InputError);
}

TEST_CASE("forward aggregation fills stage features and maps") {
    Rng rng(33);
    const std::array<int, 4> channels = {10, 12, 14, 16};
    LfdfModule<double> lfdf(channels, rng);
    auto ins = toy_inputs(rng, channels);
    auto bank = make_reduced_bank(lfdf, ins);
    lfdf.forward_aggregate(bank);

    const int sizes[4] = {8, 4, 2, 1};
    for (int j = 0; j < 4; ++j) {
        REQUIRE(bank.forward_feats[j]->value.shape() ==
                std::array<int, 4>{1, 64, sizes[j], sizes[j]});
        REQUIRE(bank.forward_maps[j]->value.shape() ==
                std::array<int, 4>{1, 1, sizes[j], sizes[j]});
    }

    SECTION("stage 1 ignores the deeper stages' prediction parameters") {
        auto before_feat = bank.forward_feats[0]->value.v;
        auto before_map = bank.forward_maps[0]->value.v;
        for (int j = 1; j < 4; ++j) {
            for (auto& v : lfdf.fwd_pred[j].weight->value.v) v += 0.37;
            for (auto& v : lfdf.fwd_pred[j].bias->value.v) v -= 1.1;
        }
        auto bank2 = make_reduced_bank(lfdf, ins);
        lfdf.forward_aggregate(bank2);
        REQUIRE(bank2.forward_feats[0]->value.v == before_feat);
        REQUIRE(bank2.forward_maps[0]->value.v == before_map);
        // deeper maps do change
        REQUIRE(bank2.forward_maps[1]->value.v != bank.forward_maps[1]->value.v);
    }

    SECTION("zero aggregation parameters yield all-zero maps") {
        LfdfModule<double> zeroed(channels, rng);
        for (int j = 0; j < 4; ++j) {
            for (auto& v : zeroed.fwd_agg[j].weight->value.v) v = 0.0;
            for (auto& v : zeroed.fwd_agg[j].bias->value.v) v = 0.0;
            for (auto& v : zeroed.fwd_pred[j].weight->value.v) v = 0.0;
            for (auto& v : zeroed.fwd_pred[j].bias->value.v) v = 0.0;
        }
        auto zbank = make_reduced_bank(zeroed, ins);
        zeroed.forward_aggregate(zbank);
        for (int j = 0; j < 4; ++j)
            for (double v : zbank.forward_maps[j]->value.v) REQUIRE(v == 0.0);
    }

    SECTION("missing reduced stages raise a state error") {
        LfdfStageBank<double> empty;
        REQUIRE_THROWS_AS(lfdf.forward_aggregate(empty), StateError);
    }
}

TEST_CASE("backward aggregation mirrors the stages deep-to-shallow") {
    Rng rng(34);
    const std::array<int, 4> channels = {10, 12, 14, 16};
    LfdfModule<double> lfdf(channels, rng);
    auto ins = toy_inputs(rng, channels);
    auto bank = make_reduced_bank(lfdf, ins);
    lfdf.forward_aggregate(bank);
    lfdf.backward_aggregate(bank);

    const int sizes[4] = {8, 4, 2, 1};
    for (int j = 0; j < 4; ++j) {
        REQUIRE(bank.backward_feats[j]->value.shape() ==
                std::array<int, 4>{1, 64, sizes[j], sizes[j]});
        REQUIRE(bank.backward_maps[j]->value.shape() ==
                std::array<int, 4>{1, 1, sizes[j], sizes[j]});
    }

    SECTION("the deepest backward stage depends only on its forward pair") {
        auto reference = bank.backward_feats[3]->value.v;
        LfdfStageBank<double> tampered;
        tampered.reduced = bank.reduced;
        for (int j = 0; j < 4; ++j) {
            tampered.forward_feats[j] = bank.forward_feats[j];
            tampered.forward_maps[j] = bank.forward_maps[j];
        }
        for (int j = 0; j < 3; ++j) {
            tampered.forward_feats[j] =
                make_var(rand_tensor<double>(rng, 1, 64, sizes[j], sizes[j]));
            tampered.forward_maps[j] = make_var(rand_tensor<double>(rng, 1, 1, sizes[j], sizes[j]));
        }
        lfdf.backward_aggregate(tampered);
        REQUIRE(tampered.backward_feats[3]->value.v == reference);
    }

    SECTION("running it before the forward sweep is a state error") {
        auto fresh = make_reduced_bank(lfdf, ins);
        REQUIRE_THROWS_AS(lfdf.backward_aggregate(fresh), StateError);
    }

    SECTION("gradient of sum of the shallowest backward map w.r.t. reduced stage 4") {
        Tensor<double> deep_in = ins[3];
        auto f = [&]() {
            LfdfStageBank<double> b;
            for (int j = 0; j < 3; ++j) b.reduced[j] = lfdf.reduce_channels(make_var(ins[j]), j);
            b.reduced[3] = lfdf.reduce_channels(make_var(deep_in, true), 3);
            lfdf.forward_aggregate(b);
            lfdf.backward_aggregate(b);
            return sum_all(b.backward_maps[0])->value.v[0];
        };
        LfdfStageBank<double> b;
        auto deep_var = make_var(deep_in, true);
        for (int j = 0; j < 3; ++j) b.reduced[j] = lfdf.reduce_channels(make_var(ins[j]), j);
        b.reduced[3] = lfdf.reduce_channels(deep_var, 3);
        lfdf.forward_aggregate(b);
        lfdf.backward_aggregate(b);
        backward(sum_all(b.backward_maps[0]));
        auto report = fd_check(f, deep_in, deep_var->grad);
        CAPTURE(report.max_rel_error);
        REQUIRE(report.max_rel_error < 1e-4);
    }
}

TEST_CASE("final prediction mixes the documented inputs") {
    Rng rng(35);
    const std::array<int, 4> channels = {10, 12, 14, 16};
    LfdfModule<double> lfdf(channels, rng);
    auto ins = toy_inputs(rng, channels);
    auto bank = make_reduced_bank(lfdf, ins);
    lfdf.forward_aggregate(bank);

    SECTION("requires the backward sweep") {
        REQUIRE_THROWS_AS(lfdf.final_prediction(bank, 32, 32), StateError);
    }

    lfdf.backward_aggregate(bank);
    auto prob = lfdf.final_prediction(bank, 32, 32);
    REQUIRE(prob->value.shape() == std::array<int, 4>{1, 1, 32, 32});
    for (double v : prob->value.v) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }

    SECTION("matches a hand-wired trace of the dataflow") {
        // Stage-1 resolution head inputs: backward feature 1, then backward
        // maps 2..4 and forward maps 2..4, each resized up to stage 1.
        std::vector<VarPtr<double>> head = {bank.backward_feats[0]};
        for (int j = 1; j < 4; ++j) head.push_back(bilinear_resize(bank.backward_maps[j], 8, 8));
        for (int j = 1; j < 4; ++j) head.push_back(bilinear_resize(bank.forward_maps[j], 8, 8));
        auto logits = lfdf.final_head(concat_channels(head));
        auto manual = sigmoid(bilinear_resize(logits, 32, 32));
        REQUIRE(manual->value.v == prob->value.v);

        // and the forward stages concatenate reduced banks in stage order
        const int sizes[4] = {8, 4, 2, 1};
        for (int j = 0; j < 4; ++j) {
            std::vector<VarPtr<double>> agg_in;
            for (int k = 0; k < 4; ++k)
                agg_in.push_back(bilinear_resize(bank.reduced[k], sizes[j], sizes[j]));
            if (j > 0)
                agg_in.push_back(bilinear_resize(bank.forward_maps[j - 1], sizes[j], sizes[j]));
            auto feat = relu(lfdf.fwd_agg[j](concat_channels(agg_in)));
            REQUIRE(feat->value.v == bank.forward_feats[j]->value.v);
        }
        // backward stages: deeper backward pair resized, then own forward pair
        for (int j = 2; j >= 0; --j) {
            std::vector<VarPtr<double>> agg_in = {
                bilinear_resize(bank.backward_feats[j + 1], sizes[j], sizes[j]),
                bilinear_resize(bank.backward_maps[j + 1], sizes[j], sizes[j]),
                bank.forward_feats[j], bank.forward_maps[j]};
            auto feat = relu(lfdf.bwd_agg[j](concat_channels(agg_in)));
            REQUIRE(feat->value.v == bank.backward_feats[j]->value.v);
        }
    }

    SECTION("the decoder emits nine maps with 64-channel features") {
        int maps = 0;
        for (int j = 0; j < 4; ++j) {
            REQUIRE(bank.forward_feats[j]->value.c == 64);
            REQUIRE(bank.backward_feats[j]->value.c == 64);
            maps += (bank.forward_maps[j]->value.c == 1);
            maps += (bank.backward_maps[j]->value.c == 1);
        }
        maps += (prob->value.c == 1);
        REQUIRE(maps == 9);
    }
}

TEST_CASE("decoder stage resolutions follow a 224x224 input") {
    Rng rng(36);
    LfdfModule<float> lfdf({116, 232, 464, 1024}, rng);
    LfdfStageBank<float> bank;
    const int sizes[4] = {56, 28, 14, 7};
    const int channels[4] = {116, 232, 464, 1024};
    for (int j = 0; j < 4; ++j)
        bank.reduced[j] =
            lfdf.reduce_channels(make_var(rand_tensor<float>(rng, 1, channels[j], sizes[j], sizes[j])), j);
    lfdf.forward_aggregate(bank);
    lfdf.backward_aggregate(bank);
    for (int j = 0; j < 4; ++j) {
        REQUIRE(bank.forward_feats[j]->value.h == sizes[j]);
        REQUIRE(bank.backward_feats[j]->value.h == sizes[j]);
    }
    auto prob = lfdf.final_prediction(bank, 224, 224);
    REQUIRE(prob->value.shape() == std::array<int, 4>{1, 1, 224, 224});
}

TEST_CASE("full decoder gradient w.r.t. every reduced stage") {
    Rng rng(37);
    const std::array<int, 4> channels = {6, 8, 10, 12};
    LfdfModule<double> lfdf(channels, rng);
    auto ins = toy_inputs(rng, channels);
    Tensor<double> r;

    auto run = [&](std::array<VarPtr<double>, 4> reduced_in) {
        LfdfStageBank<double> b;
        for (int j = 0; j < 4; ++j) b.reduced[j] = lfdf.reduce_channels(reduced_in[j], j);
        lfdf.forward_aggregate(b);
        lfdf.backward_aggregate(b);
        return lfdf.final_logits_stage(b);
    };
    {
        std::array<VarPtr<double>, 4> vars;
        for (int j = 0; j < 4; ++j) vars[j] = make_var(ins[j]);
        auto probe = run(vars);
        r = rand_tensor<double>(rng, probe->value.n, probe->value.c, probe->value.h, probe->value.w);
    }

    for (int target = 0; target < 4; ++target) {
        auto f = [&]() {
            std::array<VarPtr<double>, 4> vars;
            for (int j = 0; j < 4; ++j) vars[j] = make_var(ins[j], j == target);
            return dot_const(run(vars), r)->value.v[0];
        };
        std::array<VarPtr<double>, 4> vars;
        for (int j = 0; j < 4; ++j) vars[j] = make_var(ins[j], j == target);
        backward(dot_const(run(vars), r));
        auto report = fd_check(f, ins[target], vars[target]->grad,
                               testutil::spread_coords(ins[target].size(), 48));
        CAPTURE(target, report.max_rel_error);
        REQUIRE(report.max_rel_error < 1e-4);
    }
}
