#include <catch2/catch_amalgamated.hpp>

#include "mfsod/imff.hpp"
#include "testutil.hpp"

using namespace mfsod;
using testutil::fd_check;
using testutil::naive_conv2d;
using testutil::rand_tensor;

TEST_CASE("information projection is the stated shared convolution") {
    Rng rng(21);
    ImffModule<double> imff(4, rng);

    SECTION("zero parameters give zero output") {
        for (auto& v : imff.proj.weight->value.v) v = 0.0;
        for (auto& v : imff.proj.bias->value.v) v = 0.0;
        auto f = make_var(rand_tensor<double>(rng, 1, 4, 6, 6));
        auto out = imff.project(f);
        for (double v : out->value.v) REQUIRE(v == 0.0);
    }

    SECTION("matches a direct sliding-window oracle") {
        auto f = rand_tensor<double>(rng, 1, 4, 6, 6);
        auto out = imff.project(make_var(f));
        auto ref = naive_conv2d(f, imff.proj.weight->value, &imff.proj.bias->value, 1, 1, 1);
        REQUIRE(out->value.same_shape(f));  // padding preserves resolution
        REQUIRE(testutil::max_rel_diff(out->value, ref) < 1e-6);
    }

    SECTION("identical inputs project identically through the shared parameters") {
        auto f = rand_tensor<double>(rng, 2, 4, 5, 5);
        auto a = imff.project(make_var(f));
        auto b = imff.project(make_var(f));
        REQUIRE(a->value.v == b->value.v);
    }

    SECTION("channel mismatch is an input error") {
        auto bad = make_var(rand_tensor<double>(rng, 1, 3, 6, 6));
        REQUIRE_THROWS_AS(imff.project(bad), InputError);
    }
}

TEST_CASE("information interactions are sum, product and difference") {
    Rng rng(22);
    auto fr = rand_tensor<double>(rng, 1, 8, 4, 4);
    auto fd = rand_tensor<double>(rng, 1, 8, 4, 4);

    auto maps = ImffModule<double>::interactions(make_var(fr), make_var(fd));
    for (size_t i = 0; i < fr.size(); ++i) {
        REQUIRE(maps.tot->value.v[i] == fr.v[i] + fd.v[i]);
        REQUIRE(maps.sh->value.v[i] == fr.v[i] * fd.v[i]);
        REQUIRE(maps.diff->value.v[i] == fr.v[i] - fd.v[i]);
    }

    SECTION("equal inputs: tot = 2F, sh = F*F, diff = 0") {
        auto same = ImffModule<double>::interactions(make_var(fr), make_var(fr));
        for (size_t i = 0; i < fr.size(); ++i) {
            REQUIRE(same.tot->value.v[i] == 2.0 * fr.v[i]);
            REQUIRE(same.sh->value.v[i] == fr.v[i] * fr.v[i]);
            REQUIRE(same.diff->value.v[i] == 0.0);
        }
    }

    SECTION("zero depth features: tot = F_r, sh = 0, diff = F_r") {
        auto zero = make_var(Tensor<double>(1, 8, 4, 4));
        auto z = ImffModule<double>::interactions(make_var(fr), zero);
        for (size_t i = 0; i < fr.size(); ++i) {
            REQUIRE(z.tot->value.v[i] == fr.v[i]);
            REQUIRE(z.sh->value.v[i] == 0.0);
            REQUIRE(z.diff->value.v[i] == fr.v[i]);
        }
    }

    SECTION("swapping modalities flips diff and keeps tot, sh") {
        auto fwd = ImffModule<double>::interactions(make_var(fr), make_var(fd));
        auto rev = ImffModule<double>::interactions(make_var(fd), make_var(fr));
        for (size_t i = 0; i < fr.size(); ++i) {
            REQUIRE(rev.tot->value.v[i] == fwd.tot->value.v[i]);
            REQUIRE(rev.sh->value.v[i] == fwd.sh->value.v[i]);
            REQUIRE(rev.diff->value.v[i] == -fwd.diff->value.v[i]);
        }
    }

    SECTION("shape mismatch is an input error") {
        auto bad = make_var(rand_tensor<double>(rng, 1, 8, 3, 4));
        REQUIRE_THROWS_AS(ImffModule<double>::interactions(make_var(fr), bad), InputError);
    }
}

TEST_CASE("selection weights are a per-location two-way softmax") {
    Rng rng(23);
    ImffModule<double> imff(6, rng);
    auto fr = make_var(rand_tensor<double>(rng, 2, 6, 5, 5));
    auto fd = make_var(rand_tensor<double>(rng, 2, 6, 5, 5));
    auto maps = ImffModule<double>::interactions(imff.project(fr), imff.project(fd));

    SECTION("zero score parameters give 0.5 everywhere") {
        ImffModule<double> zeroed(6, rng);
        for (auto& v : zeroed.weight_gen.weight->value.v) v = 0.0;
        for (auto& v : zeroed.weight_gen.bias->value.v) v = 0.0;
        auto [wr, wd] = zeroed.selection_weights(maps);
        for (double v : wr->value.v) REQUIRE(v == Catch::Approx(0.5).margin(1e-12));
        for (double v : wd->value.v) REQUIRE(v == Catch::Approx(0.5).margin(1e-12));
    }

    SECTION("weights sum to one and lie in (0,1)") {
        auto [wr, wd] = imff.selection_weights(maps);
        REQUIRE(wr->value.shape() == std::array<int, 4>{2, 1, 5, 5});
        for (size_t i = 0; i < wr->value.size(); ++i) {
            double sum = wr->value.v[i] + wd->value.v[i];
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
            REQUIRE(wr->value.v[i] > 0.0);
            REQUIRE(wr->value.v[i] < 1.0);
        }
    }

    SECTION("matches a 1x1-conv-then-softmax oracle") {
        auto [wr, wd] = imff.selection_weights(maps);
        Tensor<double> cat(2, 18, 5, 5);
        const auto& t = maps.tot->value;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 6; ++j)
                for (int p = 0; p < 25; ++p) {
                    cat.v[(static_cast<size_t>(i) * 18 + j) * 25 + p] = t.v[(i * 6 + j) * 25 + p];
                    cat.v[(static_cast<size_t>(i) * 18 + 6 + j) * 25 + p] =
                        maps.sh->value.v[(i * 6 + j) * 25 + p];
                    cat.v[(static_cast<size_t>(i) * 18 + 12 + j) * 25 + p] =
                        maps.diff->value.v[(i * 6 + j) * 25 + p];
                }
        auto scores = naive_conv2d(cat, imff.weight_gen.weight->value,
                                   &imff.weight_gen.bias->value, 1, 0, 1);
        for (int i = 0; i < 2; ++i)
            for (int p = 0; p < 25; ++p) {
                double a = scores.v[(static_cast<size_t>(i) * 2 + 0) * 25 + p];
                double b = scores.v[(static_cast<size_t>(i) * 2 + 1) * 25 + p];
                double ea = std::exp(a - std::max(a, b)), eb = std::exp(b - std::max(a, b));
                double ref_wr = ea / (ea + eb);
                REQUIRE(wr->value.v[static_cast<size_t>(i) * 25 + p] ==
                        Catch::Approx(ref_wr).margin(1e-6));
            }
    }
}

TEST_CASE("weighted fusion blends per location") {
    Rng rng(24);
    auto fr = rand_tensor<double>(rng, 1, 5, 4, 4);
    auto fd = rand_tensor<double>(rng, 1, 5, 4, 4);
    auto wr = rand_tensor<double>(rng, 1, 1, 4, 4, 0.0, 1.0);
    Tensor<double> wd = wr;
    for (auto& v : wd.v) v = 1.0 - v;

    SECTION("degenerate weights return one modality") {
        auto ones = make_var(Tensor<double>::full(1, 1, 4, 4, 1.0));
        auto zeros = make_var(Tensor<double>(1, 1, 4, 4));
        auto fused = ImffModule<double>::weighted_fusion(make_var(fr), make_var(fd), ones, zeros);
        REQUIRE(fused->value.v == fr.v);
    }

    SECTION("equal inputs under complementary weights are unchanged") {
        auto fused = ImffModule<double>::weighted_fusion(make_var(fr), make_var(fr), make_var(wr),
                                                         make_var(wd));
        REQUIRE(testutil::max_rel_diff(fused->value, fr) < 1e-12);
    }

    SECTION("matches the per-element oracle exactly") {
        auto fused = ImffModule<double>::weighted_fusion(make_var(fr), make_var(fd), make_var(wr),
                                                         make_var(wd));
        for (int j = 0; j < 5; ++j)
            for (int p = 0; p < 16; ++p) {
                size_t idx = static_cast<size_t>(j) * 16 + p;
                REQUIRE(fused->value.v[idx] == wr.v[p] * fr.v[idx] + wd.v[p] * fd.v[idx]);
            }
    }
}

TEST_CASE("imff_fuse composes the four stages") {
    Rng rng(25);
    ImffModule<double> imff(4, rng);
    auto fr = make_var(rand_tensor<double>(rng, 1, 4, 4, 4));
    auto fd = make_var(rand_tensor<double>(rng, 1, 4, 4, 4));

    SECTION("composition equals manual chaining exactly") {
        auto fused = imff.fuse(fr, fd);
        auto maps = ImffModule<double>::interactions(imff.project(fr), imff.project(fd));
        auto [wr, wd] = imff.selection_weights(maps);
        auto manual = ImffModule<double>::weighted_fusion(fr, fd, wr, wd);
        REQUIRE(fused->value.v == manual->value.v);
    }

    SECTION("identical modalities pass through unchanged") {
        auto fused = imff.fuse(fr, fr);
        REQUIRE(testutil::max_rel_diff(fused->value, fr->value, 1e-6) < 1e-12);
    }

    SECTION("fused output is a per-location convex combination") {
        for (uint64_t seed : {1u, 2u, 3u}) {
            Rng local(seed);
            ImffModule<double> m(4, local);
            auto a = rand_tensor<double>(local, 2, 4, 6, 6);
            auto b = rand_tensor<double>(local, 2, 4, 6, 6);
            auto fused = m.fuse(make_var(a), make_var(b));
            for (size_t i = 0; i < a.size(); ++i) {
                double lo = std::min(a.v[i], b.v[i]) - 1e-9;
                double hi = std::max(a.v[i], b.v[i]) + 1e-9;
                REQUIRE(fused->value.v[i] >= lo);
                REQUIRE(fused->value.v[i] <= hi);
            }
        }
    }
}

TEST_CASE("imff end-to-end gradient matches finite differences") {
    Rng rng(26);
    ImffModule<double> imff(4, rng);
    auto fr = rand_tensor<double>(rng, 1, 4, 4, 4);
    auto fd = make_var(rand_tensor<double>(rng, 1, 4, 4, 4));
    auto proj = rand_tensor<double>(rng, 1, 4, 4, 4);

    Tensor<double> r = rand_tensor<double>(rng, 1, 4, 4, 4);
    auto f = [&]() { return dot_const(imff.fuse(make_var(fr, true), fd), r)->value.v[0]; };
    auto frv = make_var(fr, true);
    backward(dot_const(imff.fuse(frv, fd), r));
    auto report = fd_check(f, fr, frv->grad);
    CAPTURE(report.max_rel_error);
    REQUIRE(report.max_rel_error < 1e-4);

    // parameter gradients flow through both the projection and the scores
    auto wf = [&]() {
        return dot_const(imff.fuse(make_var(fr, true), fd), r)->value.v[0];
    };
    imff.visit(
        "", [](const std::string&, const VarPtr<double>& p) { p->zero_grad(); },
        [](const std::string&, Tensor<double>&) {});
    backward(dot_const(imff.fuse(make_var(fr, true), fd), r));
    auto wreport =
        fd_check(wf, imff.proj.weight->value, imff.proj.weight->grad,
                 testutil::spread_coords(imff.proj.weight->value.size(), 60));
    REQUIRE(wreport.max_rel_error < 1e-4);
}
