#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "relbal/encoder.hpp"
#include "relbal/error.hpp"
#include "relbal/numeric.hpp"
#include "relbal/ops.hpp"

using namespace relbal;
using testing::random_tensor;

namespace {

ImageFeatureMap grid_map(std::size_t side, std::size_t dim, std::mt19937_64& rng) {
    return {random_tensor({side * side, dim}, rng), FeatureLevel::low};
}

Tensor identity(std::size_t n) {
    Tensor t({n, n}, 0.0);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

CrossAttentionParams<Tensor> random_cross(std::size_t dim, std::size_t heads, std::size_t side, std::mt19937_64& rng) {
    const auto span = (2 * side - 1) * (2 * side - 1);
    return {{random_tensor({dim, dim}, rng, 0.5), random_tensor({dim, dim}, rng, 0.5),
             random_tensor({dim, dim}, rng, 0.5), random_tensor({dim, dim}, rng, 0.5)},
            random_tensor({heads, span}, rng, 0.3), heads, side};
}

EncoderBlockParams<Tensor> zero_block(std::size_t dim, std::size_t hidden) {
    return {Tensor({dim}, 1.0), Tensor({dim}, 0.0),
            {Tensor({dim, hidden}, 0.0), Tensor({hidden}, 0.0), Tensor({hidden, dim}, 0.0), Tensor({dim}, 0.0)}};
}

}  // namespace

TEST_CASE("4x4 grid with 2x2 windows gives four windows of four tokens") {
    const auto idx = window_token_indices(4, 2);
    REQUIRE(idx.size() == 4);
    CHECK(idx[0] == std::vector<std::size_t>{0, 1, 4, 5});
    CHECK(idx[1] == std::vector<std::size_t>{2, 3, 6, 7});
    CHECK(idx[2] == std::vector<std::size_t>{8, 9, 12, 13});
    CHECK(idx[3] == std::vector<std::size_t>{10, 11, 14, 15});
    std::mt19937_64 rng(1);
    const auto fm = grid_map(4, 3, rng);
    const auto windows = partition_windows(fm, 4);
    REQUIRE(windows.size() == 4);
    for (std::size_t w = 0; w < 4; ++w)
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t c = 0; c < 3; ++c) CHECK(windows[w].at(t, c) == fm.tokens.at(idx[w][t], c));
}

TEST_CASE("a single window spanning the grid is the identity partition") {
    std::mt19937_64 rng(2);
    const auto fm = grid_map(4, 5, rng);
    const auto windows = partition_windows(fm, 16);
    REQUIRE(windows.size() == 1);
    CHECK(windows[0] == fm.tokens);
}

TEST_CASE("8x8 grid with 4x4 windows round-trips bit-exactly") {
    std::mt19937_64 rng(3);
    const auto fm = grid_map(8, 6, rng);
    const auto windows = partition_windows(fm, 16);
    CHECK(windows.size() == 4);
    CHECK(merge_windows(windows, 8, 4) == fm.tokens);
}

TEST_CASE("every token lands in exactly one window") {
    for (auto [grid, side] : {std::pair<std::size_t, std::size_t>{8, 2}, {8, 4}, {6, 3}, {4, 1}, {2, 2}}) {
        std::multiset<std::size_t> seen;
        for (const auto& w : window_token_indices(grid, side)) seen.insert(w.begin(), w.end());
        CHECK(seen.size() == grid * grid);
        for (std::size_t t = 0; t < grid * grid; ++t) CHECK(seen.count(t) == 1);
    }
}

TEST_CASE("non-divisible window sizes are shape errors") {
    std::mt19937_64 rng(4);
    const auto fm = grid_map(4, 2, rng);
    CHECK_THROWS_AS(partition_windows(fm, 9), ShapeError);
    CHECK_THROWS_AS(partition_windows(fm, 3), ShapeError);
    CHECK_THROWS_AS(window_token_indices(6, 4), ShapeError);
    const ImageFeatureMap odd{Tensor({5, 2}), FeatureLevel::mid};
    CHECK_THROWS_AS(odd.grid_side(), ShapeError);
}

TEST_CASE("landmark downsampling") {
    SUBCASE("same size with A_c = D and identity projection flattens channels") {
        std::mt19937_64 rng(5);
        const LandmarkFeatureMap lm{random_tensor({3, 2, 2}, rng)};
        const auto z = downsample_landmark(lm, 2, 2, identity(3));
        CHECK(z.shape() == Shape{4, 3});
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t t = 0; t < 4; ++t) CHECK(z.at(t, a) == lm.channels[a * 4 + t]);
    }
    SUBCASE("pooling a constant map keeps the constant") {
        const LandmarkFeatureMap lm{Tensor({2, 4, 4}, 0.75)};
        const auto z = pool_landmark(lm, 2, 2);
        for (double v : z.values()) CHECK(v == 0.75);
    }
    SUBCASE("4x4 ramp pooled to 2x2 gives block means") {
        Tensor ramp({1, 4, 4});
        for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i);
        const auto z = pool_landmark({ramp}, 2, 2);
        // Blocks {0,1,4,5}, {2,3,6,7}, {8,9,12,13}, {10,11,14,15}.
        CHECK(z[0] == 2.5);
        CHECK(z[1] == 4.5);
        CHECK(z[2] == 10.5);
        CHECK(z[3] == 12.5);
    }
    SUBCASE("output has h*w tokens of width D") {
        std::mt19937_64 rng(6);
        const auto z = downsample_landmark({random_tensor({4, 8, 8}, rng)}, 2, 2, random_tensor({4, 6}, rng));
        CHECK(z.shape() == Shape{4, 6});
    }
    SUBCASE("target larger than the source is a shape error") {
        CHECK_THROWS_AS(pool_landmark({Tensor({1, 2, 2})}, 3, 3), ShapeError);
        CHECK_THROWS_AS(downsample_landmark({Tensor({2, 4, 4})}, 2, 2, identity(3)), ShapeError);
    }
}

TEST_CASE("cross attention matches the direct formula for one head") {
    // M = 4 (2x2 window), D = 3, I = 1. Evaluated by explicit loops.
    std::mt19937_64 rng(7);
    const std::size_t M = 4, D = 3;
    const WindowPair pair{random_tensor({M, D}, rng), random_tensor({M, D}, rng)};
    const auto w = random_cross(D, 1, 2, rng);
    const auto out = window_cross_attention(pair, w);

    auto project = [&](const Tensor& x, const Tensor& m) {
        Tensor y({M, D}, 0.0);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < D; ++j)
                for (std::size_t k = 0; k < D; ++k) y.at(i, j) += x.at(i, k) * m.at(k, j);
        return y;
    };
    const auto q = project(pair.z_lm, w.proj.wq), k = project(pair.z_img, w.proj.wk), v = project(pair.z_img, w.proj.wv);
    Tensor o({M, D}, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        std::vector<double> logit(M);
        for (std::size_t j = 0; j < M; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < D; ++c) s += q.at(i, c) * k.at(j, c);
            // Relative offset (dy, dx) of token i from token j in the 2x2 window.
            const int dy = static_cast<int>(i / 2) - static_cast<int>(j / 2);
            const int dx = static_cast<int>(i % 2) - static_cast<int>(j % 2);
            logit[j] = s / std::sqrt(3.0) + w.bias_table[(dy + 1) * 3 + (dx + 1)];
        }
        double z = 0.0;
        for (double l : logit) z += std::exp(l);
        for (std::size_t j = 0; j < M; ++j)
            for (std::size_t c = 0; c < D; ++c) o.at(i, c) += std::exp(logit[j]) / z * v.at(j, c);
    }
    const auto expected = project(o, w.proj.wo);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - expected[i]) < 1e-12);
}

TEST_CASE("constant image window makes the output independent of attention") {
    std::mt19937_64 rng(8);
    Tensor img({4, 4});
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) img.at(r, c) = 0.1 * static_cast<double>(c) - 0.2;
    auto w = random_cross(4, 2, 2, rng);
    const auto a = window_cross_attention({img, random_tensor({4, 4}, rng)}, w);
    w.bias_table = random_tensor(w.bias_table.shape(), rng, 5.0);
    const auto b = window_cross_attention({img, random_tensor({4, 4}, rng)}, w);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("a constant bias table leaves attention unchanged") {
    std::mt19937_64 rng(9);
    const WindowPair pair{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng)};
    auto w = random_cross(4, 2, 2, rng);
    w.bias_table.fill(0.0);
    const auto zero = window_cross_attention(pair, w);
    w.bias_table.fill(3.7);
    const auto shifted = window_cross_attention(pair, w);
    for (std::size_t i = 0; i < zero.size(); ++i) CHECK(std::abs(zero[i] - shifted[i]) < 1e-12);
}

TEST_CASE("attention rows are distributions for every head and query") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        Tape t;
        auto w = random_cross(8, 4, 2, rng);
        std::vector<Var> attn;
        multi_head_attention(t.constant(random_tensor({4, 8}, rng, 3.0)), t.constant(random_tensor({6, 8}, rng, 3.0)),
                             bind(t, w.proj), 4, {}, &attn);
        REQUIRE(attn.size() == 4);
        for (const auto& a : attn)
            for (std::size_t r = 0; r < a.rows(); ++r) {
                double s = 0.0;
                for (double p : a.value().row(r)) {
                    CHECK(p >= 0.0);
                    s += p;
                }
                CHECK(std::abs(s - 1.0) < 1e-9);
            }
    }
}

TEST_CASE("cross attention rejects a head count that does not divide D") {
    std::mt19937_64 rng(11);
    const WindowPair pair{random_tensor({4, 6}, rng), random_tensor({4, 6}, rng)};
    auto w = random_cross(6, 4, 2, rng);
    CHECK_THROWS_AS(window_cross_attention(pair, w), ConfigError);
    w = random_cross(6, 2, 2, rng);
    CHECK_THROWS_AS(window_cross_attention({pair.z_img, random_tensor({4, 5}, rng)}, w), ShapeError);
}

TEST_CASE("zero OCA and zero MLP make the block the identity") {
    std::mt19937_64 rng(12);
    const auto fm = grid_map(4, 6, rng);
    const auto out = cross_fusion_encode(fm, Tensor({16, 6}, 0.0), zero_block(6, 5));
    CHECK(out == fm.tokens);
}

TEST_CASE("zeroed attention weights make the whole level the identity") {
    // wv = wo = 0 gives a zero cross-attention output, so X_img_O = X_img.
    std::mt19937_64 rng(13);
    const auto fm = grid_map(4, 4, rng);
    auto w = random_cross(4, 2, 2, rng);
    w.proj.wv.fill(0.0);
    w.proj.wo.fill(0.0);
    std::vector<Tensor> outs;
    for (const auto& win : partition_windows(fm, 4)) outs.push_back(window_cross_attention({win, win}, w));
    const auto oca = merge_windows(outs, 4, 2);
    CHECK(cross_fusion_encode(fm, oca, zero_block(4, 3)) == fm.tokens);
}

TEST_CASE("single-token cross fusion matches hand evaluation") {
    // x = [1, 3], oca = [0.5, -0.5] -> x' = [1.5, 2.5], mean 2, variance 0.25.
    const ImageFeatureMap fm{Tensor::matrix(1, 2, {1, 3}), FeatureLevel::high};
    const Tensor oca = Tensor::matrix(1, 2, {0.5, -0.5});
    EncoderBlockParams<Tensor> w{Tensor::vector({2, 1}), Tensor::vector({0, 0.5}),
                                 {Tensor::matrix(2, 1, {1, 1}), Tensor::vector({0.25}), Tensor::matrix(1, 2, {1, -2}),
                                  Tensor::vector({0.1, 0.2})}};
    const auto out = cross_fusion_encode(fm, oca, w);
    const double n0 = -0.5 / std::sqrt(0.25 + 1e-5), n1 = 0.5 / std::sqrt(0.25 + 1e-5);
    const double g0 = 2.0 * n0, g1 = 1.0 * n1 + 0.5;
    const double hidden = g0 + g1 + 0.25;
    // tanh form of GELU.
    const double act =
        0.5 * hidden * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (hidden + 0.044715 * hidden * hidden * hidden)));
    CHECK(std::abs(out[0] - (act + 0.1 + 1.5)) < 1e-9);
    CHECK(std::abs(out[1] - (-2.0 * act + 0.2 + 2.5)) < 1e-9);
}

TEST_CASE("cross fusion stays finite under random weights over 100 seeds") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        const auto fm = grid_map(4, 8, rng);
        EncoderBlockParams<Tensor> w{random_tensor({8}, rng), random_tensor({8}, rng),
                                     {random_tensor({8, 16}, rng), random_tensor({16}, rng),
                                      random_tensor({16, 8}, rng), random_tensor({8}, rng)}};
        CHECK(cross_fusion_encode(fm, random_tensor({16, 8}, rng, 2.0), w).all_finite());
    }
}

TEST_CASE("mismatched OCA reassembly is a shape error") {
    std::mt19937_64 rng(14);
    CHECK_THROWS_AS(cross_fusion_encode(grid_map(4, 4, rng), Tensor({8, 4}), zero_block(4, 2)), ShapeError);
}

namespace {

CombinerParams<Tensor> zero_combiner(std::size_t dim, std::size_t embed, std::mt19937_64& rng) {
    CombinerParams<Tensor> w;
    w.attn = {random_tensor({dim, dim}, rng), random_tensor({dim, dim}, rng), Tensor({dim, dim}, 0.0),
              Tensor({dim, dim}, 0.0)};
    w.heads = 1;
    w.norm_gain = Tensor({dim}, 1.0);
    w.norm_bias = Tensor({dim}, 0.0);
    w.mlp = {Tensor({dim, 3}, 0.0), Tensor({3}, 0.0), Tensor({3, dim}, 0.0), Tensor({dim}, 0.0)};
    w.proj_w = random_tensor({dim, embed}, rng);
    w.proj_b = random_tensor({embed}, rng);
    return w;
}

}  // namespace

TEST_CASE("one level, one token, zeroed attention and MLP gives the projected token") {
    std::mt19937_64 rng(15);
    MultiScaleStack stack{{random_tensor({1, 4}, rng)}, zero_combiner(4, 3, rng)};
    const auto e = multiscale_combine(stack);
    CHECK(e.shape() == Shape{1, 3});
    for (std::size_t j = 0; j < 3; ++j) {
        double expected = stack.weights.proj_b[j];
        for (std::size_t c = 0; c < 4; ++c) expected += stack.levels[0][c] * stack.weights.proj_w.at(c, j);
        CHECK(std::abs(e[j] - expected) < 1e-12);
    }
}

TEST_CASE("permuting levels of identical tokens leaves the embedding unchanged") {
    std::mt19937_64 rng(16);
    Tensor token = random_tensor({1, 4}, rng);
    auto constant_level = [&](std::size_t n) {
        Tensor t({n, 4});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < 4; ++c) t.at(r, c) = token[c];
        return t;
    };
    CombinerParams<Tensor> w;
    w.attn = {random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4, 4}, rng),
              random_tensor({4, 4}, rng)};
    w.heads = 2;
    w.norm_gain = random_tensor({4}, rng);
    w.norm_bias = random_tensor({4}, rng);
    w.mlp = {random_tensor({4, 3}, rng), random_tensor({3}, rng), random_tensor({3, 4}, rng), random_tensor({4}, rng)};
    w.proj_w = random_tensor({4, 2}, rng);
    w.proj_b = random_tensor({2}, rng);
    const auto a = multiscale_combine({{constant_level(4), constant_level(1)}, w});
    const auto b = multiscale_combine({{constant_level(1), constant_level(4)}, w});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("empty stack is a contract error") {
    std::mt19937_64 rng(17);
    CHECK_THROWS_AS(multiscale_combine({{}, zero_combiner(4, 2, rng)}), ContractError);
}

TEST_CASE("encoder geometry validation") {
    EncoderGeometry g;
    CHECK_NOTHROW(g.validate());
    g.heads = 3;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g = {};
    g.window_sides = {3, 2, 2};
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g = {};
    g.grid_sides = {8, 4, 2, 1};
    g.window_sides = {4, 2, 2, 1};
    CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("three desk-scale levels give a dim_e embedding with correct gradients") {
    EncoderGeometry g;  // 8x8, 4x4, 2x2 grids: 64 + 16 + 4 tokens
    const FusionEncoder enc(g);
    ParameterSet params;
    std::mt19937_64 rng(18);
    enc.init_parameters(params, rng);
    const auto input = enc.prepare(random_tensor({16, 16, 3}, rng), random_tensor({4, 16, 16}, rng));
    CHECK(input.image_tokens[0].rows() == 64);
    CHECK(input.image_tokens[1].rows() == 16);
    CHECK(input.image_tokens[2].rows() == 4);

    Tensor probe = random_tensor({1, g.embed_dim}, rng);
    auto build = [&](Tape& t) {
        const auto bound = enc.bind(t, params);
        const Var e = enc.forward(bound, input);
        return ops::sum(ops::mul(e, t.constant(probe)));
    };
    {
        Tape t;
        const auto e = enc.forward(enc.bind(t, params), input);
        CHECK(e.shape() == Shape{1, g.embed_dim});
        CHECK(e.value().all_finite());
    }
    std::vector<testing::GradTarget> targets;
    for (auto& entry : params) targets.push_back({entry.name, &entry.tensor});
    // About six coordinates per parameter keeps the check fast.
    std::size_t checked = 0;
    for (auto& target : targets) {
        const auto stride = std::max<std::size_t>(1, target.tensor->size() / 6);
        const auto r = testing::check_gradients({target}, build, 1e-5, stride);
        CAPTURE(target.name);
        CAPTURE(r.worst);
        CHECK(r.max_rel_error <= 1e-4);
        checked += r.checked;
    }
    CHECK(checked > 200);
}
