#include <doctest.h>

#include <functional>
#include <random>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "relbal/attention.hpp"
#include "relbal/error.hpp"
#include "relbal/ops.hpp"

using namespace relbal;
using testing::check_gradients;
using testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

// Contracts the op output with a fixed random weight so every output entry
// contributes a distinct gradient.
Var contract(Tape& t, Var y, const Tensor& w) { return ops::sum(ops::mul(y, t.constant(w))); }

struct OpCase {
    const char* name;
    std::vector<Shape> inputs;
    std::function<Var(Tape&, std::vector<Var>&)> fn;
    double scale = 1.0;
};

std::vector<OpCase> op_cases() {
    using V = std::vector<Var>;
    static const std::vector<std::size_t> gather_idx{2, 0, 2, 1};
    static const std::vector<std::size_t> elem_idx{5, 0, 3, 3, 1, 4};
    return {
        {"add", {{3, 4}, {3, 4}}, [](Tape&, V& v) { return ops::add(v[0], v[1]); }},
        {"sub", {{3, 4}, {3, 4}}, [](Tape&, V& v) { return ops::sub(v[0], v[1]); }},
        {"mul", {{3, 4}, {3, 4}}, [](Tape&, V& v) { return ops::mul(v[0], v[1]); }},
        {"scale", {{3, 4}}, [](Tape&, V& v) { return ops::scale(v[0], -1.7); }},
        {"add_scalar", {{3, 4}}, [](Tape&, V& v) { return ops::add_scalar(v[0], 0.3); }},
        {"add_bias", {{3, 4}, {4}}, [](Tape&, V& v) { return ops::add_bias(v[0], v[1]); }},
        {"scale_rows", {{3, 4}, {3, 1}}, [](Tape&, V& v) { return ops::scale_rows(v[0], v[1]); }},
        {"matmul", {{3, 4}, {4, 2}}, [](Tape&, V& v) { return ops::matmul(v[0], v[1]); }},
        {"matmul_nt", {{3, 4}, {5, 4}}, [](Tape&, V& v) { return ops::matmul_nt(v[0], v[1]); }},
        {"transpose", {{3, 4}}, [](Tape&, V& v) { return ops::transpose(v[0]); }},
        {"reshape", {{3, 4}}, [](Tape&, V& v) { return ops::reshape(v[0], {2, 6}); }},
        {"relu", {{3, 4}}, [](Tape&, V& v) { return ops::relu(v[0]); }},
        {"gelu", {{3, 4}}, [](Tape&, V& v) { return ops::gelu(v[0]); }},
        {"exp", {{3, 4}}, [](Tape&, V& v) { return ops::exp(v[0]); }},
        {"log", {{3, 4}}, [](Tape&, V& v) { return ops::log(ops::add_scalar(ops::square(v[0]), 0.5), 1e-12); }},
        {"square", {{3, 4}}, [](Tape&, V& v) { return ops::square(v[0]); }},
        {"mean", {{3, 4}}, [](Tape&, V& v) { return ops::mean(v[0]); }},
        {"mean_rows", {{3, 4}}, [](Tape&, V& v) { return ops::mean_rows(v[0]); }},
        {"sum_cols", {{3, 4}}, [](Tape&, V& v) { return ops::sum_cols(v[0]); }},
        {"softmax_rows", {{3, 4}}, [](Tape&, V& v) { return ops::softmax_rows(v[0], 0.7); }},
        {"layer_norm", {{3, 4}, {4}, {4}}, [](Tape&, V& v) { return ops::layer_norm(v[0], v[1], v[2]); }},
        {"slice_cols", {{3, 5}}, [](Tape&, V& v) { return ops::slice_cols(v[0], 1, 3); }},
        {"concat_cols", {{3, 2}, {3, 3}},
         [](Tape&, V& v) { return ops::concat_cols(std::vector<Var>{v[0], v[1], v[0]}); }},
        {"gather_rows", {{3, 4}}, [](Tape&, V& v) { return ops::gather_rows(v[0], gather_idx); }},
        {"concat_rows", {{2, 4}, {3, 4}},
         [](Tape&, V& v) { return ops::concat_rows(std::vector<Var>{v[1], v[0]}); }},
        {"gather_elements", {{2, 3}}, [](Tape&, V& v) { return ops::gather_elements(v[0], elem_idx, {3, 2}); }},
        {"dropout", {{3, 4}},
         [](Tape&, V& v) {
             std::mt19937_64 rng(5);
             return ops::dropout(v[0], 0.5, rng, true);
         }},
        {"batch_norm_train", {{5, 3}, {3}, {3}},
         [](Tape&, V& v) {
             Tensor mean({3}, 0.0), var({3}, 1.0);
             return ops::batch_norm(v[0], v[1], v[2], {&mean, &var}, true);
         }},
        {"batch_norm_eval", {{5, 3}, {3}, {3}},
         [](Tape&, V& v) {
             Tensor mean = Tensor::vector({0.1, -0.2, 0.3}), var = Tensor::vector({0.5, 2.0, 1.5});
             return ops::batch_norm(v[0], v[1], v[2], {&mean, &var}, false);
         }},
        {"attention", {{3, 4}, {5, 4}, {4, 4}, {4, 4}, {4, 4}, {4, 4}, {3, 5}, {3, 5}},
         [](Tape&, V& v) {
             const std::vector<Var> bias{v[6], v[7]};
             return multi_head_attention(v[0], v[1], {v[2], v[3], v[4], v[5]}, 2, bias);
         }},
    };
}

}  // namespace

TEST_CASE("every primitive matches central differences over 10 seeds") {
    for (const auto& c : op_cases()) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            CAPTURE(c.name);
            CAPTURE(seed);
            std::mt19937_64 rng(seed * 7919 + 1);
            std::vector<Tensor> inputs;
            for (const auto& s : c.inputs) inputs.push_back(random_tensor(s, rng, c.scale));
            for (auto& t : inputs) t.set_requires_grad(true);
            Tensor weight;
            auto build = [&](Tape& t) {
                std::vector<Var> vars;
                for (auto& in : inputs) vars.push_back(t.leaf(in));
                const Var y = c.fn(t, vars);
                if (weight.empty()) {
                    std::mt19937_64 wr(seed + 100);
                    weight = random_tensor(y.shape(), wr);
                }
                return contract(t, y, weight);
            };
            std::vector<testing::GradTarget> targets;
            for (std::size_t i = 0; i < inputs.size(); ++i) targets.push_back({"in" + std::to_string(i), &inputs[i]});
            const auto r = check_gradients(targets, build);
            CAPTURE(r.worst);
            CHECK(r.max_rel_error <= kTol);
            CHECK(r.checked > 0);
        }
    }
}

TEST_CASE("sum has a gradient of ones") {
    Tensor x({2, 3}, 0.5);
    x.set_requires_grad(true);
    Tape t;
    const auto g = t.backward(ops::sum(t.leaf(x)));
    const Tensor* gx = g.find(x);
    REQUIRE(gx != nullptr);
    for (double v : gx->values()) CHECK(v == 1.0);
}

TEST_CASE("detached leaves get no gradient entry") {
    Tensor x({2}, 1.0), y({2}, 2.0);
    x.set_requires_grad(true);
    Tape t;
    const auto g = t.backward(ops::sum(ops::mul(t.leaf(x), t.leaf(y))));
    CHECK(g.contains(x));
    CHECK_FALSE(g.contains(y));
    CHECK(g.size() == 1);
}

TEST_CASE("unreached leaves get no gradient entry") {
    Tensor x({2}, 1.0), z({2}, 1.0);
    x.set_requires_grad(true);
    z.set_requires_grad(true);
    Tape t;
    t.leaf(z);
    const auto g = t.backward(ops::sum(t.leaf(x)));
    CHECK_FALSE(g.contains(z));
}

TEST_CASE("a leaf used twice accumulates both paths") {
    Tensor x = Tensor::vector({3.0});
    x.set_requires_grad(true);
    Tape t;
    const Var v = t.leaf(x);
    const auto g = t.backward(ops::sum(ops::mul(v, v)));
    CHECK(g.find(x)->values()[0] == 6.0);
}

TEST_CASE("backward requires a scalar loss from the same tape") {
    Tensor x({2, 2}, 1.0);
    x.set_requires_grad(true);
    Tape t, other;
    const Var v = t.leaf(x);
    CHECK_THROWS_AS(t.backward(v), ContractError);
    CHECK_THROWS_AS(other.backward(ops::sum(v)), ContractError);
    CHECK_THROWS_AS(ops::add(v, other.leaf(x)), ContractError);
}

TEST_CASE("dropout is the identity outside training and scales kept units") {
    Tensor x({4, 50}, 1.0);
    Tape t;
    std::mt19937_64 rng(1);
    CHECK(ops::dropout(t.leaf(x), 0.5, rng, false).value() == x);
    const auto y = ops::dropout(t.leaf(x), 0.5, rng, true).value();
    for (double v : y.values()) CHECK((v == 0.0 || v == 2.0));
}

TEST_CASE("relative position index covers the table") {
    const auto idx = relative_position_index(2);
    CHECK(idx.size() == 16);
    for (auto i : idx) CHECK(i < 9);
    // The diagonal (zero offset) maps to the centre entry.
    for (std::size_t m = 0; m < 4; ++m) CHECK(idx[m * 4 + m] == 4);
}

TEST_CASE("single-head attention on a hand case") {
    // Identity projections, one head, D = 2: q k^T / sqrt(2), softmax over keys.
    Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tensor q = Tensor::matrix(1, 2, {1, 0});
    Tensor kv = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tape t;
    const auto out = multi_head_attention(t.leaf(q), t.leaf(kv), {t.leaf(eye), t.leaf(eye), t.leaf(eye), t.leaf(eye)}, 1)
                         .value();
    const double a = std::exp(1.0 / std::sqrt(2.0)), b = 1.0;
    CHECK(std::abs(out[0] - a / (a + b)) < 1e-14);
    CHECK(std::abs(out[1] - b / (a + b)) < 1e-14);
}
