#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "relbal/error.hpp"
#include "relbal/losses.hpp"
#include "relbal/ops.hpp"
#include "relbal/reliability.hpp"

using namespace relbal;
using testing::random_tensor;

namespace {

double mean_pairwise_distance(const Tensor& a) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < a.rows(); ++p)
        for (std::size_t q = p + 1; q < a.rows(); ++q, ++n) s += anchor_distance(a.row(p), a.row(q));
    return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("class distribution loss") {
    SUBCASE("perfect one-hot predictions give zero") {
        const auto y = Tensor::matrix(2, 3, {0, 1, 0, 1, 0, 0});
        CHECK(class_distribution_loss(y, y) == 0.0);
    }
    SUBCASE("true-class probability 0.5 gives ln 2") {
        const auto l = Tensor::matrix(1, 2, {0.5, 0.5});
        const auto y = Tensor::matrix(1, 2, {1, 0});
        CHECK(std::abs(class_distribution_loss(l, y) - std::log(2.0)) < 1e-15);
    }
    SUBCASE("two samples give the mean of the per-sample terms") {
        const auto l = Tensor::matrix(2, 2, {0.5, 0.5, 0.2, 0.8});
        const auto y = Tensor::matrix(2, 2, {1, 0, 0, 1});
        const double a = class_distribution_loss(Tensor::matrix(1, 2, {0.5, 0.5}), Tensor::matrix(1, 2, {1, 0}));
        const double b = class_distribution_loss(Tensor::matrix(1, 2, {0.2, 0.8}), Tensor::matrix(1, 2, {0, 1}));
        CHECK(std::abs(class_distribution_loss(l, y) - 0.5 * (a + b)) < 1e-15);
    }
    SUBCASE("zero probabilities are clamped at 1e-12") {
        const auto l = Tensor::matrix(1, 2, {0.0, 1.0});
        const auto y = Tensor::matrix(1, 2, {1, 0});
        CHECK(std::abs(class_distribution_loss(l, y) + std::log(1e-12)) < 1e-12);
    }
    SUBCASE("batch mismatch is a shape error") {
        CHECK_THROWS_AS(class_distribution_loss(Tensor({2, 3}, 0.3), Tensor({3, 3}, 0.3)), ShapeError);
    }
    SUBCASE("nonnegative and equal on both routes") {
        std::mt19937_64 rng(1);
        for (int i = 0; i < 100; ++i) {
            const auto l = testing::random_simplex_rows(4, 5, rng), y = testing::random_simplex_rows(4, 5, rng);
            const double plain = class_distribution_loss(l, y);
            Tape t;
            CHECK(plain >= 0.0);
            CHECK(std::abs(ops::class_distribution_loss(t.constant(l), y).value()[0] - plain) < 1e-12);
        }
    }
}

TEST_CASE("anchor loss") {
    SUBCASE("identical anchors give zero") {
        CHECK(anchor_loss({Tensor({4, 3}, 0.7), 2, 2, 1.0}) == 0.0);
    }
    SUBCASE("two anchors at distance 2 give -4") {
        CHECK(anchor_loss({Tensor::matrix(2, 2, {0, 0, 2, 0}), 2, 1, 1.0}) == -4.0);
    }
    SUBCASE("a single anchor gives zero with a diagnostic") {
        std::string note;
        CHECK(anchor_loss({Tensor::matrix(1, 2, {3, 1}), 1, 1, 1.0}, &note) == 0.0);
        CHECK_FALSE(note.empty());
        Tape t;
        CHECK(ops::anchor_loss(t.constant(Tensor::matrix(1, 2, {3, 1}))).value()[0] == 0.0);
    }
    SUBCASE("scaling the anchors by 2 multiplies the loss by 4") {
        std::mt19937_64 rng(2);
        auto a = random_tensor({6, 3}, rng);
        const double base = anchor_loss({a, 3, 2, 1.0});
        for (auto& v : a.values()) v *= 2.0;
        CHECK(std::abs(anchor_loss({a, 3, 2, 1.0}) - 4.0 * base) < 1e-12);
    }
    SUBCASE("closed form equals the pairwise sum and is never positive") {
        std::mt19937_64 rng(3);
        for (int i = 0; i < 100; ++i) {
            const auto a = random_tensor({2 + i % 9, 4}, rng, 2.0);
            const double plain = anchor_loss({a, a.rows(), 1, 1.0});
            Tape t;
            CHECK(plain <= 0.0);
            CHECK(std::abs(ops::anchor_loss(t.constant(a)).value()[0] - plain) < 1e-10 * (1.0 + std::abs(plain)));
        }
    }
}

TEST_CASE("center loss") {
    const AnchorSet set{Tensor::matrix(4, 2, {3, 0, 0, 5, 9, 9, -9, 9}), 2, 2, 1.0};
    SUBCASE("class anchors at distances 3 and 5 give 9") {
        const std::size_t labels[] = {0};
        CHECK(center_loss(Tensor::matrix(1, 2, {0, 0}), labels, set) == 9.0);
    }
    SUBCASE("an embedding on its class anchor contributes zero") {
        const std::size_t labels[] = {1};
        CHECK(center_loss(Tensor::matrix(1, 2, {-9, 9}), labels, set) == 0.0);
    }
    SUBCASE("batch mean") {
        const std::size_t labels[] = {0, 1};
        CHECK(center_loss(Tensor::matrix(2, 2, {0, 0, -9, 9}), labels, set) == 4.5);
    }
    SUBCASE("label out of range is a contract error") {
        const std::size_t labels[] = {2};
        CHECK_THROWS_AS(center_loss(Tensor::matrix(1, 2, {0, 0}), labels, set), ContractError);
        Tape t;
        CHECK_THROWS_AS(ops::center_loss(t.constant(Tensor::matrix(1, 2, {0, 0})), labels, t.constant(set.anchors), 2),
                        ContractError);
    }
    SUBCASE("a farther extra anchor never raises the loss; both routes agree") {
        std::mt19937_64 rng(4);
        for (int i = 0; i < 100; ++i) {
            const auto e = random_tensor({5, 3}, rng);
            const auto a = random_tensor({3 * 2, 3}, rng);
            std::vector<std::size_t> labels;
            for (std::size_t r = 0; r < 5; ++r) labels.push_back(rng() % 3);
            const double base = center_loss(e, labels, {a, 3, 2, 1.0});
            Tape t;
            CHECK(base >= 0.0);
            CHECK(std::abs(ops::center_loss(t.constant(e), labels, t.constant(a), 2).value()[0] - base) < 1e-12);
            // K = 3: append one random anchor per class.
            Tensor bigger({9, 3});
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t j = 0; j < 2; ++j)
                    for (std::size_t d = 0; d < 3; ++d) bigger.at(c * 3 + j, d) = a.at(c * 2 + j, d);
                for (std::size_t d = 0; d < 3; ++d) bigger.at(c * 3 + 2, d) = 5.0 * std::sin(static_cast<double>(i + c + d));
            }
            CHECK(center_loss(e, labels, {bigger, 3, 3, 1.0}) <= base);
        }
    }
}

TEST_CASE("total loss") {
    const LossParts parts{0.7, -2.5, 1.25};
    CHECK(total_loss(parts, {1, 0, 0}) == 0.7);
    CHECK(total_loss(parts, {}) == 0.7 - 2.5 + 1.25);
    const double base = total_loss(parts, {});
    CHECK(std::abs(total_loss(parts, {1, 2, 1}) - (base - 2.5)) < 1e-15);
    CHECK_THROWS_AS(total_loss({NAN, 0, 0}, {}), NumericError);
    CHECK_THROWS_AS(total_loss({0, INFINITY, 0}, {1, 0, 0}), NumericError);
    CHECK_THROWS_AS(LossWeights({0, 0, 0}).validate(), ConfigError);
    CHECK_THROWS_AS(LossWeights({-1, 1, 1}).validate(), ConfigError);

    Tape t;
    auto c = [&](double v) { return t.constant(Tensor({1}, v)); };
    CHECK(ops::total_loss(c(0.7), c(-2.5), c(1.25), {1, 0.5, 2}).value()[0] == 0.7 - 1.25 + 2.5);
    CHECK(ops::total_loss(c(0.7), Var{}, Var{}, {}).value()[0] == 0.7);
    CHECK_THROWS_AS(ops::total_loss(c(NAN), c(1), c(1), {}), NumericError);
    CHECK_THROWS_AS(ops::total_loss(Var{}, Var{}, Var{}, {}), ContractError);
}

TEST_CASE("anchor and center loss gradients match central differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        auto a = random_tensor({6, 4}, rng);
        auto e = random_tensor({5, 4}, rng);
        a.set_requires_grad(true);
        e.set_requires_grad(true);
        std::vector<std::size_t> labels;
        for (int i = 0; i < 5; ++i) labels.push_back(rng() % 3);
        auto build = [&](Tape& t) {
            const Var av = t.leaf(a), ev = t.leaf(e);
            return ops::total_loss(t.constant(Tensor({1}, 0.0)), ops::anchor_loss(av), ops::center_loss(ev, labels, av, 2),
                                   {1, 0.7, 1.3});
        };
        const auto r = testing::check_gradients({{"anchors", &a}, {"e", &e}}, build);
        CAPTURE(seed);
        CAPTURE(r.worst);
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("a small step on the anchor loss spreads the anchors") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_tensor({6, 3}, rng);
        a.set_requires_grad(true);
        const double before = mean_pairwise_distance(a);
        Tape t;
        const auto g = t.backward(ops::anchor_loss(t.leaf(a)));
        for (std::size_t i = 0; i < a.size(); ++i) a[i] -= 1e-3 * (*g.find(a))[i];
        CHECK(mean_pairwise_distance(a) > before);
    }
}

TEST_CASE("a small step on the center loss pulls each sample toward its anchor") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        // One sample per class, so no anchor is pulled by two samples at once.
        auto a = random_tensor({6, 3}, rng);
        auto e = random_tensor({3, 3}, rng);
        a.set_requires_grad(true);
        e.set_requires_grad(true);
        const std::vector<std::size_t> labels{0, 1, 2};
        auto nearest = [&](std::size_t i) {
            const std::size_t c = labels[i];
            return std::min(anchor_distance(e.row(i), a.row(c * 2)), anchor_distance(e.row(i), a.row(c * 2 + 1)));
        };
        std::vector<double> before;
        for (std::size_t i = 0; i < 3; ++i) before.push_back(nearest(i));
        Tape t;
        const auto g = t.backward(ops::center_loss(t.leaf(e), labels, t.leaf(a), 2));
        for (std::size_t i = 0; i < a.size(); ++i) a[i] -= 1e-3 * (*g.find(a))[i];
        for (std::size_t i = 0; i < e.size(); ++i) e[i] -= 1e-3 * (*g.find(e))[i];
        for (std::size_t i = 0; i < 3; ++i) CHECK(nearest(i) < before[i]);
    }
}
