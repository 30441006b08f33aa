#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "fixtures.hpp"
#include "metric_oracles.hpp"
#include "relbal/error.hpp"
#include "relbal/metrics.hpp"

using namespace relbal;
using relbal::testing::ch_pairwise;
using relbal::testing::db_direct;
using relbal::testing::random_tensor;

namespace {

using Labels = std::vector<std::size_t>;

Tensor points(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> v;
    std::size_t d = 0;
    for (const auto& r : rows) {
        d = r.size();
        v.insert(v.end(), r);
    }
    return Tensor({rows.size(), d}, v);
}

}  // namespace

TEST_CASE("accuracy") {
    CHECK(accuracy(Labels{0, 1, 2}, Labels{0, 1, 2}) == 1.0);
    CHECK(accuracy(Labels{0, 1, 1, 0}, Labels{0, 1, 0, 1}) == 0.5);
    // Matches at positions 0, 2 and 4.
    CHECK(accuracy(Labels{0, 2, 2, 1, 1, 0}, Labels{0, 1, 2, 0, 1, 2}) == 0.5);
    CHECK_THROWS_AS(accuracy(Labels{}, Labels{}), ContractError);
    CHECK_THROWS_AS(accuracy(Labels{0}, Labels{0, 1}), ShapeError);
}

TEST_CASE("macro F1") {
    CHECK(macro_f1(Labels{0, 1, 2}, Labels{0, 1, 2}, 3) == 1.0);
    // TP = FP = FN = 1 for both classes.
    CHECK(macro_f1(Labels{0, 1, 1, 0}, Labels{0, 0, 1, 1}, 2) == doctest::Approx(0.5).epsilon(1e-15));
    // Class 2 never appears and contributes 0.
    CHECK(macro_f1(Labels{0, 1}, Labels{0, 1}, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS_AS(macro_f1(Labels{}, Labels{}, 2), ContractError);
    CHECK_THROWS_AS(macro_f1(Labels{0}, Labels{5}, 2), ContractError);
}

TEST_CASE("confusion matrix") {
    const Labels y{0, 0, 1, 2, 2}, p{0, 1, 1, 2, 0};
    const auto m = confusion_matrix(p, y, 3);
    const double expect[3][3] = {{0.5, 0.5, 0.0}, {0.0, 1.0, 0.0}, {0.5, 0.0, 0.5}};
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(m.at(r, c) == expect[r][c]);
    const auto all_zero = confusion_matrix(Labels{0, 0, 0}, Labels{0, 1, 2}, 4);
    for (std::size_t r = 0; r < 3; ++r) CHECK(all_zero.at(r, 0) == 1.0);
    for (std::size_t c = 0; c < 4; ++c) CHECK(all_zero.at(3, c) == 0.0);
    const auto id = confusion_matrix(Labels{0, 1, 2, 1}, Labels{0, 1, 2, 1}, 3);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(id.at(r, c) == (r == c ? 1.0 : 0.0));
}

TEST_CASE("accuracy is the trace of the count matrix over n, and metrics ignore sample order") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> cls(0, 4);
    for (int trial = 0; trial < 50; ++trial) {
        Labels y(40), p(40);
        for (auto& v : y) v = cls(rng);
        for (auto& v : p) v = cls(rng);
        const auto counts = confusion_counts(p, y, 5);
        double trace = 0.0;
        for (std::size_t c = 0; c < 5; ++c) trace += counts.at(c, c);
        CHECK(accuracy(p, y) == doctest::Approx(trace / 40.0).epsilon(1e-15));
        for (std::size_t r = 0; r < 5; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 5; ++c) s += confusion_matrix(p, y, 5).at(r, c);
            CHECK((s == 0.0 || std::abs(s - 1.0) < 1e-9));
        }
        std::vector<std::size_t> perm(40);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Labels ys, ps;
        Tensor x = random_tensor({40, 3}, rng), xs({40, 3});
        for (std::size_t i = 0; i < 40; ++i) {
            ys.push_back(y[perm[i]]);
            ps.push_back(p[perm[i]]);
            for (std::size_t c = 0; c < 3; ++c) xs.at(i, c) = x.at(perm[i], c);
        }
        CHECK(accuracy(ps, ys) == accuracy(p, y));
        CHECK(macro_f1(ps, ys, 5) == doctest::Approx(macro_f1(p, y, 5)).epsilon(1e-15));
        CHECK(davies_bouldin(xs, ys) == doctest::Approx(davies_bouldin(x, y)).epsilon(1e-12));
        CHECK(calinski_harabasz(xs, ys) == doctest::Approx(calinski_harabasz(x, y)).epsilon(1e-12));
    }
}

TEST_CASE("Davies-Bouldin") {
    CHECK(davies_bouldin(points({{0, 0}, {3, 4}}), Labels{0, 1}) == 0.0);
    // Centroids (1, 0) and (10, 2), dispersions 1 and 2.
    const auto x = points({{0, 0}, {2, 0}, {10, 0}, {10, 4}});
    CHECK(davies_bouldin(x, Labels{0, 0, 1, 1}) == doctest::Approx(3.0 / std::sqrt(85.0)).epsilon(1e-15));
    CHECK_THROWS_AS(davies_bouldin(points({{0, 1}, {0, -1}, {1, 0}, {-1, 0}}), Labels{0, 0, 1, 1}), NumericError);
    CHECK_THROWS_AS(davies_bouldin(x, Labels{0, 0, 0, 0}), ContractError);
    SUBCASE("shrinking clusters toward fixed centroids never raises the index") {
        std::mt19937_64 rng(3);
        Tensor base = random_tensor({12, 3}, rng);
        const Labels y{0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
        Tensor cen({3, 3}, 0.0);
        for (std::size_t i = 0; i < 12; ++i)
            for (std::size_t c = 0; c < 3; ++c) cen.at(y[i], c) += base.at(i, c) / 4.0;
        double prev = std::numeric_limits<double>::infinity();
        for (double t = 1.0; t >= 0.0; t -= 0.1) {
            Tensor s = base;
            for (std::size_t i = 0; i < 12; ++i)
                for (std::size_t c = 0; c < 3; ++c) s.at(i, c) = cen.at(y[i], c) + t * (base.at(i, c) - cen.at(y[i], c));
            const double db = davies_bouldin(s, y);
            CHECK(db <= prev + 1e-12);
            prev = db;
        }
    }
}

TEST_CASE("Calinski-Harabasz") {
    // Between 100 over k - 1 = 1, within 4 over n - k = 2.
    const auto x = points({{0, 0}, {0, 2}, {10, 0}, {10, 2}});
    const Labels y{0, 0, 1, 1};
    CHECK(calinski_harabasz(x, y) == doctest::Approx(50.0).epsilon(1e-15));
    Tensor scaled = x;
    for (auto& v : scaled.values()) v *= 7.5;
    CHECK(calinski_harabasz(scaled, y) == doctest::Approx(50.0).epsilon(1e-13));
    double prev = 0.0;
    for (double gap = 1.0; gap < 20.0; gap += 1.0) {
        const double ch = calinski_harabasz(points({{0, 0}, {0, 2}, {gap, 0}, {gap, 2}}), y);
        CHECK(ch > prev);
        prev = ch;
    }
    std::string diag;
    CHECK(std::isinf(calinski_harabasz(points({{0, 0}, {0, 0}, {1, 1}, {1, 1}}), y, &diag)));
    CHECK_FALSE(diag.empty());
    CHECK_THROWS_AS(calinski_harabasz(points({{0, 0}, {1, 1}}), Labels{0, 1}), ContractError);
}

TEST_CASE("DB and CH agree with brute force on 50 random instances") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 2 + trial % 4, n = k * 3 + trial % 7, d = 1 + trial % 5;
        Labels y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = i % k;
        std::shuffle(y.begin(), y.end(), rng);
        const Tensor x = random_tensor({n, d}, rng, 2.0);
        CHECK(std::abs(davies_bouldin(x, y) - db_direct(x, y)) < 1e-9);
        CHECK(std::abs(calinski_harabasz(x, y) - ch_pairwise(x, y)) < 1e-9 * std::max(1.0, ch_pairwise(x, y)));
    }
}

TEST_CASE("distribution spread") {
    Tensor uniform({5, 8}, 0.125), one_hot({5, 8}, 0.0), mixed({5, 8}, 0.0);
    for (std::size_t r = 0; r < 5; ++r) {
        one_hot.at(r, r) = 1.0;
        for (std::size_t c = 0; c < 8; ++c) mixed.at(r, c) = 0.5 * one_hot.at(r, c) + 0.5 * 0.125;
    }
    CHECK(distribution_spread(uniform, uniform).first == 0.0);
    const auto [p, c] = distribution_spread(one_hot, mixed);
    CHECK(p == doctest::Approx(std::sqrt(7.0) / 8.0).epsilon(1e-15));
    CHECK(c == doctest::Approx(std::sqrt(7.0) / 16.0).epsilon(1e-15));
    CHECK(c < p);
    CHECK_THROWS_AS(distribution_spread(one_hot, Tensor({4, 8}, 0.0)), ShapeError);
}

TEST_CASE("eval report serialisation") {
    EvalReport r;
    r.accuracy = 0.75;
    r.macro_f1 = 0.5;
    r.confusion = confusion_matrix(Labels{0, 1, 1}, Labels{0, 1, 0}, 2);
    r.db_score = 1.25;
    r.ch_score = std::numeric_limits<double>::infinity();
    r.n_samples = 3;
    r.n_classes = 2;
    r.diagnostics = "note";
    const auto j = nlohmann::json::parse(eval_report_json(r));
    REQUIRE(j.size() == kEvalReportKeys.size());
    for (auto key : kEvalReportKeys) CHECK(j.contains(std::string(key)));
    CHECK(j["ch_score"].is_null());
    CHECK(j["db_score"] == 1.25);
    CHECK(j["confusion"][0][0] == 0.5);
    CHECK(j["confusion"][1][1] == 1.0);
    CHECK(j["n_samples"] == 3);
    CHECK(confusion_csv(r.confusion) == "true,pred_0,pred_1\n0,0.5,0.5\n1,0,1\n");
}
