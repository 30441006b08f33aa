#pragma once

#include <random>

#include "relbal/tensor.hpp"

namespace relbal::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, scale);
    for (auto& v : t.values()) v = n(rng);
    return t;
}

inline Tensor random_simplex_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    Tensor t({rows, cols});
    std::gamma_distribution<double> g(1.0, 1.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (auto& v : t.row(r)) s += (v = g(rng) + 1e-3);
        for (auto& v : t.row(r)) v /= s;
    }
    return t;
}

}  // namespace relbal::testing
