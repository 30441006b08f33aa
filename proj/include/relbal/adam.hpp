#pragma once

#include <cstdint>
#include <vector>

#include "relbal/parameters.hpp"
#include "relbal/tape.hpp"

namespace relbal {

struct AdamConfig {
    double lr0 = 3e-4;
    double gamma = 0.995;  // per-epoch exponential decay
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    // One accumulator per ParameterSet entry, in entry order. Buffers keep an
    // empty tensor.
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;

    double learning_rate() const;
};

AdamState make_adam_state(const ParameterSet& params, AdamConfig config);

// Bias-corrected Adam update at the current epoch's learning rate. Trainable
// parameters without a gradient entry are treated as having zero gradient.
void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state);

}  // namespace relbal
