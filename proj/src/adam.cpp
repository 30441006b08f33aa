#include "relbal/adam.hpp"

#include <cmath>

#include "relbal/error.hpp"

namespace relbal {

double AdamState::learning_rate() const {
    return config.lr0 * std::pow(config.gamma, static_cast<double>(epoch));
}

AdamState make_adam_state(const ParameterSet& params, AdamConfig config) {
    if (!(config.lr0 > 0.0)) throw ConfigError("adam: lr0 must be positive");
    if (!(config.gamma > 0.0 && config.gamma <= 1.0)) throw ConfigError("adam: gamma must lie in (0, 1]");
    AdamState state;
    state.config = config;
    for (const auto& entry : params) {
        if (entry.tensor.requires_grad()) {
            state.first_moment.emplace_back(entry.tensor.shape(), 0.0);
            state.second_moment.emplace_back(entry.tensor.shape(), 0.0);
        } else {
            state.first_moment.emplace_back();
            state.second_moment.emplace_back();
        }
    }
    return state;
}

void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state) {
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
        throw ShapeError("adam: optimizer state does not match parameter count");

    const auto& cfg = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    const double lr = state.learning_rate();

    std::size_t k = 0;
    for (auto& entry : params) {
        Tensor& p = entry.tensor;
        Tensor& m = state.first_moment[k];
        Tensor& v = state.second_moment[k];
        ++k;
        if (!p.requires_grad()) continue;
        if (m.shape() != p.shape() || v.shape() != p.shape())
            throw ShapeError("adam: moment shape mismatch for " + entry.name);
        const Tensor* g = grads.find(p);
        if (g && g->shape() != p.shape())
            throw ShapeError("adam: gradient shape mismatch for " + entry.name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace relbal
