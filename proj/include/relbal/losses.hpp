#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "relbal/reliability.hpp"

namespace relbal {

struct LossWeights {
    double cls = 1.0;
    double anchor = 1.0;
    double center = 1.0;

    void validate() const;
};

struct LossParts {
    double cls = 0.0;
    double anchor = 0.0;
    double center = 0.0;
};

// Clamp applied to predicted probabilities before the log.
inline constexpr double kProbabilityFloor = 1e-12;

// Plain forms. Distributions are rows of [B x N_cls] matrices.

// Batch mean of -sum_j y_j log max(L_j, 1e-12).
double class_distribution_loss(const Tensor& l_final, const Tensor& targets);
// -(1/P) * sum over distinct unordered anchor pairs of squared distance.
// A single anchor gives 0 and a diagnostic through `note`.
double anchor_loss(const AnchorSet& anchors, std::string* note = nullptr);
// Batch mean over samples of the smallest squared distance from e_i to an
// anchor of class labels[i].
double center_loss(const Tensor& embeddings, std::span<const std::size_t> labels, const AnchorSet& anchors);
double total_loss(const LossParts& parts, const LossWeights& w);

namespace ops {

Var class_distribution_loss(Var l_final, const Tensor& targets);
// anchors [P x d]; zero when P < 2.
Var anchor_loss(Var anchors);
// Gradient flows to the first minimising anchor of each sample.
Var center_loss(Var embeddings, std::span<const std::size_t> labels, Var anchors, std::size_t k);
// Weighted sum; throws NumericError when a part is not finite. Invalid parts
// (disabled terms) are skipped.
Var total_loss(Var cls, Var anchor, Var center, const LossWeights& w);

}  // namespace ops

}  // namespace relbal
