#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "relbal/attention.hpp"
#include "relbal/parameters.hpp"

namespace relbal {

using LabelDistribution = std::vector<double>;

// Tolerance for simplex membership checks on distribution inputs.
inline constexpr double kSimplexTolerance = 1e-9;

bool on_simplex(std::span<const double> p, double tol = kSimplexTolerance);

// --- anchors ---------------------------------------------------------------

// N_cls x K trainable points stored as [N_cls*K x dim_e]; row i*K + j is the
// j-th anchor of class i and carries the one-hot label of class i.
struct AnchorSet {
    Tensor anchors;
    std::size_t n_classes = 0;
    std::size_t k = 0;
    double delta = 1.0;

    std::size_t count() const noexcept { return n_classes * k; }
    std::size_t dim() const { return anchors.cols(); }
    std::span<const double> anchor(std::size_t cls, std::size_t j) const { return anchors.row(cls * k + j); }
    void validate() const;
};

AnchorSet make_anchor_set(std::size_t n_classes, std::size_t k, std::size_t dim, double delta, std::mt19937_64& rng);
// [N_cls*K x N_cls] one-hot label matrix m.
Tensor anchor_label_matrix(std::size_t n_classes, std::size_t k);

// --- plain evaluation of the distribution algebra ---------------------------

// Shannon entropy divided by log(N_cls), so uniform -> 1 and one-hot -> 0.
double normalized_entropy(std::span<const double> l);
double confidence(std::span<const double> l);

double anchor_distance(std::span<const double> e, std::span<const double> a);
// s[i][j] = softmax over all anchors of -d(e, a_ij) / delta. Returns [N_cls x K].
Tensor similarity_scores(std::span<const double> e, const AnchorSet& anchors);
LabelDistribution geometric_correction(std::span<const double> e, const AnchorSet& anchors);

// Confidence-weighted mix (c_a*a + c_b*b) / (c_a + c_b). Falls back to the
// plain mean when both confidences vanish.
LabelDistribution fuse_corrections(std::span<const double> t_g, std::span<const double> t_a);
LabelDistribution final_distribution(std::span<const double> l, std::span<const double> t);

// Argmax, lowest index on ties.
std::size_t predict(std::span<const double> dist);

// --- trainable components --------------------------------------------------

struct HeadConfig {
    std::size_t hidden = 64;
    double dropout = 0.5;
    // Replace the running batch-norm statistics with exact ones over the
    // training set once training ends.
    bool recalibrate_bn = true;
};

// f(e; theta_f): two blocks of Linear -> ReLU -> Dropout -> BatchNorm, then a
// Linear map to N_cls logits. Parameters live under `prefix`.
class ClassifierHead {
public:
    struct Bound {
        struct Block {
            Var w, b, gain, bias;
            Tensor* running_mean = nullptr;
            Tensor* running_var = nullptr;
        };
        Block blocks[2];
        Var out_w, out_b;
    };

    ClassifierHead(std::size_t in_dim, std::size_t n_classes, HeadConfig config = {}, std::string prefix = "head.");

    std::size_t in_dim() const noexcept { return in_dim_; }
    std::size_t n_classes() const noexcept { return n_classes_; }
    const HeadConfig& config() const noexcept { return config_; }

    void init_parameters(ParameterSet& params, std::mt19937_64& rng) const;
    Bound bind(Tape& tape, ParameterSet& params) const;
    // e [B x in_dim] -> logits [B x N_cls]. Training mode needs B >= 2.
    Var logits(const Bound& bound, Var e, std::mt19937_64& rng, bool training) const;

    // Evaluation-mode forward of a single embedding through plain arithmetic.
    std::vector<double> eval_logits(const ParameterSet& params, std::span<const double> e) const;
    // Sets each block's running mean and (unbiased) variance to the exact
    // statistics of `embeddings` [n x in_dim] with dropout off; n >= 2.
    void recalibrate(ParameterSet& params, const Tensor& embeddings) const;

private:
    std::size_t in_dim_, n_classes_;
    HeadConfig config_;
    std::string prefix_;
};

LabelDistribution primary_distribution(std::span<const double> e, const ClassifierHead& head,
                                       const ParameterSet& params);

struct CorrectorConfig {
    std::size_t tokens = 4;
    std::size_t heads = 4;
};

// Self-attention over e reshaped to [tokens x dim_e/tokens], mean-pooled and
// projected to N_cls logits.
class AttentiveCorrector {
public:
    struct Bound {
        AttentionParams<Var> attn;
        Var out_w, out_b;
    };

    AttentiveCorrector(std::size_t in_dim, std::size_t n_classes, CorrectorConfig config = {},
                       std::string prefix = "rb.att.");

    std::size_t d_model() const noexcept { return in_dim_ / config_.tokens; }
    const CorrectorConfig& config() const noexcept { return config_; }

    void init_parameters(ParameterSet& params, std::mt19937_64& rng) const;
    Bound bind(Tape& tape, const ParameterSet& params) const;
    // e [B x in_dim] -> t_a [B x N_cls]
    Var distribution(const Bound& bound, Var e) const;

private:
    std::size_t in_dim_, n_classes_;
    CorrectorConfig config_;
    std::string prefix_;
};

// Plain single-embedding evaluation of the corrector.
struct CorrectorWeights {
    AttentionParams<Tensor> attn;  // each [d_model x d_model]
    Tensor out_w;                  // [d_model x N_cls]
    Tensor out_b;                  // [N_cls]
    std::size_t tokens = 4;
    std::size_t heads = 4;
};
LabelDistribution attentive_correction(std::span<const double> e, const CorrectorWeights& w);
CorrectorWeights corrector_weights(const ParameterSet& params, const AttentiveCorrector& corrector,
                                   const std::string& prefix = "rb.att.");

// --- differentiable batch forms ---------------------------------------------

namespace ops {

// Euclidean distances [B x P] between rows of e [B x d] and a [P x d]. The
// gradient at a zero distance is taken as zero.
Var pairwise_distance(Var e, Var a);
// 1 - normalized entropy of each row of p [B x N] -> [B x 1].
Var row_confidence(Var p);
// Row-wise (c_a*a + c_b*b) / (c_a + c_b) with the plain-mean fallback.
Var confidence_mix(Var a, Var b, Var c_a, Var c_b);

}  // namespace ops

struct ReliabilityOutputs {
    Var l;        // primary distribution
    Var t_g;      // geometric correction (invalid when anchors are disabled)
    Var t_a;      // attentive correction (invalid when MHSA is disabled)
    Var t;        // fused correction (invalid when both are disabled)
    Var l_final;  // distribution used for prediction and L_cls
};

struct ReliabilitySwitches {
    bool anchors = true;
    bool mhsa = true;
};

// Batch forward from logits and embeddings through every correction stage.
// `anchor_var` is [N_cls*K x dim_e]; `labels` is the one-hot label matrix.
ReliabilityOutputs reliability_forward(Var logits, Var e, Var anchor_var, const Tensor& labels, double delta,
                                       const AttentiveCorrector* corrector, const AttentiveCorrector::Bound* bound,
                                       ReliabilitySwitches switches);

}  // namespace relbal
