#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "relbal/config.hpp"

namespace relbal {

inline constexpr const char* kCodeVersion = "relbal 0.1.0";
inline constexpr const char* kAnchorParam = "rb.anchor_points";

// Encoder, classifier head, attentive corrector and anchors over one
// ParameterSet, wired according to an ExperimentConfig.
class Model {
public:
    struct Bound {
        FusionEncoder::Bound encoder;
        ClassifierHead::Bound head;
        AttentiveCorrector::Bound corrector;
        Var anchors;  // invalid when the geometric correction is off
    };
    struct Forward {
        Var e;       // [B x dim_e]
        Var logits;  // [B x N_cls]
        ReliabilityOutputs rel;
    };

    explicit Model(const ExperimentConfig& cfg);

    const ExperimentConfig& config() const noexcept { return cfg_; }
    const FusionEncoder& encoder() const noexcept { return encoder_; }
    std::size_t n_classes() const noexcept { return cfg_.data.n_classes; }
    ReliabilitySwitches switches() const noexcept { return {cfg_.rb.anchors_active(), cfg_.rb.mhsa}; }

    ParameterSet& params() noexcept { return params_; }
    const ParameterSet& params() const noexcept { return params_; }

    // Fresh parameters drawn from a substream of `seed`.
    void init(std::uint64_t seed);
    // Replaces the parameters after checking names and shapes against a fresh
    // initialisation; mismatches raise ConfigError listing every offender.
    void load(ParameterSet loaded);

    FusionEncoder::Input prepare(const SyntheticSample& s) const;
    Bound bind(Tape& tape);
    Forward forward(const Bound& bound, std::span<const FusionEncoder::Input> inputs,
                    std::mt19937_64& rng, bool training) const;
    // Evaluation-mode embeddings [n x dim_e], computed in chunks.
    Tensor embed(std::span<const FusionEncoder::Input> inputs);
    void recalibrate_head(const Tensor& embeddings) { head_.recalibrate(params_, embeddings); }

private:
    void add_parameters(ParameterSet& params, std::mt19937_64& rng) const;

    ExperimentConfig cfg_;
    FusionEncoder encoder_;
    ClassifierHead head_;
    AttentiveCorrector corrector_;
    Tensor anchor_labels_;
    ParameterSet params_;
};

}  // namespace relbal
