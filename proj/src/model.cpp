#include "relbal/model.hpp"

#include <algorithm>
#include <cmath>

#include "relbal/error.hpp"
#include "relbal/random.hpp"

namespace relbal {

namespace {

constexpr std::uint64_t kStreamInit = 0x1217;

EncoderGeometry geometry_for(const ExperimentConfig& cfg) {
    EncoderGeometry g = cfg.encoder;
    g.image_channels = cfg.data.image_channels;
    g.landmark_channels = cfg.data.landmark_channels;
    return g;
}

}  // namespace

Model::Model(const ExperimentConfig& cfg)
    : cfg_(cfg),
      encoder_(geometry_for(cfg)),
      head_(cfg.encoder.embed_dim, cfg.data.n_classes, cfg.head),
      corrector_(cfg.encoder.embed_dim, cfg.data.n_classes, {cfg.rb.tokens, cfg.rb.heads}) {
    if (cfg_.rb.anchors_active()) anchor_labels_ = anchor_label_matrix(cfg_.data.n_classes, cfg_.rb.k);
}

void Model::add_parameters(ParameterSet& params, std::mt19937_64& rng) const {
    encoder_.init_parameters(params, rng);
    head_.init_parameters(params, rng);
    if (cfg_.rb.mhsa) corrector_.init_parameters(params, rng);
    if (cfg_.rb.anchors_active()) {
        const auto dim = cfg_.encoder.embed_dim;
        params.add(kAnchorParam,
                   init_normal({cfg_.data.n_classes * cfg_.rb.k, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng));
    }
}

void Model::init(std::uint64_t seed) {
    params_ = ParameterSet();
    auto rng = make_rng(seed, {kStreamInit});
    add_parameters(params_, rng);
}

void Model::load(ParameterSet loaded) {
    ParameterSet expected;
    std::mt19937_64 rng(0);
    add_parameters(expected, rng);
    std::string problems;
    auto note = [&](const std::string& s) { problems += (problems.empty() ? "" : "; ") + s; };
    for (const auto& e : expected) {
        if (!loaded.contains(e.name)) {
            note("missing " + e.name + " " + shape_string(e.tensor.shape()));
            continue;
        }
        const auto& got = loaded.get(e.name);
        if (got.shape() != e.tensor.shape())
            note(e.name + " expected " + shape_string(e.tensor.shape()) + " found " + shape_string(got.shape()));
    }
    for (const auto& l : loaded)
        if (!expected.contains(l.name)) note("unexpected " + l.name + " " + shape_string(l.tensor.shape()));
    if (!problems.empty()) throw ConfigError("incompatible checkpoint: " + problems);
    // Rebuild in the expected order with the expected trainable flags.
    ParameterSet ordered;
    for (const auto& e : expected) ordered.add(e.name, loaded.get(e.name), e.tensor.requires_grad());
    params_ = std::move(ordered);
}

FusionEncoder::Input Model::prepare(const SyntheticSample& s) const { return encoder_.prepare(s.image, s.landmark); }

Model::Bound Model::bind(Tape& tape) {
    Bound b;
    b.encoder = encoder_.bind(tape, params_);
    b.head = head_.bind(tape, params_);
    if (cfg_.rb.mhsa) b.corrector = corrector_.bind(tape, params_);
    if (cfg_.rb.anchors_active()) b.anchors = tape.leaf(params_.get(kAnchorParam));
    return b;
}

Model::Forward Model::forward(const Bound& bound, std::span<const FusionEncoder::Input> inputs,
                              std::mt19937_64& rng, bool training) const {
    if (inputs.empty()) throw ContractError("model: empty batch");
    std::vector<Var> rows;
    rows.reserve(inputs.size());
    for (const auto& in : inputs) rows.push_back(encoder_.forward(bound.encoder, in));
    Forward f;
    f.e = rows.size() == 1 ? rows.front() : ops::concat_rows(rows);
    f.logits = head_.logits(bound.head, f.e, rng, training);
    f.rel = reliability_forward(f.logits, f.e, bound.anchors, anchor_labels_, cfg_.rb.delta,
                                cfg_.rb.mhsa ? &corrector_ : nullptr, cfg_.rb.mhsa ? &bound.corrector : nullptr,
                                switches());
    return f;
}

Tensor Model::embed(std::span<const FusionEncoder::Input> inputs) {
    Tensor out({inputs.size(), cfg_.encoder.embed_dim});
    // One tape per sample keeps memory flat; no gradients are taken.
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Tape tape;
        const auto bound = encoder_.bind(tape, params_);
        const Var e = encoder_.forward(bound, inputs[i]);
        const auto row = e.value().values();
        std::copy(row.begin(), row.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace relbal
