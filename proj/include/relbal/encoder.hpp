#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "relbal/attention.hpp"
#include "relbal/parameters.hpp"

namespace relbal {

enum class FeatureLevel { low, mid, high };

// Image tokens of one pyramid level, [N_p x D] with N_p a perfect square.
struct ImageFeatureMap {
    Tensor tokens;
    FeatureLevel level = FeatureLevel::low;

    std::size_t grid_side() const;
};

// Landmark stream, [A_c x H x W].
struct LandmarkFeatureMap {
    Tensor channels;
};

struct WindowPair {
    Tensor z_img;  // [M x D]
    Tensor z_lm;   // [M x D]
};

template <class T>
struct CrossAttentionParams {
    AttentionParams<T> proj;
    T bias_table;  // [heads x (2s-1)^2], s = window side
    std::size_t heads = 1;
    std::size_t window_side = 1;
};

template <class T>
struct MlpParams {
    T w1, b1, w2, b2;
};

template <class T>
struct EncoderBlockParams {
    T norm_gain, norm_bias;
    MlpParams<T> mlp;
};

template <class T>
struct CombinerParams {
    AttentionParams<T> attn;
    std::size_t heads = 1;
    T norm_gain, norm_bias;
    MlpParams<T> mlp;
    T proj_w, proj_b;  // [D x dim_e], [dim_e]
};

struct MultiScaleStack {
    std::vector<Tensor> levels;  // per-level combined features, each [tokens x D]
    CombinerParams<Tensor> weights;
};

struct EncoderGeometry {
    std::vector<std::size_t> grid_sides{8, 4, 2};
    std::vector<std::size_t> window_sides{4, 2, 2};
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t embed_dim = 64;
    std::size_t mlp_hidden = 128;
    std::size_t image_channels = 3;
    std::size_t landmark_channels = 4;

    void validate() const;
    std::size_t token_count() const;
};

// --- window bookkeeping ---------------------------------------------------

// Token indices (row-major over the grid) of every window, windows ordered
// row-major over the window grid.
std::vector<std::vector<std::size_t>> window_token_indices(std::size_t grid_side, std::size_t window_side);
std::vector<Tensor> partition_windows(const ImageFeatureMap& fm, std::size_t window_tokens);
Tensor merge_windows(std::span<const Tensor> windows, std::size_t grid_side, std::size_t window_side);

// --- stream preparation ---------------------------------------------------

// Adaptive mean pooling of an [H x W x C] image onto a g x g grid -> [g^2 x C].
Tensor pool_image(const Tensor& image, std::size_t grid_side);
// Adaptive mean pooling of [A_c x H x W] onto h x w -> [h*w x A_c].
Tensor pool_landmark(const LandmarkFeatureMap& lm, std::size_t h, std::size_t w);
// Mean pooling to h x w followed by a 1x1 channel projection [A_c x D].
Tensor downsample_landmark(const LandmarkFeatureMap& lm, std::size_t h, std::size_t w, const Tensor& projection);

// --- encoder stages -------------------------------------------------------

Var window_cross_attention(Var z_img, Var z_lm, const CrossAttentionParams<Var>& w);
Tensor window_cross_attention(const WindowPair& pair, const CrossAttentionParams<Tensor>& w);

Var mlp_forward(Var x, const MlpParams<Var>& w);

// x' = oca + x;  out = MLP(Norm(x')) + x'
Var cross_fusion_encode(Var x_img, Var oca, const EncoderBlockParams<Var>& w);
Tensor cross_fusion_encode(const ImageFeatureMap& fm, const Tensor& oca, const EncoderBlockParams<Tensor>& w);

// Xo = concat(levels); Xo' = MHSA(Xo) + Xo; Xo_out = MLP(Norm(Xo)) + Xo';
// e = mean_tokens(Xo_out) * proj_w + proj_b.  Returns [1 x dim_e].
Var multiscale_combine(std::span<const Var> levels, const CombinerParams<Var>& w);
Tensor multiscale_combine(const MultiScaleStack& stack);

template <class T>
AttentionParams<Var> bind(Tape& tape, const AttentionParams<T>& w) {
    return {tape.leaf(w.wq), tape.leaf(w.wk), tape.leaf(w.wv), tape.leaf(w.wo)};
}

// Two-stream encoder producing one embedding per sample. Parameters live in a
// ParameterSet under the "enc." prefix.
class FusionEncoder {
public:
    struct LevelVars {
        Var patch_w, patch_b, pos, landmark_w;
        CrossAttentionParams<Var> cross;
        EncoderBlockParams<Var> block;
    };
    struct Bound {
        std::vector<LevelVars> levels;
        CombinerParams<Var> combiner;
    };
    struct Input {
        std::vector<Tensor> image_tokens;     // per level [g^2 x C]
        std::vector<Tensor> landmark_tokens;  // per level [g^2 x A_c]
    };

    explicit FusionEncoder(EncoderGeometry geometry);

    const EncoderGeometry& geometry() const noexcept { return geometry_; }
    void init_parameters(ParameterSet& params, std::mt19937_64& rng) const;
    Bound bind(Tape& tape, const ParameterSet& params) const;
    // image [S x S x C], landmark [A_c x S x S]
    Input prepare(const Tensor& image, const Tensor& landmark) const;
    Var forward(const Bound& bound, const Input& input) const;

private:
    EncoderGeometry geometry_;
    std::vector<std::vector<std::vector<std::size_t>>> windows_;  // per level
    std::vector<std::vector<std::size_t>> inverse_order_;         // per level
    std::vector<std::vector<std::size_t>> bias_index_;            // per level
};

// Weight initialisation helpers shared by the model components.
Tensor init_normal(Shape shape, double stddev, std::mt19937_64& rng);
Tensor init_fan_in(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace relbal
