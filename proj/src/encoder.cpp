#include "relbal/encoder.hpp"

#include <cmath>

#include "relbal/error.hpp"
#include "relbal/numeric.hpp"

namespace relbal {

namespace {

std::size_t exact_sqrt(std::size_t n) {
    auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    return r * r == n ? r : 0;
}

// Half-open source range covered by output cell i of n over a length-L axis.
std::pair<std::size_t, std::size_t> pool_range(std::size_t i, std::size_t n, std::size_t len) {
    const std::size_t start = (i * len) / n;
    const std::size_t end = ((i + 1) * len + n - 1) / n;
    return {start, end};
}

std::string level_prefix(std::size_t level) { return "enc.level" + std::to_string(level) + "."; }

template <class T>
MlpParams<Var> bind_mlp(Tape& tape, const MlpParams<T>& w) {
    return {tape.leaf(w.w1), tape.leaf(w.b1), tape.leaf(w.w2), tape.leaf(w.b2)};
}

CrossAttentionParams<Var> bind_cross(Tape& tape, const CrossAttentionParams<Tensor>& w) {
    return {bind(tape, w.proj), tape.leaf(w.bias_table), w.heads, w.window_side};
}

}  // namespace

std::size_t ImageFeatureMap::grid_side() const {
    const auto side = exact_sqrt(tokens.rows());
    if (side == 0) throw ShapeError("image feature map token count " + std::to_string(tokens.rows()) +
                                    " is not a perfect square");
    return side;
}

void EncoderGeometry::validate() const {
    if (grid_sides.empty() || grid_sides.size() > 3)
        throw ConfigError("encoder: between one and three feature levels are supported");
    if (window_sides.size() != grid_sides.size())
        throw ConfigError("encoder: one window size is required per level");
    for (std::size_t i = 0; i < grid_sides.size(); ++i) {
        if (grid_sides[i] == 0 || window_sides[i] == 0 || grid_sides[i] % window_sides[i] != 0)
            throw ConfigError("encoder: window side " + std::to_string(window_sides[i]) +
                              " must divide grid side " + std::to_string(grid_sides[i]));
    }
    if (dim == 0 || embed_dim == 0 || mlp_hidden == 0 || image_channels == 0 || landmark_channels == 0)
        throw ConfigError("encoder: widths must be positive");
    if (heads == 0 || dim % heads != 0)
        throw ConfigError("encoder: head count " + std::to_string(heads) + " must divide D = " +
                          std::to_string(dim));
}

std::size_t EncoderGeometry::token_count() const {
    std::size_t n = 0;
    for (auto g : grid_sides) n += g * g;
    return n;
}

std::vector<std::vector<std::size_t>> window_token_indices(std::size_t grid_side, std::size_t window_side) {
    if (window_side == 0 || grid_side % window_side != 0)
        throw ShapeError("window side " + std::to_string(window_side) + " does not divide grid side " +
                         std::to_string(grid_side));
    const std::size_t per_side = grid_side / window_side;
    std::vector<std::vector<std::size_t>> out;
    out.reserve(per_side * per_side);
    for (std::size_t wy = 0; wy < per_side; ++wy)
        for (std::size_t wx = 0; wx < per_side; ++wx) {
            std::vector<std::size_t> idx;
            idx.reserve(window_side * window_side);
            for (std::size_t y = 0; y < window_side; ++y)
                for (std::size_t x = 0; x < window_side; ++x)
                    idx.push_back((wy * window_side + y) * grid_side + wx * window_side + x);
            out.push_back(std::move(idx));
        }
    return out;
}

std::vector<Tensor> partition_windows(const ImageFeatureMap& fm, std::size_t window_tokens) {
    const auto grid = fm.grid_side();
    const auto side = exact_sqrt(window_tokens);
    if (side == 0 || grid % side != 0)
        throw ShapeError("partition_windows: window of " + std::to_string(window_tokens) +
                         " tokens does not tile a " + std::to_string(grid) + "x" + std::to_string(grid) + " grid");
    const auto d = fm.tokens.cols();
    std::vector<Tensor> out;
    for (const auto& idx : window_token_indices(grid, side)) {
        Tensor w({idx.size(), d});
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t c = 0; c < d; ++c) w.at(k, c) = fm.tokens.at(idx[k], c);
        out.push_back(std::move(w));
    }
    return out;
}

Tensor merge_windows(std::span<const Tensor> windows, std::size_t grid_side, std::size_t window_side) {
    const auto indices = window_token_indices(grid_side, window_side);
    if (windows.size() != indices.size())
        throw ShapeError("merge_windows: expected " + std::to_string(indices.size()) + " windows, got " +
                         std::to_string(windows.size()));
    const auto d = windows.front().cols();
    Tensor out({grid_side * grid_side, d});
    for (std::size_t w = 0; w < windows.size(); ++w) {
        if (windows[w].rows() != window_side * window_side || windows[w].cols() != d)
            throw ShapeError("merge_windows: window " + std::to_string(w) + " has shape " +
                             shape_string(windows[w].shape()));
        for (std::size_t k = 0; k < indices[w].size(); ++k)
            for (std::size_t c = 0; c < d; ++c) out.at(indices[w][k], c) = windows[w].at(k, c);
    }
    return out;
}

Tensor pool_image(const Tensor& image, std::size_t grid_side) {
    if (image.rank() != 3) throw ShapeError("pool_image: expected [H x W x C], got " + shape_string(image.shape()));
    const auto H = image.shape()[0], W = image.shape()[1], C = image.shape()[2];
    if (grid_side == 0 || grid_side > H || grid_side > W)
        throw ShapeError("pool_image: grid larger than image");
    Tensor out({grid_side * grid_side, C}, 0.0);
    for (std::size_t gy = 0; gy < grid_side; ++gy) {
        const auto [y0, y1] = pool_range(gy, grid_side, H);
        for (std::size_t gx = 0; gx < grid_side; ++gx) {
            const auto [x0, x1] = pool_range(gx, grid_side, W);
            const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
            double* dst = out.data() + (gy * grid_side + gx) * C;
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x)
                    for (std::size_t c = 0; c < C; ++c) dst[c] += image[(y * W + x) * C + c] * inv;
        }
    }
    return out;
}

Tensor pool_landmark(const LandmarkFeatureMap& lm, std::size_t h, std::size_t w) {
    const Tensor& x = lm.channels;
    if (x.rank() != 3) throw ShapeError("landmark map must be [A_c x H x W], got " + shape_string(x.shape()));
    const auto A = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    if (h == 0 || w == 0 || h > H || w > W)
        throw ShapeError("downsample_landmark: target " + std::to_string(h) + "x" + std::to_string(w) +
                         " larger than source " + std::to_string(H) + "x" + std::to_string(W));
    Tensor out({h * w, A}, 0.0);
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t ty = 0; ty < h; ++ty) {
            const auto [y0, y1] = pool_range(ty, h, H);
            for (std::size_t tx = 0; tx < w; ++tx) {
                const auto [x0, x1] = pool_range(tx, w, W);
                double acc = 0.0;
                for (std::size_t y = y0; y < y1; ++y)
                    for (std::size_t xx = x0; xx < x1; ++xx) acc += x[(a * H + y) * W + xx];
                out.at(ty * w + tx, a) = acc / static_cast<double>((y1 - y0) * (x1 - x0));
            }
        }
    return out;
}

Tensor downsample_landmark(const LandmarkFeatureMap& lm, std::size_t h, std::size_t w, const Tensor& projection) {
    Tensor pooled = pool_landmark(lm, h, w);
    if (projection.rows() != pooled.cols())
        throw ShapeError("downsample_landmark: projection expects " + std::to_string(projection.rows()) +
                         " channels, map has " + std::to_string(pooled.cols()));
    return matmul(pooled, projection);
}

Var window_cross_attention(Var z_img, Var z_lm, const CrossAttentionParams<Var>& w) {
    if (z_img.shape() != z_lm.shape())
        throw ShapeError("window_cross_attention: image and landmark windows differ: " +
                         shape_string(z_img.shape()) + " vs " + shape_string(z_lm.shape()));
    const auto dim = z_img.cols();
    if (w.heads == 0 || dim % w.heads != 0)
        throw ConfigError("window_cross_attention: " + std::to_string(w.heads) + " heads do not divide D = " +
                          std::to_string(dim));
    const auto m = z_img.rows();
    if (w.window_side * w.window_side != m)
        throw ShapeError("window_cross_attention: window side does not match token count");
    const auto span = (2 * w.window_side - 1) * (2 * w.window_side - 1);
    if (w.bias_table.value().size() != w.heads * span)
        throw ShapeError("window_cross_attention: bias table must hold heads x (2s-1)^2 entries");

    const auto rel = relative_position_index(w.window_side);
    std::vector<Var> bias;
    bias.reserve(w.heads);
    std::vector<std::size_t> idx(rel.size());
    for (std::size_t h = 0; h < w.heads; ++h) {
        for (std::size_t k = 0; k < rel.size(); ++k) idx[k] = h * span + rel[k];
        bias.push_back(ops::gather_elements(w.bias_table, idx, {m, m}));
    }
    // Queries come from the landmark stream, keys and values from the image.
    return multi_head_attention(z_lm, z_img, w.proj, w.heads, bias);
}

Tensor window_cross_attention(const WindowPair& pair, const CrossAttentionParams<Tensor>& w) {
    Tape tape;
    return window_cross_attention(tape.constant(pair.z_img), tape.constant(pair.z_lm), bind_cross(tape, w)).value();
}

Var mlp_forward(Var x, const MlpParams<Var>& w) {
    Var h = ops::gelu(ops::add_bias(ops::matmul(x, w.w1), w.b1));
    return ops::add_bias(ops::matmul(h, w.w2), w.b2);
}

Var cross_fusion_encode(Var x_img, Var oca, const EncoderBlockParams<Var>& w) {
    if (x_img.shape() != oca.shape())
        throw ShapeError("cross_fusion_encode: reassembled attention output " + shape_string(oca.shape()) +
                         " does not match image tokens " + shape_string(x_img.shape()));
    Var x1 = ops::add(oca, x_img);
    Var normed = ops::layer_norm(x1, w.norm_gain, w.norm_bias);
    return ops::add(mlp_forward(normed, w.mlp), x1);
}

Tensor cross_fusion_encode(const ImageFeatureMap& fm, const Tensor& oca, const EncoderBlockParams<Tensor>& w) {
    Tape tape;
    EncoderBlockParams<Var> bw{tape.leaf(w.norm_gain), tape.leaf(w.norm_bias), bind_mlp(tape, w.mlp)};
    return cross_fusion_encode(tape.constant(fm.tokens), tape.constant(oca), bw).value();
}

Var multiscale_combine(std::span<const Var> levels, const CombinerParams<Var>& w) {
    if (levels.empty()) throw ContractError("multiscale_combine: at least one level is required");
    Var xo = levels.size() == 1 ? levels.front() : ops::concat_rows(levels);
    Var attended = ops::add(multi_head_attention(xo, xo, w.attn, w.heads), xo);
    Var normed = ops::layer_norm(xo, w.norm_gain, w.norm_bias);
    Var out = ops::add(mlp_forward(normed, w.mlp), attended);
    return ops::add_bias(ops::matmul(ops::mean_rows(out), w.proj_w), w.proj_b);
}

Tensor multiscale_combine(const MultiScaleStack& stack) {
    if (stack.levels.empty()) throw ContractError("multiscale_combine: at least one level is required");
    Tape tape;
    std::vector<Var> levels;
    for (const auto& l : stack.levels) levels.push_back(tape.constant(l));
    const auto& w = stack.weights;
    CombinerParams<Var> bw{bind(tape, w.attn), w.heads,          tape.leaf(w.norm_gain), tape.leaf(w.norm_bias),
                           bind_mlp(tape, w.mlp), tape.leaf(w.proj_w), tape.leaf(w.proj_b)};
    return multiscale_combine(levels, bw).value();
}

Tensor init_normal(Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

Tensor init_fan_in(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    return init_normal({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

FusionEncoder::FusionEncoder(EncoderGeometry geometry) : geometry_(std::move(geometry)) {
    geometry_.validate();
    for (std::size_t l = 0; l < geometry_.grid_sides.size(); ++l) {
        const auto grid = geometry_.grid_sides[l];
        const auto side = geometry_.window_sides[l];
        auto windows = window_token_indices(grid, side);
        std::vector<std::size_t> inverse(grid * grid);
        std::size_t pos = 0;
        for (const auto& w : windows)
            for (auto token : w) inverse[token] = pos++;
        windows_.push_back(std::move(windows));
        inverse_order_.push_back(std::move(inverse));
        bias_index_.push_back(relative_position_index(side));
    }
}

void FusionEncoder::init_parameters(ParameterSet& params, std::mt19937_64& rng) const {
    const auto& g = geometry_;
    const auto D = g.dim;
    auto add_mlp = [&](const std::string& p) {
        params.add(p + "mlp.w1", init_fan_in(D, g.mlp_hidden, rng));
        params.add(p + "mlp.b1", Tensor({g.mlp_hidden}, 0.0));
        params.add(p + "mlp.w2", init_fan_in(g.mlp_hidden, D, rng));
        params.add(p + "mlp.b2", Tensor({D}, 0.0));
    };
    auto add_attn = [&](const std::string& p) {
        for (const char* n : {"wq", "wk", "wv", "wo"}) params.add(p + n, init_fan_in(D, D, rng));
    };
    for (std::size_t l = 0; l < g.grid_sides.size(); ++l) {
        const auto p = level_prefix(l);
        const auto tokens = g.grid_sides[l] * g.grid_sides[l];
        const auto span = (2 * g.window_sides[l] - 1) * (2 * g.window_sides[l] - 1);
        params.add(p + "patch_w", init_fan_in(g.image_channels, D, rng));
        params.add(p + "patch_b", Tensor({D}, 0.0));
        params.add(p + "pos", init_normal({tokens, D}, 0.02, rng));
        params.add(p + "landmark_w", init_fan_in(g.landmark_channels, D, rng));
        add_attn(p + "cross.");
        params.add(p + "cross.bias", init_normal({g.heads, span}, 0.02, rng));
        params.add(p + "norm.gain", Tensor({D}, 1.0));
        params.add(p + "norm.bias", Tensor({D}, 0.0));
        add_mlp(p);
    }
    add_attn("enc.comb.");
    params.add("enc.comb.norm.gain", Tensor({D}, 1.0));
    params.add("enc.comb.norm.bias", Tensor({D}, 0.0));
    add_mlp("enc.comb.");
    params.add("enc.proj.w", init_fan_in(D, g.embed_dim, rng));
    params.add("enc.proj.b", Tensor({g.embed_dim}, 0.0));
}

FusionEncoder::Bound FusionEncoder::bind(Tape& tape, const ParameterSet& params) const {
    auto leaf = [&](const std::string& name) { return tape.leaf(params.get(name)); };
    auto mlp = [&](const std::string& p) {
        return MlpParams<Var>{leaf(p + "mlp.w1"), leaf(p + "mlp.b1"), leaf(p + "mlp.w2"), leaf(p + "mlp.b2")};
    };
    auto attn = [&](const std::string& p) {
        return AttentionParams<Var>{leaf(p + "wq"), leaf(p + "wk"), leaf(p + "wv"), leaf(p + "wo")};
    };
    Bound b;
    for (std::size_t l = 0; l < geometry_.grid_sides.size(); ++l) {
        const auto p = level_prefix(l);
        LevelVars lv;
        lv.patch_w = leaf(p + "patch_w");
        lv.patch_b = leaf(p + "patch_b");
        lv.pos = leaf(p + "pos");
        lv.landmark_w = leaf(p + "landmark_w");
        lv.cross = {attn(p + "cross."), leaf(p + "cross.bias"), geometry_.heads, geometry_.window_sides[l]};
        lv.block = {leaf(p + "norm.gain"), leaf(p + "norm.bias"), mlp(p)};
        b.levels.push_back(std::move(lv));
    }
    b.combiner = {attn("enc.comb."),  geometry_.heads,   leaf("enc.comb.norm.gain"), leaf("enc.comb.norm.bias"),
                  mlp("enc.comb."), leaf("enc.proj.w"), leaf("enc.proj.b")};
    return b;
}

FusionEncoder::Input FusionEncoder::prepare(const Tensor& image, const Tensor& landmark) const {
    if (image.rank() != 3 || image.shape()[2] != geometry_.image_channels)
        throw ShapeError("encoder: image must be [S x S x " + std::to_string(geometry_.image_channels) + "], got " +
                         shape_string(image.shape()));
    if (landmark.rank() != 3 || landmark.shape()[0] != geometry_.landmark_channels)
        throw ShapeError("encoder: landmark map must be [" + std::to_string(geometry_.landmark_channels) +
                         " x S x S], got " + shape_string(landmark.shape()));
    Input in;
    const LandmarkFeatureMap lm{landmark};
    for (auto g : geometry_.grid_sides) {
        in.image_tokens.push_back(pool_image(image, g));
        in.landmark_tokens.push_back(pool_landmark(lm, g, g));
    }
    return in;
}

Var FusionEncoder::forward(const Bound& bound, const Input& input) const {
    Tape& tape = *bound.combiner.proj_w.tape();
    const auto n_levels = geometry_.grid_sides.size();
    if (input.image_tokens.size() != n_levels || input.landmark_tokens.size() != n_levels)
        throw ShapeError("encoder: input does not provide every configured level");

    std::vector<Var> level_out;
    for (std::size_t l = 0; l < n_levels; ++l) {
        const auto& lv = bound.levels[l];
        Var x_img = ops::add(ops::add_bias(ops::matmul(tape.constant(input.image_tokens[l]), lv.patch_w), lv.patch_b),
                             lv.pos);
        Var z_lm = ops::matmul(tape.constant(input.landmark_tokens[l]), lv.landmark_w);

        Var oca;
        const auto& windows = windows_[l];
        if (windows.size() == 1) {
            oca = window_cross_attention(x_img, z_lm, lv.cross);
        } else {
            std::vector<Var> outs;
            outs.reserve(windows.size());
            for (const auto& idx : windows)
                outs.push_back(window_cross_attention(ops::gather_rows(x_img, idx), ops::gather_rows(z_lm, idx), lv.cross));
            oca = ops::gather_rows(ops::concat_rows(outs), inverse_order_[l]);
        }
        level_out.push_back(cross_fusion_encode(x_img, oca, lv.block));
    }
    return multiscale_combine(level_out, bound.combiner);
}

}  // namespace relbal
