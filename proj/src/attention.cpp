#include "relbal/attention.hpp"

#include <cmath>

#include "relbal/error.hpp"

namespace relbal {

Var multi_head_attention(Var query_src, Var kv_src, const AttentionParams<Var>& w, std::size_t heads,
                         std::span<const Var> head_bias, std::vector<Var>* attention_out) {
    const auto dim = query_src.cols();
    if (heads == 0 || dim % heads != 0)
        throw ConfigError("attention: head count " + std::to_string(heads) + " does not divide width " +
                          std::to_string(dim));
    if (kv_src.cols() != dim) throw ShapeError("attention: query and key/value widths differ");
    if (!head_bias.empty() && head_bias.size() != heads)
        throw ShapeError("attention: expected one bias matrix per head");

    const std::size_t d = dim / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Var q = ops::matmul(query_src, w.wq);
    Var k = ops::matmul(kv_src, w.wk);
    Var v = ops::matmul(kv_src, w.wv);

    std::vector<Var> outputs;
    outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = heads == 1 ? q : ops::slice_cols(q, h * d, d);
        Var kh = heads == 1 ? k : ops::slice_cols(k, h * d, d);
        Var vh = heads == 1 ? v : ops::slice_cols(v, h * d, d);
        Var logits = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt_d);
        if (!head_bias.empty()) logits = ops::add(logits, head_bias[h]);
        Var attn = ops::softmax_rows(logits);
        if (attention_out) attention_out->push_back(attn);
        outputs.push_back(ops::matmul(attn, vh));
    }
    Var merged = heads == 1 ? outputs.front() : ops::concat_cols(outputs);
    return ops::matmul(merged, w.wo);
}

std::vector<std::size_t> relative_position_index(std::size_t window_side) {
    const std::size_t s = window_side;
    const std::size_t span = 2 * s - 1;
    const std::size_t m = s * s;
    std::vector<std::size_t> index(m * m);
    for (std::size_t p = 0; p < m; ++p) {
        const std::size_t py = p / s, px = p % s;
        for (std::size_t q = 0; q < m; ++q) {
            const std::size_t qy = q / s, qx = q % s;
            const std::size_t dy = py + s - 1 - qy;
            const std::size_t dx = px + s - 1 - qx;
            index[p * m + q] = dy * span + dx;
        }
    }
    return index;
}

}  // namespace relbal
