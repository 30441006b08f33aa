#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "relbal/ops.hpp"

namespace relbal {

// Projection matrices of one multi-head attention block, all [D x D].
// T is Tensor for plain weights or Var once bound to a tape.
template <class T>
struct AttentionParams {
    T wq, wk, wv, wo;
};

// Queries from `query_src` [Mq x D], keys and values from `kv_src` [Mk x D].
// Each head attends with softmax(q k^T / sqrt(d) + bias[h]) v over its d = D / heads
// columns; heads are concatenated and mapped through wo. `head_bias`, when
// non-empty, holds one [Mq x Mk] additive logit matrix per head.
// `attention_out`, when given, receives the per-head attention matrices.
Var multi_head_attention(Var query_src, Var kv_src, const AttentionParams<Var>& w, std::size_t heads,
                         std::span<const Var> head_bias = {}, std::vector<Var>* attention_out = nullptr);

// Index into a per-head table of (2s-1)^2 relative offsets for every
// (query, key) token pair of an s x s window, row-major over [M x M].
std::vector<std::size_t> relative_position_index(std::size_t window_side);

}  // namespace relbal
