#pragma once

#include "omnirestore/encoder.hpp"

namespace omnirestore {

// Per-class softmax similarity between one unit text embedding (1 x d) and the
// image tokens (l x d). Tokens are L2-normalized before the dot product.
template <class S>
Tensor<S> token_similarity(const Tensor<S>& text_embedding, const Tensor<S>& tokens);

// The k tokens with largest similarity, in descending order, ties broken by
// lower token index. Returns the selected raw token rows and their indices.
template <class S>
std::pair<Tensor<S>, std::vector<int>> sample_topk(const Tensor<S>& tokens, const Tensor<S>& sim,
                                                   int k);

// concat[x_m ; x_t] projected to a scale's channel width, text token last.
// The encoder side arrives detached, so gradient reaches only the projection.
template <class S>
Tensor<S> build_descriptor(const Tensor<S>& sampled_tokens, const Tensor<S>& text_embedding,
                           const Tensor<S>& projection);

// lambda_i = softmax_i(cos(z, x_t_i)); plain values, computed once per image.
template <class S>
std::vector<S> adaptive_weights(const Tensor<S>& z, const DescriptorBank<S>& bank);

}  // namespace omnirestore
