#include "omnirestore/descriptor.hpp"

#include <algorithm>
#include <cmath>

#include "omnirestore/error.hpp"

namespace omnirestore {

template <class S>
Tensor<S> token_similarity(const Tensor<S>& text_embedding, const Tensor<S>& tokens) {
    if (text_embedding.ndim() != 2 || text_embedding.dim(0) != 1 || tokens.ndim() != 2 ||
        tokens.dim(1) != text_embedding.dim(1))
        throw ShapeError("token_similarity: text " + shape_str(text_embedding.shape()) +
                         " vs tokens " + shape_str(tokens.shape()));
    Tensor<S> logits = matmul(l2_normalize(tokens), transpose2d(text_embedding));  // l x 1
    return softmax(reshape(logits, {tokens.dim(0)}), 0);
}

template <class S>
std::pair<Tensor<S>, std::vector<int>> sample_topk(const Tensor<S>& tokens, const Tensor<S>& sim,
                                                   int k) {
    const int l = tokens.dim(0);
    if (sim.numel() != l)
        throw ShapeError("sample_topk: similarity length " + std::to_string(sim.numel()) +
                         " != token count " + std::to_string(l));
    if (k < 1 || k > l)
        throw ValueError("sample_topk: k=" + std::to_string(k) + " outside [1," + std::to_string(l) +
                         "]");
    std::vector<int> idx(static_cast<size_t>(l));
    for (int i = 0; i < l; ++i) idx[static_cast<size_t>(i)] = i;
    const auto& s = sim.data();
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        if (s[static_cast<size_t>(a)] != s[static_cast<size_t>(b)])
            return s[static_cast<size_t>(a)] > s[static_cast<size_t>(b)];
        return a < b;
    });
    idx.resize(static_cast<size_t>(k));
    std::vector<Tensor<S>> rows;
    rows.reserve(static_cast<size_t>(k));
    for (int i : idx) rows.push_back(slice(tokens, 0, i, 1));
    return {k == 1 ? rows[0] : concat(rows, 0), idx};
}

template <class S>
Tensor<S> build_descriptor(const Tensor<S>& sampled_tokens, const Tensor<S>& text_embedding,
                           const Tensor<S>& projection) {
    if (sampled_tokens.ndim() != 2 || text_embedding.ndim() != 2 || text_embedding.dim(0) != 1 ||
        sampled_tokens.dim(1) != text_embedding.dim(1))
        throw ShapeError("build_descriptor: tokens " + shape_str(sampled_tokens.shape()) +
                         " vs text " + shape_str(text_embedding.shape()));
    if (projection.ndim() != 2 || projection.dim(0) != sampled_tokens.dim(1))
        throw ShapeError("build_descriptor: projection " + shape_str(projection.shape()) +
                         " does not accept dim " + std::to_string(sampled_tokens.dim(1)));
    Tensor<S> stacked = concat<S>({sampled_tokens, text_embedding}, 0);
    return matmul(stacked, projection);
}

template <class S>
std::vector<S> adaptive_weights(const Tensor<S>& z, const DescriptorBank<S>& bank) {
    if (bank.size() == 0) throw ConfigError("adaptive_weights: empty descriptor bank");
    if (!bank.embeddings.defined())
        throw ConfigError("adaptive_weights: bank embeddings not cached; call refresh()");
    if (z.numel() != bank.embeddings.dim(1))
        throw ShapeError("adaptive_weights: z " + shape_str(z.shape()) + " vs bank embedding dim " +
                         std::to_string(bank.embeddings.dim(1)));
    const int n = bank.size();
    const int d = bank.embeddings.dim(1);
    // cosine logits, then a plain softmax in double
    double znorm = 0;
    for (S v : z.data()) znorm += static_cast<double>(v) * static_cast<double>(v);
    znorm = std::sqrt(std::max(znorm, 1e-24));
    std::vector<double> logits(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double dot = 0, tn = 0;
        for (int j = 0; j < d; ++j) {
            const double tv = static_cast<double>(bank.embeddings.data()[static_cast<size_t>(i) * d + j]);
            dot += tv * static_cast<double>(z.data()[static_cast<size_t>(j)]);
            tn += tv * tv;
        }
        logits[static_cast<size_t>(i)] = dot / (znorm * std::sqrt(std::max(tn, 1e-24)));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    std::vector<S> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        logits[static_cast<size_t>(i)] = std::exp(logits[static_cast<size_t>(i)] - mx);
        sum += logits[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = static_cast<S>(logits[static_cast<size_t>(i)] / sum);
    return out;
}

#define OMNIRESTORE_INSTANTIATE(S)                                                            \
    template Tensor<S> token_similarity<S>(const Tensor<S>&, const Tensor<S>&);               \
    template std::pair<Tensor<S>, std::vector<int>> sample_topk<S>(const Tensor<S>&,          \
                                                                   const Tensor<S>&, int);    \
    template Tensor<S> build_descriptor<S>(const Tensor<S>&, const Tensor<S>&,                \
                                           const Tensor<S>&);                                 \
    template std::vector<S> adaptive_weights<S>(const Tensor<S>&, const DescriptorBank<S>&);

OMNIRESTORE_INSTANTIATE(float)
OMNIRESTORE_INSTANTIATE(double)

#undef OMNIRESTORE_INSTANTIATE

}  // namespace omnirestore
