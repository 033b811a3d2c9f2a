#pragma once

#include <string>
#include <utility>
#include <vector>

#include "omnirestore/ops.hpp"
#include "omnirestore/rng.hpp"

namespace omnirestore {

// Ordered name -> tensor registry. Order is the declaration order of the
// owning modules, which makes checkpoints and optimizer state reproducible.
template <class S>
struct ParamMap {
    std::vector<std::pair<std::string, Tensor<S>>> items;

    void add(std::string name, const Tensor<S>& t) { items.emplace_back(std::move(name), t); }

    const Tensor<S>* find(const std::string& name) const {
        for (const auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }

    Tensor<S>* find(const std::string& name) {
        for (auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }

    long total_count() const {
        long n = 0;
        for (const auto& [name, t] : items) n += t.numel();
        return n;
    }
};

template <class S>
Tensor<S> init_normal(Shape shape, double stddev, Rng& rng) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = static_cast<S>(rng.normal(0.0, stddev));
    t.set_requires_grad(true);
    return t;
}

template <class S>
Tensor<S> init_const(Shape shape, S value) {
    Tensor<S> t = Tensor<S>::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

template <class S>
Tensor<S> identity_matrix(int n) {
    Tensor<S> t = Tensor<S>::zeros({n, n});
    for (int i = 0; i < n; ++i) t.mutable_data()[static_cast<size_t>(i) * n + i] = S(1);
    return t;
}

// Multi-head scaled dot-product attention. Q: a x d, K: b x d, V: b x d,
// heads concatenated then projected by wo (d x d). Rows of each head's
// attention matrix are a softmax, so they are non-negative and sum to one.
template <class S>
Tensor<S> self_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int heads,
                         const Tensor<S>& wo) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
        throw ShapeError("self_attention: Q/K/V must be rank 2");
    const int d = q.dim(1);
    if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0))
        throw ShapeError("self_attention: K " + shape_str(k.shape()) + " / V " +
                         shape_str(v.shape()) + " incompatible with Q " + shape_str(q.shape()));
    if (heads < 1 || d % heads)
        throw ShapeError("self_attention: feature dim " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(heads));
    const int dh = d / heads;
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Tensor<S>> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor<S> qh = slice(q, 1, h * dh, dh);
        Tensor<S> kh = slice(k, 1, h * dh, dh);
        Tensor<S> vh = slice(v, 1, h * dh, dh);
        Tensor<S> att = softmax(scale(matmul(qh, transpose2d(kh)), inv_sqrt), 1);
        outs.push_back(matmul(att, vh));
    }
    Tensor<S> merged = heads == 1 ? outs[0] : concat(outs, 1);
    return matmul(merged, wo);
}

}  // namespace omnirestore
