#pragma once

#include <cmath>

#include "omnirestore/nn.hpp"

namespace omnirestore {

// Adam with bias correction. Parameters without a gradient this step are
// treated as having zero gradient (their moments still decay).
template <class S>
struct Adam {
    S lr = S(1.25e-4);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
    long step_count = 0;

    std::vector<Tensor<S>> params;
    std::vector<std::vector<S>> m, v;

    void attach(const ParamMap<S>& pm) {
        params.clear();
        m.clear();
        v.clear();
        for (const auto& [name, t] : pm.items) {
            params.push_back(t);
            m.emplace_back(static_cast<size_t>(t.numel()), S(0));
            v.emplace_back(static_cast<size_t>(t.numel()), S(0));
        }
    }

    void zero_grad() {
        for (auto& p : params) p.zero_grad();
    }

    void step() {
        ++step_count;
        const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1), step_count));
        const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2), step_count));
        for (size_t pi = 0; pi < params.size(); ++pi) {
            Tensor<S>& p = params[pi];
            const bool has = p.has_grad();
            auto& mv = m[pi];
            auto& vv = v[pi];
            auto& val = p.mutable_data();
            const long n = p.numel();
            for (long i = 0; i < n; ++i) {
                const S g = has ? p.grad()[static_cast<size_t>(i)] : S(0);
                mv[static_cast<size_t>(i)] = beta1 * mv[static_cast<size_t>(i)] + (S(1) - beta1) * g;
                vv[static_cast<size_t>(i)] = beta2 * vv[static_cast<size_t>(i)] + (S(1) - beta2) * g * g;
                const S mhat = mv[static_cast<size_t>(i)] / bc1;
                const S vhat = vv[static_cast<size_t>(i)] / bc2;
                val[static_cast<size_t>(i)] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    // Global L2 norm of current gradients, for NaN-abort diagnostics.
    double grad_norm() const {
        double acc = 0;
        for (const auto& p : params) {
            if (!p.has_grad()) continue;
            for (S g : p.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
        }
        return std::sqrt(acc);
    }

    // Scale gradients so their global norm does not exceed max_norm.
    void clip_grad_norm(S max_norm) {
        if (!(max_norm > S(0))) return;
        const double norm = grad_norm();
        if (norm <= static_cast<double>(max_norm)) return;
        const S factor = static_cast<S>(static_cast<double>(max_norm) / norm);
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (auto& g : p.node()->grad) g *= factor;
        }
    }
};

}  // namespace omnirestore
