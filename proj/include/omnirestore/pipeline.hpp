#pragma once

#include "omnirestore/model.hpp"

namespace omnirestore {

// Frozen descriptor encoder + memory bank + trainable restorer, the unit that
// checkpoints, trains, and serves restore requests.
template <class S>
struct Pipeline {
    ModelConfig cfg;
    DescriptorEncoder<S> encoder;
    DescriptorBank<S> bank;
    Restorer<S> net;
    bool force_uniform_weights = false;  // ablation switch for the adaptive weights

    static Pipeline seeded(const ModelConfig& config, std::uint64_t seed);

    struct DescriptorSet {
        std::vector<std::vector<Tensor<S>>> per_scale;  // [scale][class] -> (k+1) x width
        std::vector<S> weights;                         // lambda, one per class
        std::vector<std::vector<int>> topk_indices;     // per class
    };

    // Encoder outputs are detached: gradient reaches only the per-scale
    // descriptor projections.
    DescriptorSet build_descriptors(const Tensor<S>& image) const;

    // Differentiable restore of one [H,W,3] tensor, output clamped to [0,1].
    Tensor<S> forward(const Tensor<S>& degraded) const;

    ImageBuffer restore(const ImageBuffer& img) const;
    ImageBuffer restore(const ImageBuffer& img, DescriptorSet* debug_out) const;

    std::vector<S> adaptive_weights_for(const ImageBuffer& img) const;

    ParamMap<S> trainable_params();  // restorer (incl. descriptor projections)
    ParamMap<S> all_params();        // plus the frozen encoder, for checkpoints
    long parameter_count();
};

using PipelineF = Pipeline<float>;

}  // namespace omnirestore
