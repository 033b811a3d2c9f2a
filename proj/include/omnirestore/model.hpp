#pragma once

#include "omnirestore/descriptor.hpp"

namespace omnirestore {

struct ModelConfig {
    int patch_embed = 4;
    std::vector<int> widths = {32, 64, 128};
    std::vector<int> blocks = {2, 2, 2};
    std::vector<int> heads = {1, 2, 4};
    int k = 10;  // sampled image tokens per descriptor
    int n_classes = kNumDegradations;
    int ffn_expansion = 2;
    EncoderConfig encoder;

    int scales() const { return static_cast<int>(widths.size()); }
    // Input extents must divide this and the encoder patch size.
    int divisibility() const { return patch_embed << (scales() - 1); }
    void validate() const;
};

template <class S>
struct FeatureMap {
    Tensor<S> tokens;  // (h*w) x width
    int h = 0, w = 0;
};

// Weighted sum of one cross-attention pass per degradation class, each with
// its descriptor as the query. The shared wo projects every pass.
template <class S>
Tensor<S> descriptor_attention(const std::vector<Tensor<S>>& descriptors,
                               const std::vector<S>& weights, const Tensor<S>& keys,
                               const Tensor<S>& values, int heads, const Tensor<S>& wo);

// One restoration transformer block: descriptor cross-attention producing
// scheme tokens, joint self-attention over [schemes ; image tokens] with the
// scheme positions dropped afterwards, then a gated depth-wise conv FFN.
template <class S>
struct RestorerBlock {
    int width = 0, heads = 1, expansion = 2;
    Tensor<S> ln1_g, ln1_b, wk, wv, wo_cross;
    Tensor<S> ln2_g, ln2_b, wq2, wk2, wv2, wo2;
    Tensor<S> ln3_g, ln3_b;
    Tensor<S> ffn_in_w, ffn_in_b;    // 1x1 conv width -> 2*e*width
    Tensor<S> ffn_dw_w, ffn_dw_b;    // depthwise 3x3 on 2*e*width
    Tensor<S> ffn_out_w, ffn_out_b;  // 1x1 conv e*width -> width

    void init(int width_, int heads_, int expansion_, Rng& rng);
    void collect(ParamMap<S>& pm, const std::string& prefix);
    FeatureMap<S> forward(const FeatureMap<S>& x, const std::vector<Tensor<S>>& descriptors,
                          const std::vector<S>& weights) const;
};

// U-Net of RestorerBlocks with a global input residual and [0,1] clamp.
template <class S>
struct Restorer {
    ModelConfig cfg;
    Tensor<S> embed_w, embed_b;  // linear patch embedding
    std::vector<std::vector<RestorerBlock<S>>> enc_blocks;
    std::vector<Tensor<S>> down_w, down_b;  // stride-2 3x3, width_s -> width_{s+1}
    std::vector<std::vector<RestorerBlock<S>>> dec_blocks;
    std::vector<Tensor<S>> up_w, up_b;      // 3x3 after nearest-2x, width_{s+1} -> width_s
    std::vector<Tensor<S>> fuse_w, fuse_b;  // 1x1 skip fusion 2*width_s -> width_s
    Tensor<S> head_w, head_b;               // zero-initialized output head
    std::vector<Tensor<S>> desc_proj;       // per-scale descriptor projection, d_e x width_s

    void init(const ModelConfig& config, Rng& rng);
    void collect(ParamMap<S>& pm, const std::string& prefix);

    // descriptors[s][i]: class i descriptor at scale s, (k+1) x width_s.
    Tensor<S> forward(const Tensor<S>& image, const std::vector<std::vector<Tensor<S>>>& descriptors,
                      const std::vector<S>& weights) const;
};

}  // namespace omnirestore
