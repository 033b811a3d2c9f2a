#pragma once

#include "omnirestore/degrade.hpp"
#include "omnirestore/image.hpp"
#include "omnirestore/nn.hpp"

namespace omnirestore {

struct EncoderConfig {
    int embed_dim = 64;  // shared text/image embedding width
    int patch = 8;
    int heads = 4;
    int blocks = 2;
    int mlp_ratio = 4;
};

// Pre-norm transformer block (attention + MLP, residuals on both).
template <class S>
struct TransformerBlock {
    Tensor<S> ln1_g, ln1_b, wq, wk, wv, wo;
    Tensor<S> ln2_g, ln2_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    void init(int dim, int mlp_ratio, Rng& rng);
    void collect(ParamMap<S>& pm, const std::string& prefix);
    Tensor<S> forward(const Tensor<S>& tokens, int heads) const;
};

// Closed-world text side: one embedding per degradation name plus an MLP.
template <class S>
struct TextEncoder {
    Tensor<S> table;  // n x d
    Tensor<S> w1, b1, w2, b2;

    void init(int dim, Rng& rng);
    void collect(ParamMap<S>& pm, const std::string& prefix);
    // All vocabulary embeddings as unit rows, n x d.
    Tensor<S> forward_all() const;
};

// Patchify -> linear embed -> learned summary token -> transformer blocks.
// No positional embedding: patch tokens stay permutation-equivariant.
template <class S>
struct ImageEncoder {
    EncoderConfig cfg;
    Tensor<S> patch_w, patch_b;
    Tensor<S> summary;  // 1 x d
    std::vector<TransformerBlock<S>> blocks;
    Tensor<S> lnf_g, lnf_b;

    void init(const EncoderConfig& config, Rng& rng);
    void collect(ParamMap<S>& pm, const std::string& prefix);
    // image: [H,W,3] tensor, H and W divisible by patch. Returns l x d tokens,
    // row 0 the summary token, l = 1 + (H/p)*(W/p).
    Tensor<S> forward(const Tensor<S>& image) const;
};

template <class S>
struct DescriptorEncoder {
    EncoderConfig cfg;
    TextEncoder<S> text;
    ImageEncoder<S> vision;
    Tensor<S> proj_w, proj_b;  // summary-token projection into the text space

    void init(const EncoderConfig& config, Rng& rng);
    void collect(ParamMap<S>& pm, const std::string& prefix);
    void set_trainable(bool trainable);

    // Unit-norm embedding of one memory-bank text; unknown text throws VocabError.
    Tensor<S> encode_text(const std::string& text_name) const;
    Tensor<S> encode_image(const ImageBuffer& img) const;
    Tensor<S> encode_image(const Tensor<S>& image) const { return vision.forward(image); }
    // z = proj(e1), 1 x d. Not normalized here; callers normalize before dots.
    Tensor<S> project_summary(const Tensor<S>& e1) const;
};

// The ordered degradation classes with their cached unit text embeddings.
template <class S>
struct DescriptorBank {
    std::vector<std::string> texts;
    Tensor<S> embeddings;  // n x d, detached cache

    static DescriptorBank make_default();
    void refresh(const DescriptorEncoder<S>& enc);
    int size() const { return static_cast<int>(texts.size()); }
    Tensor<S> embedding_row(int i) const;
};

struct AlignConfig {
    int epochs = 60;
    float lr = 3e-4f;
    int batch = 16;
    float temperature = 0.07f;
    float holdout_fraction = 0.15f;
    std::uint64_t seed = 0;
};

struct AlignReport {
    double init_holdout_loss = 0;
    double final_holdout_loss = 0;
    std::vector<double> epoch_train_loss;
};

// Symmetric contrastive alignment between projected image summaries and the
// class text embeddings, on single-degradation rows only (multi-label rows
// throw DatasetError). The encoder is left trainable=false afterwards.
AlignReport align_pretrain(DescriptorEncoder<float>& enc, const DatasetManifest& manifest,
                           const std::string& data_root, const AlignConfig& cfg);

}  // namespace omnirestore
