#include "omnirestore/model.hpp"

#include <cmath>

#include "omnirestore/error.hpp"

namespace omnirestore {

void ModelConfig::validate() const {
    if (widths.empty() || widths.size() != blocks.size() || widths.size() != heads.size())
        throw ConfigError("model config: widths/blocks/heads must have equal nonzero length");
    for (size_t s = 0; s < widths.size(); ++s) {
        if (widths[s] <= 0 || blocks[s] <= 0 || heads[s] <= 0)
            throw ConfigError("model config: widths/blocks/heads must be positive");
        if (widths[s] % heads[s])
            throw ConfigError("model config: width " + std::to_string(widths[s]) +
                              " not divisible by heads " + std::to_string(heads[s]));
    }
    for (size_t s = 1; s < widths.size(); ++s)
        if (widths[s] < widths[s - 1])
            throw ConfigError("model config: widths must be non-decreasing");
    if (patch_embed < 1) throw ConfigError("model config: patch_embed must be >= 1");
    if (k < 1) throw ConfigError("model config: k must be >= 1");
    if (n_classes < 1) throw ConfigError("model config: n_classes must be >= 1");
    if (ffn_expansion < 1) throw ConfigError("model config: ffn_expansion must be >= 1");
}

template <class S>
Tensor<S> descriptor_attention(const std::vector<Tensor<S>>& descriptors,
                               const std::vector<S>& weights, const Tensor<S>& keys,
                               const Tensor<S>& values, int heads, const Tensor<S>& wo) {
    if (descriptors.empty() || descriptors.size() != weights.size())
        throw ConfigError("descriptor_attention: got " + std::to_string(descriptors.size()) +
                          " descriptors and " + std::to_string(weights.size()) + " weights");
    Tensor<S> acc;
    for (size_t i = 0; i < descriptors.size(); ++i) {
        Tensor<S> term = scale(self_attention(descriptors[i], keys, values, heads, wo), weights[i]);
        acc = i == 0 ? term : add(acc, term);
    }
    return acc;
}

template <class S>
void RestorerBlock<S>::init(int width_, int heads_, int expansion_, Rng& rng) {
    width = width_;
    heads = heads_;
    expansion = expansion_;
    const double sd = 0.02;
    ln1_g = init_const<S>({width}, S(1));
    ln1_b = init_const<S>({width}, S(0));
    wk = init_normal<S>({width, width}, sd, rng);
    wv = init_normal<S>({width, width}, sd, rng);
    wo_cross = init_normal<S>({width, width}, sd, rng);
    ln2_g = init_const<S>({width}, S(1));
    ln2_b = init_const<S>({width}, S(0));
    wq2 = init_normal<S>({width, width}, sd, rng);
    wk2 = init_normal<S>({width, width}, sd, rng);
    wv2 = init_normal<S>({width, width}, sd, rng);
    // residual branches start at zero so every block begins as the identity
    wo2 = init_const<S>({width, width}, S(0));
    ln3_g = init_const<S>({width}, S(1));
    ln3_b = init_const<S>({width}, S(0));
    const int hidden = 2 * expansion * width;
    ffn_in_w = init_normal<S>({hidden, 1, 1, width}, sd, rng);
    ffn_in_b = init_const<S>({hidden}, S(0));
    ffn_dw_w = init_normal<S>({hidden, 3, 3, 1}, sd, rng);
    ffn_dw_b = init_const<S>({hidden}, S(0));
    ffn_out_w = init_const<S>({width, 1, 1, expansion * width}, S(0));
    ffn_out_b = init_const<S>({width}, S(0));
}

template <class S>
void RestorerBlock<S>::collect(ParamMap<S>& pm, const std::string& prefix) {
    pm.add(prefix + ".ln1_g", ln1_g);
    pm.add(prefix + ".ln1_b", ln1_b);
    pm.add(prefix + ".wk", wk);
    pm.add(prefix + ".wv", wv);
    pm.add(prefix + ".wo_cross", wo_cross);
    pm.add(prefix + ".ln2_g", ln2_g);
    pm.add(prefix + ".ln2_b", ln2_b);
    pm.add(prefix + ".wq2", wq2);
    pm.add(prefix + ".wk2", wk2);
    pm.add(prefix + ".wv2", wv2);
    pm.add(prefix + ".wo2", wo2);
    pm.add(prefix + ".ln3_g", ln3_g);
    pm.add(prefix + ".ln3_b", ln3_b);
    pm.add(prefix + ".ffn_in_w", ffn_in_w);
    pm.add(prefix + ".ffn_in_b", ffn_in_b);
    pm.add(prefix + ".ffn_dw_w", ffn_dw_w);
    pm.add(prefix + ".ffn_dw_b", ffn_dw_b);
    pm.add(prefix + ".ffn_out_w", ffn_out_w);
    pm.add(prefix + ".ffn_out_b", ffn_out_b);
}

template <class S>
FeatureMap<S> RestorerBlock<S>::forward(const FeatureMap<S>& x,
                                        const std::vector<Tensor<S>>& descriptors,
                                        const std::vector<S>& weights) const {
    for (const auto& d : descriptors)
        if (d.dim(1) != width)
            throw ShapeError("restorer block: descriptor width " + std::to_string(d.dim(1)) +
                             " != block width " + std::to_string(width));
    const int img_len = x.h * x.w;
    const int desc_len = descriptors.front().dim(0);

    // (a) scheme tokens from descriptor cross-attention
    Tensor<S> n1 = layer_norm(x.tokens, ln1_g, ln1_b);
    Tensor<S> schemes = descriptor_attention(descriptors, weights, matmul(n1, wk), matmul(n1, wv),
                                             heads, wo_cross);

    // (b) joint self-attention; image positions keep the residual, the scheme
    // positions are dropped after attending
    Tensor<S> n2 = layer_norm(x.tokens, ln2_g, ln2_b);
    Tensor<S> joint = concat<S>({schemes, n2}, 0);
    Tensor<S> att = self_attention(matmul(joint, wq2), matmul(joint, wk2), matmul(joint, wv2),
                                   heads, wo2);
    Tensor<S> tokens = add(x.tokens, slice(att, 0, desc_len, img_len));

    // (c) gated depth-wise conv FFN on the spatial layout
    Tensor<S> n3 = layer_norm(tokens, ln3_g, ln3_b);
    Tensor<S> grid = reshape(n3, {x.h, x.w, width});
    Tensor<S> hidden = conv2d(grid, ffn_in_w, ffn_in_b);
    hidden = conv2d(hidden, ffn_dw_w, ffn_dw_b, 1, 2 * expansion * width);
    Tensor<S> gate = slice(hidden, 2, 0, expansion * width);
    Tensor<S> value = slice(hidden, 2, expansion * width, expansion * width);
    Tensor<S> ffn = conv2d(mul(gelu(gate), value), ffn_out_w, ffn_out_b);
    tokens = add(tokens, reshape(ffn, {img_len, width}));

    return {tokens, x.h, x.w};
}

template <class S>
void Restorer<S>::init(const ModelConfig& config, Rng& rng) {
    config.validate();
    cfg = config;
    const int scales = cfg.scales();
    const int in_dim = cfg.patch_embed * cfg.patch_embed * 3;
    embed_w = init_normal<S>({in_dim, cfg.widths[0]}, 0.02, rng);
    embed_b = init_const<S>({cfg.widths[0]}, S(0));

    enc_blocks.resize(static_cast<size_t>(scales));
    for (int s = 0; s < scales; ++s) {
        enc_blocks[static_cast<size_t>(s)].resize(static_cast<size_t>(cfg.blocks[static_cast<size_t>(s)]));
        for (auto& b : enc_blocks[static_cast<size_t>(s)])
            b.init(cfg.widths[static_cast<size_t>(s)], cfg.heads[static_cast<size_t>(s)],
                   cfg.ffn_expansion, rng);
    }
    for (int s = 0; s + 1 < scales; ++s) {
        down_w.push_back(init_normal<S>(
            {cfg.widths[static_cast<size_t>(s + 1)], 3, 3, cfg.widths[static_cast<size_t>(s)]}, 0.02,
            rng));
        down_b.push_back(init_const<S>({cfg.widths[static_cast<size_t>(s + 1)]}, S(0)));
    }
    dec_blocks.resize(static_cast<size_t>(scales > 0 ? scales - 1 : 0));
    for (int s = 0; s + 1 < scales; ++s) {
        up_w.push_back(init_normal<S>(
            {cfg.widths[static_cast<size_t>(s)], 3, 3, cfg.widths[static_cast<size_t>(s + 1)]}, 0.02,
            rng));
        up_b.push_back(init_const<S>({cfg.widths[static_cast<size_t>(s)]}, S(0)));
        fuse_w.push_back(init_normal<S>(
            {cfg.widths[static_cast<size_t>(s)], 1, 1, 2 * cfg.widths[static_cast<size_t>(s)]}, 0.02,
            rng));
        fuse_b.push_back(init_const<S>({cfg.widths[static_cast<size_t>(s)]}, S(0)));
        dec_blocks[static_cast<size_t>(s)].resize(static_cast<size_t>(cfg.blocks[static_cast<size_t>(s)]));
        for (auto& b : dec_blocks[static_cast<size_t>(s)])
            b.init(cfg.widths[static_cast<size_t>(s)], cfg.heads[static_cast<size_t>(s)],
                   cfg.ffn_expansion, rng);
    }
    head_w = init_const<S>({cfg.widths[0], in_dim}, S(0));  // start as the identity restorer
    head_b = init_const<S>({in_dim}, S(0));
    for (int s = 0; s < scales; ++s)
        desc_proj.push_back(init_normal<S>({cfg.encoder.embed_dim, cfg.widths[static_cast<size_t>(s)]},
                                           0.02, rng));
}

template <class S>
void Restorer<S>::collect(ParamMap<S>& pm, const std::string& prefix) {
    pm.add(prefix + ".embed_w", embed_w);
    pm.add(prefix + ".embed_b", embed_b);
    for (size_t s = 0; s < enc_blocks.size(); ++s)
        for (size_t b = 0; b < enc_blocks[s].size(); ++b)
            enc_blocks[s][b].collect(pm, prefix + ".enc" + std::to_string(s) + ".block" +
                                             std::to_string(b));
    for (size_t s = 0; s < down_w.size(); ++s) {
        pm.add(prefix + ".down" + std::to_string(s) + "_w", down_w[s]);
        pm.add(prefix + ".down" + std::to_string(s) + "_b", down_b[s]);
    }
    for (size_t s = 0; s < dec_blocks.size(); ++s) {
        pm.add(prefix + ".up" + std::to_string(s) + "_w", up_w[s]);
        pm.add(prefix + ".up" + std::to_string(s) + "_b", up_b[s]);
        pm.add(prefix + ".fuse" + std::to_string(s) + "_w", fuse_w[s]);
        pm.add(prefix + ".fuse" + std::to_string(s) + "_b", fuse_b[s]);
        for (size_t b = 0; b < dec_blocks[s].size(); ++b)
            dec_blocks[s][b].collect(pm, prefix + ".dec" + std::to_string(s) + ".block" +
                                             std::to_string(b));
    }
    pm.add(prefix + ".head_w", head_w);
    pm.add(prefix + ".head_b", head_b);
    for (size_t s = 0; s < desc_proj.size(); ++s)
        pm.add(prefix + ".desc_proj" + std::to_string(s), desc_proj[s]);
}

template <class S>
Tensor<S> Restorer<S>::forward(const Tensor<S>& image,
                               const std::vector<std::vector<Tensor<S>>>& descriptors,
                               const std::vector<S>& weights) const {
    if (image.ndim() != 3 || image.dim(2) != 3)
        throw ShapeError("restorer: expected [H,W,3], got " + shape_str(image.shape()));
    const int H = image.dim(0), W = image.dim(1);
    const int div = cfg.divisibility();
    if (H % div || W % div)
        throw ShapeError("restorer: extents " + shape_str(image.shape()) +
                         " must be divisible by " + std::to_string(div));
    if (static_cast<int>(descriptors.size()) != cfg.scales())
        throw ConfigError("restorer: need one descriptor set per scale");

    const int scales = cfg.scales();
    Tensor<S> patches = space_to_depth(image, cfg.patch_embed);
    FeatureMap<S> x;
    x.h = patches.dim(0);
    x.w = patches.dim(1);
    x.tokens = add_bias(matmul(reshape(patches, {x.h * x.w, patches.dim(2)}), embed_w), embed_b);

    std::vector<FeatureMap<S>> skips;
    for (int s = 0; s < scales; ++s) {
        for (const auto& block : enc_blocks[static_cast<size_t>(s)])
            x = block.forward(x, descriptors[static_cast<size_t>(s)], weights);
        if (s + 1 < scales) {
            skips.push_back(x);
            Tensor<S> grid = reshape(x.tokens, {x.h, x.w, cfg.widths[static_cast<size_t>(s)]});
            Tensor<S> down = conv2d(grid, down_w[static_cast<size_t>(s)],
                                    down_b[static_cast<size_t>(s)], 2, 1);
            x.h = down.dim(0);
            x.w = down.dim(1);
            x.tokens = reshape(down, {x.h * x.w, down.dim(2)});
        }
    }
    for (int s = scales - 2; s >= 0; --s) {
        Tensor<S> grid =
            reshape(x.tokens, {x.h, x.w, cfg.widths[static_cast<size_t>(s + 1)]});
        Tensor<S> up = conv2d(upsample_nearest2(grid), up_w[static_cast<size_t>(s)],
                              up_b[static_cast<size_t>(s)], 1, 1);
        const FeatureMap<S>& skip = skips[static_cast<size_t>(s)];
        Tensor<S> skip_grid =
            reshape(skip.tokens, {skip.h, skip.w, cfg.widths[static_cast<size_t>(s)]});
        Tensor<S> fused = conv2d(concat<S>({up, skip_grid}, 2), fuse_w[static_cast<size_t>(s)],
                                 fuse_b[static_cast<size_t>(s)], 1, 1);
        x.h = fused.dim(0);
        x.w = fused.dim(1);
        x.tokens = reshape(fused, {x.h * x.w, fused.dim(2)});
        for (const auto& block : dec_blocks[static_cast<size_t>(s)])
            x = block.forward(x, descriptors[static_cast<size_t>(s)], weights);
    }

    Tensor<S> delta_tokens = add_bias(matmul(x.tokens, head_w), head_b);
    Tensor<S> delta = depth_to_space(
        reshape(delta_tokens, {x.h, x.w, cfg.patch_embed * cfg.patch_embed * 3}), cfg.patch_embed);
    return clamp01(add(image, delta));
}

#define OMNIRESTORE_INSTANTIATE(S)                                                              \
    template Tensor<S> descriptor_attention<S>(const std::vector<Tensor<S>>&,                   \
                                               const std::vector<S>&, const Tensor<S>&,         \
                                               const Tensor<S>&, int, const Tensor<S>&);        \
    template struct RestorerBlock<S>;                                                           \
    template struct Restorer<S>;

OMNIRESTORE_INSTANTIATE(float)
OMNIRESTORE_INSTANTIATE(double)

#undef OMNIRESTORE_INSTANTIATE

}  // namespace omnirestore
