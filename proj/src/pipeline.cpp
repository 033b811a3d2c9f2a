#include "omnirestore/pipeline.hpp"

#include "omnirestore/error.hpp"

namespace omnirestore {

template <class S>
Pipeline<S> Pipeline<S>::seeded(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Pipeline<S> p;
    p.cfg = config;
    Rng rng(mix_seed(seed, 0xe5c0de));
    p.encoder.init(config.encoder, rng);
    p.encoder.set_trainable(false);
    p.bank = DescriptorBank<S>::make_default();
    p.bank.refresh(p.encoder);
    p.net.init(config, rng);
    return p;
}

template <class S>
typename Pipeline<S>::DescriptorSet Pipeline<S>::build_descriptors(const Tensor<S>& image) const {
    if (image.dim(0) % cfg.encoder.patch || image.dim(1) % cfg.encoder.patch)
        throw ShapeError("restore: extents " + shape_str(image.shape()) +
                         " must be divisible by the encoder patch size " +
                         std::to_string(cfg.encoder.patch));
    DescriptorSet out;
    // The encoder is frozen and the input carries no gradient, so this whole
    // stretch records no graph.
    Tensor<S> tokens = encoder.encode_image(image.detached()).detached();
    Tensor<S> z = encoder.project_summary(slice(tokens, 0, 0, 1)).detached();

    if (force_uniform_weights) {
        out.weights.assign(static_cast<size_t>(bank.size()),
                           S(1) / static_cast<S>(bank.size()));
    } else {
        out.weights = adaptive_weights(z, bank);
    }

    out.per_scale.resize(static_cast<size_t>(cfg.scales()));
    for (int i = 0; i < bank.size(); ++i) {
        Tensor<S> text = bank.embedding_row(i);
        Tensor<S> sim = token_similarity(text, tokens);
        auto [sampled, indices] = sample_topk(tokens, sim, cfg.k);
        out.topk_indices.push_back(std::move(indices));
        for (int s = 0; s < cfg.scales(); ++s)
            out.per_scale[static_cast<size_t>(s)].push_back(
                build_descriptor(sampled, text, net.desc_proj[static_cast<size_t>(s)]));
    }
    return out;
}

template <class S>
Tensor<S> Pipeline<S>::forward(const Tensor<S>& degraded) const {
    DescriptorSet ds = build_descriptors(degraded);
    return net.forward(degraded, ds.per_scale, ds.weights);
}

template <class S>
ImageBuffer Pipeline<S>::restore(const ImageBuffer& img) const {
    return restore(img, nullptr);
}

template <class S>
ImageBuffer Pipeline<S>::restore(const ImageBuffer& img, DescriptorSet* debug_out) const {
    Tensor<S> input = image_to_tensor<S>(img);
    DescriptorSet ds = build_descriptors(input);
    Tensor<S> out = net.forward(input, ds.per_scale, ds.weights);
    if (debug_out) *debug_out = std::move(ds);
    return tensor_to_image(out);
}

template <class S>
std::vector<S> Pipeline<S>::adaptive_weights_for(const ImageBuffer& img) const {
    Tensor<S> tokens = encoder.encode_image(img).detached();
    Tensor<S> z = encoder.project_summary(slice(tokens, 0, 0, 1)).detached();
    return adaptive_weights(z, bank);
}

template <class S>
ParamMap<S> Pipeline<S>::trainable_params() {
    ParamMap<S> pm;
    net.collect(pm, "net");
    return pm;
}

template <class S>
ParamMap<S> Pipeline<S>::all_params() {
    ParamMap<S> pm;
    encoder.collect(pm, "encoder");
    net.collect(pm, "net");
    return pm;
}

template <class S>
long Pipeline<S>::parameter_count() {
    return all_params().total_count();
}

template struct Pipeline<float>;
template struct Pipeline<double>;

}  // namespace omnirestore
