#include "omnirestore/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "omnirestore/error.hpp"
#include "omnirestore/image_io.hpp"
#include "omnirestore/optim.hpp"

namespace omnirestore {

template <class S>
void TransformerBlock<S>::init(int dim, int mlp_ratio, Rng& rng) {
    const double sd = 0.02;
    ln1_g = init_const<S>({dim}, S(1));
    ln1_b = init_const<S>({dim}, S(0));
    wq = init_normal<S>({dim, dim}, sd, rng);
    wk = init_normal<S>({dim, dim}, sd, rng);
    wv = init_normal<S>({dim, dim}, sd, rng);
    wo = init_normal<S>({dim, dim}, sd, rng);
    ln2_g = init_const<S>({dim}, S(1));
    ln2_b = init_const<S>({dim}, S(0));
    const int hidden = dim * mlp_ratio;
    mlp_w1 = init_normal<S>({dim, hidden}, sd, rng);
    mlp_b1 = init_const<S>({hidden}, S(0));
    mlp_w2 = init_normal<S>({hidden, dim}, sd, rng);
    mlp_b2 = init_const<S>({dim}, S(0));
}

template <class S>
void TransformerBlock<S>::collect(ParamMap<S>& pm, const std::string& prefix) {
    pm.add(prefix + ".ln1_g", ln1_g);
    pm.add(prefix + ".ln1_b", ln1_b);
    pm.add(prefix + ".wq", wq);
    pm.add(prefix + ".wk", wk);
    pm.add(prefix + ".wv", wv);
    pm.add(prefix + ".wo", wo);
    pm.add(prefix + ".ln2_g", ln2_g);
    pm.add(prefix + ".ln2_b", ln2_b);
    pm.add(prefix + ".mlp_w1", mlp_w1);
    pm.add(prefix + ".mlp_b1", mlp_b1);
    pm.add(prefix + ".mlp_w2", mlp_w2);
    pm.add(prefix + ".mlp_b2", mlp_b2);
}

template <class S>
Tensor<S> TransformerBlock<S>::forward(const Tensor<S>& tokens, int heads) const {
    Tensor<S> n1 = layer_norm(tokens, ln1_g, ln1_b);
    Tensor<S> att = self_attention(matmul(n1, wq), matmul(n1, wk), matmul(n1, wv), heads, wo);
    Tensor<S> x = add(tokens, att);
    Tensor<S> n2 = layer_norm(x, ln2_g, ln2_b);
    Tensor<S> h = matmul(gelu(add_bias(matmul(n2, mlp_w1), mlp_b1)), mlp_w2);
    return add(x, add_bias(h, mlp_b2));
}

template <class S>
void TextEncoder<S>::init(int dim, Rng& rng) {
    table = init_normal<S>({kNumDegradations, dim}, 0.02, rng);
    w1 = init_normal<S>({dim, dim}, 0.02, rng);
    b1 = init_const<S>({dim}, S(0));
    w2 = init_normal<S>({dim, dim}, 0.02, rng);
    b2 = init_const<S>({dim}, S(0));
}

template <class S>
void TextEncoder<S>::collect(ParamMap<S>& pm, const std::string& prefix) {
    pm.add(prefix + ".table", table);
    pm.add(prefix + ".w1", w1);
    pm.add(prefix + ".b1", b1);
    pm.add(prefix + ".w2", w2);
    pm.add(prefix + ".b2", b2);
}

template <class S>
Tensor<S> TextEncoder<S>::forward_all() const {
    Tensor<S> h = gelu(add_bias(matmul(table, w1), b1));
    return l2_normalize(add_bias(matmul(h, w2), b2));
}

template <class S>
void ImageEncoder<S>::init(const EncoderConfig& config, Rng& rng) {
    cfg = config;
    const int d = cfg.embed_dim;
    patch_w = init_normal<S>({cfg.patch * cfg.patch * 3, d}, 0.02, rng);
    patch_b = init_const<S>({d}, S(0));
    summary = init_normal<S>({1, d}, 0.02, rng);
    blocks.resize(static_cast<size_t>(cfg.blocks));
    for (auto& b : blocks) b.init(d, cfg.mlp_ratio, rng);
    lnf_g = init_const<S>({d}, S(1));
    lnf_b = init_const<S>({d}, S(0));
}

template <class S>
void ImageEncoder<S>::collect(ParamMap<S>& pm, const std::string& prefix) {
    pm.add(prefix + ".patch_w", patch_w);
    pm.add(prefix + ".patch_b", patch_b);
    pm.add(prefix + ".summary", summary);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(pm, prefix + ".block" + std::to_string(i));
    pm.add(prefix + ".lnf_g", lnf_g);
    pm.add(prefix + ".lnf_b", lnf_b);
}

template <class S>
Tensor<S> ImageEncoder<S>::forward(const Tensor<S>& image) const {
    if (image.ndim() != 3 || image.dim(2) != 3)
        throw ShapeError("encode_image: expected [H,W,3], got " + shape_str(image.shape()));
    if (image.dim(0) % cfg.patch || image.dim(1) % cfg.patch)
        throw ShapeError("encode_image: extents " + shape_str(image.shape()) +
                         " not divisible by patch size " + std::to_string(cfg.patch));
    Tensor<S> patches = space_to_depth(image, cfg.patch);
    const int n = patches.dim(0) * patches.dim(1);
    Tensor<S> tok = add_bias(matmul(reshape(patches, {n, patches.dim(2)}), patch_w), patch_b);
    Tensor<S> x = concat<S>({summary, tok}, 0);
    for (const auto& b : blocks) x = b.forward(x, cfg.heads);
    return layer_norm(x, lnf_g, lnf_b);
}

template <class S>
void DescriptorEncoder<S>::init(const EncoderConfig& config, Rng& rng) {
    cfg = config;
    text.init(cfg.embed_dim, rng);
    vision.init(cfg, rng);
    proj_w = init_normal<S>({cfg.embed_dim, cfg.embed_dim}, 0.02, rng);
    proj_b = init_const<S>({cfg.embed_dim}, S(0));
}

template <class S>
void DescriptorEncoder<S>::collect(ParamMap<S>& pm, const std::string& prefix) {
    text.collect(pm, prefix + ".text");
    vision.collect(pm, prefix + ".vision");
    pm.add(prefix + ".proj_w", proj_w);
    pm.add(prefix + ".proj_b", proj_b);
}

template <class S>
void DescriptorEncoder<S>::set_trainable(bool trainable) {
    ParamMap<S> pm;
    collect(pm, "enc");
    for (auto& [name, t] : pm.items) t.set_requires_grad(trainable);
}

template <class S>
Tensor<S> DescriptorEncoder<S>::encode_text(const std::string& text_name) const {
    const auto d = degradation_from_name(text_name);
    if (!d)
        throw VocabError("unknown degradation text '" + text_name +
                         "' (memory bank vocabulary is low-light/haze/rain/snow)");
    Tensor<S> all = text.forward_all();
    return slice(all, 0, static_cast<int>(*d), 1);
}

template <class S>
Tensor<S> DescriptorEncoder<S>::encode_image(const ImageBuffer& img) const {
    return vision.forward(image_to_tensor<S>(img));
}

template <class S>
Tensor<S> DescriptorEncoder<S>::project_summary(const Tensor<S>& e1) const {
    if (e1.ndim() != 2 || e1.dim(0) != 1 || e1.dim(1) != cfg.embed_dim)
        throw ShapeError("project_summary: expected [1," + std::to_string(cfg.embed_dim) +
                         "], got " + shape_str(e1.shape()));
    return add_bias(matmul(e1, proj_w), proj_b);
}

template <class S>
DescriptorBank<S> DescriptorBank<S>::make_default() {
    DescriptorBank<S> bank;
    for (const char* name : kDegradationNames) bank.texts.emplace_back(name);
    return bank;
}

template <class S>
void DescriptorBank<S>::refresh(const DescriptorEncoder<S>& enc) {
    if (texts.empty()) throw ConfigError("descriptor bank has no classes");
    std::vector<Tensor<S>> rows;
    for (const auto& t : texts) rows.push_back(enc.encode_text(t));
    embeddings = concat(rows, 0).detached();
}

template <class S>
Tensor<S> DescriptorBank<S>::embedding_row(int i) const {
    return slice(embeddings, 0, i, 1);
}

namespace {

// Batch contrastive loss: image-to-text cross entropy plus a multi-positive
// text-to-image term over the classes present in the batch.
TensorF contrastive_loss(const TensorF& z_rows, const TensorF& text_rows,
                         const std::vector<int>& labels, float temperature) {
    const int b = z_rows.dim(0);
    const int n = text_rows.dim(0);
    TensorF logits = scale(matmul(l2_normalize(z_rows), transpose2d(text_rows)), 1.f / temperature);

    TensorF pos_mask = TensorF::zeros({b, n});
    for (int i = 0; i < b; ++i)
        pos_mask.mutable_data()[static_cast<size_t>(i) * n + labels[i]] = 1.f;

    // image -> text: mean over rows of -log p(true class)
    TensorF row_sm = softmax(logits, 1);
    TensorF ones_n1 = TensorF::full({n, 1}, 1.f);
    TensorF picked = matmul(mul(row_sm, pos_mask), ones_n1);  // b x 1
    TensorF i2t = scale(sum_all(log(picked)), -1.f / static_cast<float>(b));

    // text -> image: for each class present in the batch, -log of the summed
    // column softmax mass on its positives; absent classes contribute log(1).
    TensorF col_sm = softmax(logits, 0);
    TensorF ones_1b = TensorF::full({1, b}, 1.f);
    TensorF col_mass = matmul(ones_1b, mul(col_sm, pos_mask));  // 1 x n
    TensorF absent = TensorF::zeros({1, n});
    int present = 0;
    {
        std::vector<bool> seen(static_cast<size_t>(n), false);
        for (int y : labels) seen[static_cast<size_t>(y)] = true;
        for (int i = 0; i < n; ++i) {
            if (seen[static_cast<size_t>(i)])
                ++present;
            else
                absent.mutable_data()[static_cast<size_t>(i)] = 1.f;
        }
    }
    TensorF t2i = scale(sum_all(log(add(col_mass, absent))), -1.f / static_cast<float>(present));

    return scale(add(i2t, t2i), 0.5f);
}

struct LabeledImage {
    ImageBuffer image;
    int label;
};

std::vector<LabeledImage> load_single_label_rows(const DatasetManifest& manifest,
                                                 const std::string& data_root) {
    namespace fs = std::filesystem;
    std::vector<LabeledImage> out;
    out.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows) {
        if (row.labels.size() != 1)
            throw DatasetError("align_pretrain requires single-degradation rows; row '" + row.id +
                               "' has " + std::to_string(row.labels.size()) + " labels");
        const auto d = degradation_from_name(row.labels[0]);
        if (!d) throw DatasetError("row '" + row.id + "' has unknown label " + row.labels[0]);
        out.push_back({read_image((fs::path(data_root) / row.degraded).string()),
                       static_cast<int>(*d)});
    }
    return out;
}

ImageBuffer crop_area(const ImageBuffer& img, int y0, int x0, int size) {
    ImageBuffer out(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

TensorF batch_loss(const DescriptorEncoder<float>& enc, const std::vector<LabeledImage>& data,
                   const std::vector<size_t>& indices, float temperature,
                   const std::vector<std::pair<int, int>>* crop_corners, int crop) {
    const int b = static_cast<int>(indices.size());
    std::vector<TensorF> zs(static_cast<size_t>(b));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int i = 0; i < b; ++i) {
        const ImageBuffer& full = data[indices[static_cast<size_t>(i)]].image;
        TensorF tokens =
            crop_corners
                ? enc.encode_image(crop_area(full, (*crop_corners)[static_cast<size_t>(i)].first,
                                             (*crop_corners)[static_cast<size_t>(i)].second, crop))
                : enc.encode_image(full);
        zs[static_cast<size_t>(i)] = enc.project_summary(slice(tokens, 0, 0, 1));
    }
    std::vector<int> labels;
    labels.reserve(static_cast<size_t>(b));
    for (size_t idx : indices) labels.push_back(data[idx].label);
    return contrastive_loss(concat(zs, 0), enc.text.forward_all(), labels, temperature);
}

}  // namespace

AlignReport align_pretrain(DescriptorEncoder<float>& enc, const DatasetManifest& manifest,
                           const std::string& data_root, const AlignConfig& cfg) {
    auto data = load_single_label_rows(manifest, data_root);
    if (data.size() < 8) throw DatasetError("align_pretrain needs at least 8 rows");

    Rng rng(cfg.seed);
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[rng.below(i + 1)]);
    const size_t holdout = std::max<size_t>(1, static_cast<size_t>(
                                                   static_cast<double>(data.size()) * cfg.holdout_fraction));
    std::vector<size_t> train_idx(order.begin(), order.end() - static_cast<long>(holdout));
    std::vector<size_t> hold_idx(order.end() - static_cast<long>(holdout), order.end());

    enc.set_trainable(true);
    ParamMap<float> params;
    enc.collect(params, "enc");
    Adam<float> opt;
    opt.lr = cfg.lr;
    opt.attach(params);

    // random crops during training (the only augmentation); full frames for the
    // holdout loss
    int crop = 0;
    {
        int min_extent = 1 << 20;
        for (const auto& d : data) min_extent = std::min({min_extent, d.image.height, d.image.width});
        crop = std::max(enc.cfg.patch, (min_extent * 3 / 4) / enc.cfg.patch * enc.cfg.patch);
    }

    auto holdout_loss = [&] {
        return static_cast<double>(
            batch_loss(enc, data, hold_idx, cfg.temperature, nullptr, 0).item());
    };

    AlignReport report;
    report.init_holdout_loss = holdout_loss();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // cosine decay to a tenth of the initial rate
        opt.lr = cfg.lr * (0.55f + 0.45f * std::cos(3.14159265f * static_cast<float>(epoch) /
                                                    static_cast<float>(cfg.epochs)));
        for (size_t i = train_idx.size() - 1; i > 0; --i)
            std::swap(train_idx[i], train_idx[rng.below(i + 1)]);
        double epoch_loss = 0;
        long steps = 0;
        for (size_t at = 0; at < train_idx.size(); at += static_cast<size_t>(cfg.batch)) {
            const size_t end = std::min(train_idx.size(), at + static_cast<size_t>(cfg.batch));
            std::vector<size_t> batch(train_idx.begin() + static_cast<long>(at),
                                      train_idx.begin() + static_cast<long>(end));
            std::vector<std::pair<int, int>> corners(batch.size());
            for (size_t i = 0; i < batch.size(); ++i) {
                const ImageBuffer& img = data[batch[i]].image;
                corners[i] = {static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height - crop + 1))),
                              static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width - crop + 1)))};
            }
            TensorF loss = batch_loss(enc, data, batch, cfg.temperature, &corners, crop);
            if (!std::isfinite(loss.item()))
                throw NumericError("align_pretrain: non-finite loss at epoch " +
                                   std::to_string(epoch));
            opt.zero_grad();
            loss.backward();
            opt.step();
            epoch_loss += loss.item();
            ++steps;
        }
        report.epoch_train_loss.push_back(epoch_loss / static_cast<double>(std::max(1L, steps)));
    }
    report.final_holdout_loss = holdout_loss();
    enc.set_trainable(false);
    return report;
}

template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template struct TextEncoder<float>;
template struct TextEncoder<double>;
template struct ImageEncoder<float>;
template struct ImageEncoder<double>;
template struct DescriptorEncoder<float>;
template struct DescriptorEncoder<double>;
template struct DescriptorBank<float>;
template struct DescriptorBank<double>;

}  // namespace omnirestore
