#include "omnirestore/selftest.hpp"

#include <algorithm>
#include <cmath>

#include "omnirestore/descriptor.hpp"
#include "omnirestore/gradcheck.hpp"
#include "omnirestore/image_io.hpp"
#include "omnirestore/metrics.hpp"
#include "omnirestore/pipeline.hpp"

namespace omnirestore {

namespace {

TensorD randn(Shape shape, Rng& rng) {
    TensorD t = TensorD::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = rng.normal();
    return t;
}

SelftestResult gradient_suite() {
    Rng rng(811);
    double worst = 0;
    auto track = [&](const std::function<TensorD(const TensorD&)>& f, Shape shape) {
        worst = std::max(worst, grad_check(f, randn(std::move(shape), rng)));
    };
    TensorD other = randn({3, 4}, rng);
    track([&](const TensorD& t) { return mean_all(mul(t, other)); }, {3, 4});
    track([](const TensorD& t) { return mean_all(gelu(t)); }, {4, 4});
    track([](const TensorD& t) { return mean_all(mul(softmax(t, 1), t)); }, {3, 5});
    TensorD rhs = randn({4, 3}, rng);
    track([&](const TensorD& t) { return mean_all(matmul(t, rhs)); }, {2, 4});
    TensorD gamma = randn({5}, rng), beta = randn({5}, rng);
    track([&](const TensorD& t) { return mean_all(mul(layer_norm(t, gamma, beta), t)); }, {3, 5});
    TensorD cw = randn({3, 3, 3, 2}, rng), cb = randn({3}, rng);
    track([&](const TensorD& t) { return mean_all(gelu(conv2d(t, cw, cb))); }, {4, 4, 2});
    TensorD tgt = randn({6}, rng);
    track([&](const TensorD& t) { return smooth_l1(t, tgt, 0.8); }, {6});
    const bool ok = worst <= 1e-3;
    return {"gradient checks", ok, "max rel err " + std::to_string(worst)};
}

SelftestResult attention_suite() {
    Rng rng(821);
    TensorD q = randn({4, 8}, rng), k = randn({6, 8}, rng), v = randn({6, 8}, rng);
    TensorD got = self_attention(q, k, v, 1, identity_matrix<double>(8));
    double worst = 0;
    // naive oracle, one scalar at a time
    const double inv = 1.0 / std::sqrt(8.0);
    for (int i = 0; i < 4; ++i) {
        std::vector<double> w(6);
        double mx = -1e300;
        for (int j = 0; j < 6; ++j) {
            double dot = 0;
            for (int e = 0; e < 8; ++e) dot += q.data()[i * 8 + e] * k.data()[j * 8 + e];
            w[static_cast<size_t>(j)] = dot * inv;
            mx = std::max(mx, w[static_cast<size_t>(j)]);
        }
        double sum = 0;
        for (auto& x : w) {
            x = std::exp(x - mx);
            sum += x;
        }
        for (int e = 0; e < 8; ++e) {
            double want = 0;
            for (int j = 0; j < 6; ++j) want += w[static_cast<size_t>(j)] / sum * v.data()[j * 8 + e];
            worst = std::max(worst, std::abs(want - got.data()[static_cast<size_t>(i) * 8 + e]));
        }
    }
    // weighted-sum reduction for identical descriptors
    TensorD c = randn({3, 8}, rng);
    TensorD wo = randn({8, 8}, rng);
    TensorD one = self_attention(c, k, v, 2, wo);
    TensorD four = descriptor_attention<double>({c, c, c, c}, {0.25, 0.25, 0.25, 0.25}, k, v, 2, wo);
    for (long i = 0; i < one.numel(); ++i)
        worst = std::max(worst, std::abs(one.data()[static_cast<size_t>(i)] -
                                         four.data()[static_cast<size_t>(i)]));
    const bool ok = worst <= 1e-5;
    return {"attention oracles", ok, "max abs err " + std::to_string(worst)};
}

SelftestResult descriptor_suite() {
    Rng rng(831);
    bool ok = true;
    std::string detail = "ok";
    // softmax hand case
    TensorD sm = softmax(TensorD::from({2}, {std::log(3.0), 0.0}), 0);
    if (std::abs(sm.data()[0] - 0.75) > 1e-9 || std::abs(sm.data()[1] - 0.25) > 1e-9) {
        ok = false;
        detail = "softmax hand case failed";
    }
    // top-k against a full sort
    for (int trial = 0; trial < 50 && ok; ++trial) {
        TensorD tokens = randn({24, 4}, rng);
        TensorD sim = TensorD::zeros({24});
        for (auto& v : sim.mutable_data()) v = rng.uniform();
        auto idx = sample_topk(tokens, sim, 7).second;
        std::vector<int> oracle(24);
        for (int i = 0; i < 24; ++i) oracle[static_cast<size_t>(i)] = i;
        std::stable_sort(oracle.begin(), oracle.end(), [&](int a, int b) {
            return sim.data()[static_cast<size_t>(a)] > sim.data()[static_cast<size_t>(b)];
        });
        oracle.resize(7);
        if (idx != oracle) {
            ok = false;
            detail = "top-k mismatch vs sort oracle";
        }
    }
    return {"descriptor math", ok, detail};
}

SelftestResult metrics_suite() {
    ImageBuffer a(32, 32, 100.f / 255.f);
    ImageBuffer b(32, 32, 116.f / 255.f);
    const double p = psnr(a, b);
    bool ok = std::abs(p - 24.0485) < 0.01;
    Rng rng(841);
    ImageBuffer r(24, 24);
    for (auto& v : r.data) v = static_cast<float>(rng.uniform());
    ok = ok && std::abs(ssim(r, r) - 1.0) <= 1e-6 && psnr(r, r) == 100.0;
    return {"metrics hand cases", ok, "psnr(16/255)=" + std::to_string(p)};
}

SelftestResult roundtrip_suite() {
    Rng rng(851);
    ImageBuffer img(9, 7);
    for (auto& v : img.data) v = static_cast<float>(rng.below(256)) / 255.f;
    bool ok = true;
    ImageBuffer p = decode_ppm(encode_ppm(img));
    ImageBuffer g = decode_png(encode_png(img));
    for (size_t i = 0; i < img.data.size(); ++i)
        ok = ok && p.data[i] == img.data[i] && g.data[i] == img.data[i];
    return {"image round-trip", ok, ok ? "ppm+png exact" : "mismatch"};
}

SelftestResult model_suite() {
    ModelConfig cfg;
    cfg.patch_embed = 2;
    cfg.widths = {8};
    cfg.blocks = {1};
    cfg.heads = {2};
    cfg.k = 2;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.blocks = 1;
    cfg.encoder.heads = 2;
    cfg.encoder.mlp_ratio = 2;
    auto pipe = Pipeline<float>::seeded(cfg, 3);
    ImageBuffer img = procedural_base_image(16, 5);
    ImageBuffer out = pipe.restore(img);
    bool ok = out.height == img.height && out.width == img.width;
    for (float v : out.data) ok = ok && std::isfinite(v) && v >= 0.f && v <= 1.f;
    auto w = pipe.adaptive_weights_for(img);
    double s = 0;
    for (float x : w) s += x;
    ok = ok && std::abs(s - 1.0) <= 1e-6;
    return {"restore smoke", ok, "params=" + std::to_string(pipe.parameter_count())};
}

}  // namespace

std::vector<SelftestResult> run_selftests() {
    return {gradient_suite(),  attention_suite(), descriptor_suite(),
            metrics_suite(),   roundtrip_suite(), model_suite()};
}

}  // namespace omnirestore
