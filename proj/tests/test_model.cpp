#include <doctest.h>

#include <cmath>

#include "omnirestore/error.hpp"
#include "omnirestore/gradcheck.hpp"
#include "omnirestore/pipeline.hpp"

using namespace omnirestore;

namespace {

TensorD randn(Shape shape, Rng& rng) {
    TensorD t = TensorD::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = rng.normal();
    return t;
}

// Triple-loop scaled dot-product attention, single head, no projection.
TensorD naive_attention(const TensorD& q, const TensorD& k, const TensorD& v) {
    const int a = q.dim(0), b = k.dim(0), d = q.dim(1);
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    TensorD out = TensorD::zeros({a, d});
    for (int i = 0; i < a; ++i) {
        std::vector<double> row(static_cast<size_t>(b), 0.0);
        double mx = -1e300;
        for (int j = 0; j < b; ++j) {
            double dot = 0;
            for (int e = 0; e < d; ++e)
                dot += q.data()[static_cast<size_t>(i) * d + e] * k.data()[static_cast<size_t>(j) * d + e];
            row[static_cast<size_t>(j)] = dot * inv;
            mx = std::max(mx, row[static_cast<size_t>(j)]);
        }
        double sum = 0;
        for (int j = 0; j < b; ++j) {
            row[static_cast<size_t>(j)] = std::exp(row[static_cast<size_t>(j)] - mx);
            sum += row[static_cast<size_t>(j)];
        }
        for (int j = 0; j < b; ++j)
            for (int e = 0; e < d; ++e)
                out.mutable_data()[static_cast<size_t>(i) * d + e] +=
                    row[static_cast<size_t>(j)] / sum * v.data()[static_cast<size_t>(j) * d + e];
    }
    return out;
}

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.patch_embed = 2;
    cfg.widths = {8};
    cfg.blocks = {1};
    cfg.heads = {2};
    cfg.k = 2;
    cfg.ffn_expansion = 2;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.patch = 8;
    cfg.encoder.heads = 2;
    cfg.encoder.blocks = 1;
    cfg.encoder.mlp_ratio = 2;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("self attention matches the naive triple-loop oracle") {
    Rng rng(101);
    for (int trial = 0; trial < 5; ++trial) {
        TensorD q = randn({4, 8}, rng);
        TensorD k = randn({6, 8}, rng);
        TensorD v = randn({6, 8}, rng);
        TensorD got = self_attention(q, k, v, 1, identity_matrix<double>(8));
        TensorD want = naive_attention(q, k, v);
        for (long i = 0; i < got.numel(); ++i)
            CHECK(got.data()[static_cast<size_t>(i)] ==
                  doctest::Approx(want.data()[static_cast<size_t>(i)]).epsilon(1e-5));
    }
}

TEST_CASE("single key/value row dominates for any query") {
    Rng rng(7);
    TensorD q = randn({3, 4}, rng);
    TensorD k = randn({1, 4}, rng);
    TensorD v = randn({1, 4}, rng);
    TensorD out = self_attention(q, k, v, 2, identity_matrix<double>(4));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(out.data()[static_cast<size_t>(i) * 4 + j] ==
                  doctest::Approx(v.data()[static_cast<size_t>(j)]).epsilon(1e-9));
}

TEST_CASE("zero queries average the value rows uniformly") {
    Rng rng(8);
    TensorD q = TensorD::zeros({2, 4});
    TensorD k = randn({5, 4}, rng);
    TensorD v = randn({5, 4}, rng);
    TensorD out = self_attention(q, k, v, 1, identity_matrix<double>(4));
    for (int j = 0; j < 4; ++j) {
        double mean = 0;
        for (int r = 0; r < 5; ++r) mean += v.data()[static_cast<size_t>(r) * 4 + j];
        mean /= 5;
        CHECK(out.data()[static_cast<size_t>(j)] == doctest::Approx(mean).epsilon(1e-9));
        CHECK(out.data()[static_cast<size_t>(4 + j)] == doctest::Approx(mean).epsilon(1e-9));
    }
}

TEST_CASE("self attention rejects mismatched shapes") {
    CHECK_THROWS_AS(
        self_attention(TensorD::zeros({2, 4}), TensorD::zeros({3, 5}), TensorD::zeros({3, 5}), 1,
                       identity_matrix<double>(4)),
        ShapeError);
    CHECK_THROWS_AS(
        self_attention(TensorD::zeros({2, 4}), TensorD::zeros({3, 4}), TensorD::zeros({3, 4}), 3,
                       identity_matrix<double>(4)),
        ShapeError);
}

TEST_CASE("descriptor attention equals a single pass when n=1") {
    Rng rng(11);
    TensorD c = randn({3, 8}, rng);
    TensorD k = randn({6, 8}, rng);
    TensorD v = randn({6, 8}, rng);
    TensorD wo = randn({8, 8}, rng);
    TensorD direct = self_attention(c, k, v, 2, wo);
    TensorD combined = descriptor_attention<double>({c}, {1.0}, k, v, 2, wo);
    for (long i = 0; i < direct.numel(); ++i)
        CHECK(combined.data()[static_cast<size_t>(i)] == direct.data()[static_cast<size_t>(i)]);
}

TEST_CASE("identical descriptors collapse for any weights on the simplex") {
    Rng rng(13);
    TensorD c = randn({4, 8}, rng);
    TensorD k = randn({5, 8}, rng);
    TensorD v = randn({5, 8}, rng);
    TensorD wo = randn({8, 8}, rng);
    TensorD one = self_attention(c, k, v, 1, wo);
    TensorD mixed = descriptor_attention<double>({c, c, c, c}, {0.4, 0.3, 0.2, 0.1}, k, v, 1, wo);
    for (long i = 0; i < one.numel(); ++i)
        CHECK(mixed.data()[static_cast<size_t>(i)] ==
              doctest::Approx(one.data()[static_cast<size_t>(i)]).epsilon(1e-9));
}

TEST_CASE("descriptor attention matches the term-by-term weighted sum oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<TensorD> descs;
        for (int i = 0; i < 4; ++i) descs.push_back(randn({3, 8}, rng));
        std::vector<double> lambda = {0.1, 0.2, 0.3, 0.4};
        TensorD k = randn({7, 8}, rng);
        TensorD v = randn({7, 8}, rng);
        TensorD wo = randn({8, 8}, rng);
        TensorD got = descriptor_attention(descs, lambda, k, v, 2, wo);
        TensorD want = TensorD::zeros({3, 8});
        for (int i = 0; i < 4; ++i) {
            TensorD term = self_attention(descs[static_cast<size_t>(i)], k, v, 2, wo);
            for (long j = 0; j < want.numel(); ++j)
                want.mutable_data()[static_cast<size_t>(j)] +=
                    lambda[static_cast<size_t>(i)] * term.data()[static_cast<size_t>(j)];
        }
        for (long j = 0; j < want.numel(); ++j)
            CHECK(got.data()[static_cast<size_t>(j)] ==
                  doctest::Approx(want.data()[static_cast<size_t>(j)]).epsilon(1e-6));
    }
}

TEST_CASE("descriptor attention is linear in the weights") {
    Rng rng(19);
    std::vector<TensorD> descs;
    for (int i = 0; i < 3; ++i) descs.push_back(randn({2, 4}, rng));
    TensorD k = randn({5, 4}, rng);
    TensorD v = randn({5, 4}, rng);
    TensorD wo = randn({4, 4}, rng);
    std::vector<double> la = {0.5, 0.25, 0.25}, lb = {0.1, 0.6, 0.3};
    const double alpha = 0.37;
    std::vector<double> mix(3);
    for (int i = 0; i < 3; ++i) mix[static_cast<size_t>(i)] =
        alpha * la[static_cast<size_t>(i)] + (1 - alpha) * lb[static_cast<size_t>(i)];
    TensorD lhs = descriptor_attention(descs, mix, k, v, 1, wo);
    TensorD ra = descriptor_attention(descs, la, k, v, 1, wo);
    TensorD rb = descriptor_attention(descs, lb, k, v, 1, wo);
    for (long j = 0; j < lhs.numel(); ++j) {
        const double rhs = alpha * ra.data()[static_cast<size_t>(j)] +
                           (1 - alpha) * rb.data()[static_cast<size_t>(j)];
        CHECK(lhs.data()[static_cast<size_t>(j)] == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("descriptor count must match the weight count") {
    TensorD c = TensorD::zeros({2, 4});
    TensorD k = TensorD::zeros({3, 4});
    CHECK_THROWS_AS(descriptor_attention<double>({c, c}, {1.0}, k, k, 1, identity_matrix<double>(4)),
                    ConfigError);
}

TEST_CASE("restorer block preserves token count and spatial extents") {
    Rng rng(23);
    RestorerBlock<double> block;
    block.init(8, 2, 2, rng);
    FeatureMap<double> x{randn({24, 8}, rng), 4, 6};
    std::vector<TensorD> descs;
    for (int i = 0; i < 4; ++i) descs.push_back(randn({3, 8}, rng));
    FeatureMap<double> y = block.forward(x, descs, {0.25, 0.25, 0.25, 0.25});
    CHECK(y.tokens.shape() == Shape{24, 8});
    CHECK(y.h == 4);
    CHECK(y.w == 6);
    for (double v : y.tokens.data()) CHECK(std::isfinite(v));
}

TEST_CASE("a duplicated single-class bank behaves like the n=1 block") {
    Rng rng(29);
    RestorerBlock<double> block;
    block.init(8, 2, 2, rng);
    FeatureMap<double> x{randn({12, 8}, rng), 3, 4};
    TensorD c = randn({4, 8}, rng);
    FeatureMap<double> one = block.forward(x, {c}, {1.0});
    FeatureMap<double> four = block.forward(x, {c, c, c, c}, {0.25, 0.25, 0.25, 0.25});
    for (long i = 0; i < one.tokens.numel(); ++i)
        CHECK(four.tokens.data()[static_cast<size_t>(i)] ==
              doctest::Approx(one.tokens.data()[static_cast<size_t>(i)]).epsilon(1e-6));
}

TEST_CASE("backward reaches every descriptor with positive weight") {
    Rng rng(31);
    RestorerBlock<double> block;
    block.init(8, 1, 2, rng);
    // the residual branches are zero-initialized; give them values so the
    // gradient path under test is live
    for (auto& v : block.wo2.mutable_data()) v = rng.normal(0, 0.02);
    for (auto& v : block.ffn_out_w.mutable_data()) v = rng.normal(0, 0.02);
    FeatureMap<double> x{randn({12, 8}, rng), 3, 4};
    std::vector<TensorD> descs;
    for (int i = 0; i < 4; ++i) {
        TensorD c = randn({3, 8}, rng);
        c.set_requires_grad(true);
        descs.push_back(c);
    }
    FeatureMap<double> y = block.forward(x, descs, {0.4, 0.3, 0.2, 0.1});
    mean_all(mul(y.tokens, y.tokens)).backward();
    for (auto& c : descs) {
        REQUIRE(c.has_grad());
        double mx = 0;
        for (double g : c.grad()) mx = std::max(mx, std::abs(g));
        CHECK(mx > 0.0);
    }
}

TEST_CASE("restore keeps shape, stays finite untrained, and is deterministic") {
    auto pipe = Pipeline<float>::seeded(micro_config(), 5);
    ImageBuffer img = procedural_base_image(16, 3);
    ImageBuffer out = pipe.restore(img);
    CHECK(out.height == 16);
    CHECK(out.width == 16);
    for (float v : out.data) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
    ImageBuffer out2 = pipe.restore(img);
    for (size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] == out2.data[i]);
}

TEST_CASE("an untrained restorer is the identity thanks to the zero head") {
    auto pipe = Pipeline<float>::seeded(micro_config(), 6);
    ImageBuffer img = procedural_base_image(16, 4);
    ImageBuffer out = pipe.restore(img);
    for (size_t i = 0; i < img.data.size(); ++i)
        CHECK(out.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
}

TEST_CASE("indivisible input names the required divisibility") {
    ModelConfig cfg = micro_config();
    cfg.widths = {8, 16};
    cfg.blocks = {1, 1};
    cfg.heads = {2, 2};
    auto pipe = Pipeline<float>::seeded(cfg, 7);
    ImageBuffer img(18, 18, 0.5f);
    CHECK_THROWS_WITH_AS(static_cast<void>(pipe.restore(img)), doctest::Contains("divisible"),
                         ShapeError);
}

TEST_CASE("uniform-weight switch produces the same weights as an equal-logit bank") {
    auto pipe = Pipeline<float>::seeded(micro_config(), 8);
    pipe.force_uniform_weights = true;
    ImageBuffer img = procedural_base_image(16, 9);
    typename Pipeline<float>::DescriptorSet ds;
    (void)pipe.restore(img, &ds);
    REQUIRE(ds.weights.size() == 4);
    for (float w : ds.weights) CHECK(w == doctest::Approx(0.25f));
    REQUIRE(ds.topk_indices.size() == 4);
    for (const auto& idx : ds.topk_indices) CHECK(idx.size() == static_cast<size_t>(pipe.cfg.k));
}

TEST_CASE("parameter count is stable across seeded runs") {
    auto a = Pipeline<float>::seeded(micro_config(), 1);
    auto b = Pipeline<float>::seeded(micro_config(), 2);
    CHECK(a.parameter_count() == b.parameter_count());
    CHECK(a.parameter_count() > 0);

    ModelConfig desk;  // the shipped default
    auto c = Pipeline<float>::seeded(desk, 3);
    CHECK(c.parameter_count() == Pipeline<float>::seeded(desk, 4).parameter_count());
}

TEST_CASE("end-to-end gradients of the 1-scale model pass grad_check") {
    auto pipe = Pipeline<double>::seeded(micro_config(), 77);
    Rng rng(91);
    // zero-initialized tensors (head, residual branch outputs) get small
    // random values so every gradient path is exercised
    for (auto& v : pipe.net.head_w.mutable_data()) v = rng.normal(0.0, 0.01);
    for (auto& v : pipe.net.enc_blocks[0][0].wo2.mutable_data()) v = rng.normal(0.0, 0.02);
    for (auto& v : pipe.net.enc_blocks[0][0].ffn_out_w.mutable_data()) v = rng.normal(0.0, 0.02);

    TensorD input = TensorD::zeros({16, 16, 3});
    for (auto& v : input.mutable_data()) v = rng.uniform(0.2, 0.8);
    TensorD target = TensorD::zeros({16, 16, 3});
    for (auto& v : target.mutable_data()) v = rng.uniform(0.1, 0.9);

    auto loss_with = [&](TensorD* slot, const TensorD& t) {
        TensorD orig = *slot;
        *slot = t;
        TensorD loss = smooth_l1(pipe.forward(input), target);
        *slot = orig;
        return loss;
    };

    auto& blk = pipe.net.enc_blocks[0][0];
    std::vector<std::pair<const char*, TensorD*>> slots = {
        {"embed_w", &pipe.net.embed_w},   {"embed_b", &pipe.net.embed_b},
        {"wk", &blk.wk},                  {"wv", &blk.wv},
        {"wo_cross", &blk.wo_cross},      {"wq2", &blk.wq2},
        {"wk2", &blk.wk2},                {"wv2", &blk.wv2},
        {"wo2", &blk.wo2},                {"ln1_g", &blk.ln1_g},
        {"ln2_b", &blk.ln2_b},            {"ln3_g", &blk.ln3_g},
        {"ffn_in_w", &blk.ffn_in_w},      {"ffn_in_b", &blk.ffn_in_b},
        {"ffn_dw_w", &blk.ffn_dw_w},      {"ffn_dw_b", &blk.ffn_dw_b},
        {"ffn_out_w", &blk.ffn_out_w},    {"head_w", &pipe.net.head_w},
        {"head_b", &pipe.net.head_b},     {"desc_proj0", &pipe.net.desc_proj[0]},
    };
    for (auto& [name, slot] : slots) {
        INFO(name);
        auto f = [&, slotp = slot](const TensorD& t) { return loss_with(slotp, t); };
        const double err = grad_check(f, *slot, 1e-4, 10, 1234);
        CHECK(err <= 1e-3);
    }
}

TEST_SUITE_END();
