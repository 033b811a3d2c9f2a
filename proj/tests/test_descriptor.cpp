#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "omnirestore/descriptor.hpp"
#include "omnirestore/error.hpp"

using namespace omnirestore;

TEST_SUITE_BEGIN("descriptor");

TEST_CASE("token similarity hand case with orthonormal tokens") {
    TensorD text = TensorD::from({1, 2}, {1, 0});
    TensorD tokens = TensorD::from({2, 2}, {1, 0, 0, 1});
    TensorD sim = token_similarity(text, tokens);
    const double e = std::exp(1.0);
    CHECK(sim.data()[0] == doctest::Approx(e / (e + 1)).epsilon(1e-9));  // 0.731...
    CHECK(sim.data()[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-9));  // 0.268...
}

TEST_CASE("identical tokens give a uniform similarity") {
    TensorD text = TensorD::from({1, 3}, {0.2, -0.5, 0.8});
    TensorD tokens = TensorD::zeros({6, 3});
    for (int i = 0; i < 6; ++i) {
        tokens.mutable_data()[static_cast<size_t>(i) * 3 + 0] = 0.3;
        tokens.mutable_data()[static_cast<size_t>(i) * 3 + 1] = 0.4;
        tokens.mutable_data()[static_cast<size_t>(i) * 3 + 2] = -0.1;
    }
    TensorD sim = token_similarity(text, tokens);
    for (double v : sim.data()) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-9));
}

TEST_CASE("token similarity sums to one on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        TensorD text = TensorD::zeros({1, 8});
        TensorD tokens = TensorD::zeros({12, 8});
        for (auto& v : text.mutable_data()) v = rng.normal();
        for (auto& v : tokens.mutable_data()) v = rng.normal();
        text = l2_normalize(text);
        TensorD sim = token_similarity(text, tokens);
        double s = 0;
        for (double v : sim.data()) {
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(token_similarity(TensorD::zeros({1, 4}), TensorD::zeros({3, 5})), ShapeError);
}

TEST_CASE("sample_topk returns all tokens sorted when k equals l") {
    TensorD tokens = TensorD::from({3, 2}, {1, 0, 0, 1, 0.5, 0.5});
    TensorD sim = TensorD::from({3}, {0.2, 0.5, 0.3});
    auto [sel, idx] = sample_topk(tokens, sim, 3);
    REQUIRE(idx == std::vector<int>{1, 2, 0});
    CHECK(sel.data()[0] == 0.0);  // token 1 first
    CHECK(sel.data()[1] == 1.0);
}

TEST_CASE("orthogonal text picks the aligned token") {
    TensorD text = TensorD::from({1, 2}, {1, 0});
    TensorD tokens = TensorD::from({3, 2}, {1, 0, 0, 1, 0.5, 0.5});
    TensorD sim = token_similarity(text, tokens);
    auto [sel, idx] = sample_topk(tokens, sim, 1);
    REQUIRE(idx.size() == 1);
    CHECK(idx[0] == 0);
}

TEST_CASE("topk matches a full-sort oracle on random cases and breaks ties by index") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const int l = 32;
        TensorD tokens = TensorD::zeros({l, 4});
        for (auto& v : tokens.mutable_data()) v = rng.normal();
        TensorD sim = TensorD::zeros({l});
        for (auto& v : sim.mutable_data())
            v = rng.below(8) == 0 ? 0.125 : rng.uniform();  // some deliberate ties
        auto [sel, idx] = sample_topk(tokens, sim, 10);

        std::vector<int> oracle(l);
        for (int i = 0; i < l; ++i) oracle[static_cast<size_t>(i)] = i;
        std::stable_sort(oracle.begin(), oracle.end(), [&](int a, int b) {
            return sim.data()[static_cast<size_t>(a)] > sim.data()[static_cast<size_t>(b)];
        });
        oracle.resize(10);
        CHECK(idx == oracle);
    }
}

TEST_CASE("topk selection is invariant under strictly increasing transforms") {
    Rng rng(31);
    TensorD tokens = TensorD::zeros({16, 4});
    for (auto& v : tokens.mutable_data()) v = rng.normal();
    TensorD sim = TensorD::zeros({16});
    for (auto& v : sim.mutable_data()) v = rng.uniform();
    TensorD warped = TensorD::zeros({16});
    for (int i = 0; i < 16; ++i)
        warped.mutable_data()[static_cast<size_t>(i)] =
            std::tanh(3.0 * sim.data()[static_cast<size_t>(i)]) + 2.0;
    auto a = sample_topk(tokens, sim, 5).second;
    auto b = sample_topk(tokens, warped, 5).second;
    CHECK(a == b);
}

TEST_CASE("topk rejects k outside [1, l]") {
    TensorD tokens = TensorD::zeros({3, 2});
    TensorD sim = TensorD::zeros({3});
    CHECK_THROWS_AS(sample_topk(tokens, sim, 4), ValueError);
    CHECK_THROWS_AS(sample_topk(tokens, sim, 0), ValueError);
}

TEST_CASE("build_descriptor shape, identity projection, and linearity") {
    Rng rng(9);
    TensorD sampled = TensorD::zeros({10, 6});
    for (auto& v : sampled.mutable_data()) v = rng.normal();
    TensorD text = TensorD::zeros({1, 6});
    for (auto& v : text.mutable_data()) v = rng.normal();

    TensorD proj = TensorD::zeros({6, 32});
    for (auto& v : proj.mutable_data()) v = rng.normal();
    TensorD out = build_descriptor(sampled, text, proj);
    CHECK(out.shape() == Shape{11, 32});

    TensorD eye = identity_matrix<double>(6);
    TensorD raw = build_descriptor(sampled, text, eye);
    for (int j = 0; j < 6; ++j) {
        CHECK(raw.data()[0 * 6 + j] == sampled.data()[0 * 6 + j]);
        CHECK(raw.data()[10 * 6 + j] == text.data()[static_cast<size_t>(j)]);  // text token last
    }

    TensorD doubled = build_descriptor(scale(sampled, 2.0), scale(text, 2.0), proj);
    for (long i = 0; i < out.numel(); ++i)
        CHECK(doubled.data()[static_cast<size_t>(i)] ==
              doctest::Approx(2.0 * out.data()[static_cast<size_t>(i)]).epsilon(1e-12));

    CHECK_THROWS_AS(build_descriptor(sampled, TensorD::zeros({1, 5}), proj), ShapeError);
}

TEST_CASE("adaptive weights sum to one and handle the single-class bank") {
    DescriptorBank<double> bank;
    bank.texts = {"low-light", "haze", "rain", "snow"};
    Rng rng(3);
    bank.embeddings = TensorD::zeros({4, 8});
    for (auto& v : bank.embeddings.mutable_data()) v = rng.normal();
    bank.embeddings = l2_normalize(bank.embeddings).detached();

    TensorD z = TensorD::zeros({1, 8});
    for (auto& v : z.mutable_data()) v = rng.normal();
    auto w = adaptive_weights(z, bank);
    REQUIRE(w.size() == 4);
    double s = 0;
    for (double v : w) {
        CHECK(v >= 0.0);
        s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));

    DescriptorBank<double> single;
    single.texts = {"haze"};
    single.embeddings = l2_normalize(TensorD::from({1, 8}, std::vector<double>(8, 0.5))).detached();
    auto w1 = adaptive_weights(z, single);
    REQUIRE(w1.size() == 1);
    CHECK(w1[0] == 1.0);  // exactly

    DescriptorBank<double> empty;
    CHECK_THROWS_AS(adaptive_weights(z, empty), ConfigError);
}

TEST_CASE("equal logits give uniform adaptive weights") {
    DescriptorBank<double> bank;
    bank.texts = {"a", "b", "c", "d"};
    // all classes share one embedding, so every cosine matches
    std::vector<double> row = {1, 0, 0, 0};
    std::vector<double> all;
    for (int i = 0; i < 4; ++i) all.insert(all.end(), row.begin(), row.end());
    bank.embeddings = TensorD::from({4, 4}, all);
    TensorD z = TensorD::from({1, 4}, {0.3, 0.1, -0.2, 0.9});
    auto w = adaptive_weights(z, bank);
    for (double v : w) CHECK(v == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_SUITE_END();
