#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "omnirestore/error.hpp"
#include "omnirestore/train.hpp"
#include "test_util.hpp"

using namespace omnirestore;
using omnirestore::testutil::make_micro_dataset;
using omnirestore::testutil::micro_config;
namespace fs = std::filesystem;

namespace {

std::vector<float> concat_values(ParamMap<float>& pm) {
    std::vector<float> out;
    for (auto& [name, t] : pm.items) out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("loss_total is zero for a perfect prediction and reduces to smooth_l1 at w_p=0") {
    auto pipe = Pipeline<float>::seeded(micro_config(), 2);
    Rng rng(6);
    TensorF img = TensorF::zeros({16, 16, 3});
    for (auto& v : img.mutable_data()) v = static_cast<float>(rng.uniform(0.1, 0.9));

    CHECK(loss_total(pipe.encoder, img, img, 0.04f).item() == doctest::Approx(0.f));

    TensorF off = add_scalar(img, 0.3f).detached();
    const float with_zero = loss_total(pipe.encoder, off, img, 0.f).item();
    CHECK(with_zero == doctest::Approx(smooth_l1(off, img).item()));
    CHECK(with_zero == doctest::Approx(0.5f * 0.3f * 0.3f));  // |d| < beta branch, mean over all

    const float with_percep = loss_total(pipe.encoder, off, img, 0.04f).item();
    CHECK(with_percep >= with_zero);
    CHECK_THROWS_AS(loss_total(pipe.encoder, off, TensorF::zeros({8, 8, 3}), 0.f), ShapeError);
}

TEST_CASE("loss_total is positive whenever pred differs from target") {
    auto pipe = Pipeline<float>::seeded(micro_config(), 3);
    Rng rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        TensorF a = TensorF::zeros({16, 16, 3});
        TensorF b = TensorF::zeros({16, 16, 3});
        for (auto& v : a.mutable_data()) v = static_cast<float>(rng.uniform());
        for (auto& v : b.mutable_data()) v = static_cast<float>(rng.uniform());
        CHECK(loss_total(pipe.encoder, a, b, 0.04f).item() > 0.f);
    }
}

TEST_CASE("adam matches a hand-stepped reference for 3 steps on 2 parameters") {
    // loss = 0.5*(w0^2) + 3*w1, grad = (w0, 3)
    TensorD w = TensorD::from({2}, {1.0, -2.0});
    w.set_requires_grad(true);
    Adam<double> opt;
    opt.lr = 0.1;
    ParamMap<double> pm;
    pm.add("w", w);
    opt.attach(pm);

    double rw[2] = {1.0, -2.0};
    double rm[2] = {0, 0}, rv[2] = {0, 0};
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;

    for (int step = 1; step <= 3; ++step) {
        TensorD loss = add(scale(mul(slice(w, 0, 0, 1), slice(w, 0, 0, 1)), 0.5),
                           scale(slice(w, 0, 1, 1), 3.0));
        opt.zero_grad();
        sum_all(loss).backward();
        opt.step();

        const double g[2] = {rw[0], 3.0};
        for (int i = 0; i < 2; ++i) {
            rm[i] = b1 * rm[i] + (1 - b1) * g[i];
            rv[i] = b2 * rv[i] + (1 - b2) * g[i] * g[i];
            const double mhat = rm[i] / (1 - std::pow(b1, step));
            const double vhat = rv[i] / (1 - std::pow(b2, step));
            rw[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        CHECK(std::abs(w.data()[0] - rw[0]) <= 1e-12);
        CHECK(std::abs(w.data()[1] - rw[1]) <= 1e-12);
    }
}

TEST_CASE("a fixed batch trains to a lower loss") {
    DatasetManifest manifest;
    const fs::path dir = make_micro_dataset("omnirestore_train_fixed", 1, 16, 3, &manifest);
    manifest.rows.resize(4);  // one tiny fixed batch

    auto pipe = Pipeline<float>::seeded(micro_config(), 11);
    TrainConfig cfg;
    cfg.epochs = 25;  // 25 steps over the one batch
    cfg.lr = 2e-3f;
    cfg.crop = 16;
    cfg.batch = 4;
    cfg.seed = 5;
    auto session = make_session(std::move(pipe), cfg);
    TrainResult result = run_training(session, manifest, dir.string(), cfg);
    REQUIRE(result.epoch_mean_loss.size() == 25);
    CHECK(result.epoch_mean_loss.back() < result.epoch_mean_loss.front());
    fs::remove_all(dir);
}

TEST_CASE("same seed gives identical loss trajectories") {
    DatasetManifest manifest;
    const fs::path dir = make_micro_dataset("omnirestore_train_det", 1, 16, 7, &manifest);
    auto run = [&] {
        auto pipe = Pipeline<float>::seeded(micro_config(), 21);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.lr = 1e-3f;
        cfg.crop = 16;
        cfg.batch = 4;
        cfg.seed = 77;
        auto session = make_session(std::move(pipe), cfg);
        return run_training(session, manifest, dir.string(), cfg).epoch_mean_loss;
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    fs::remove_all(dir);
}

TEST_CASE("training leaves the frozen encoder bitwise unchanged") {
    DatasetManifest manifest;
    const fs::path dir = make_micro_dataset("omnirestore_train_frozen", 1, 16, 9, &manifest);
    auto pipe = Pipeline<float>::seeded(micro_config(), 31);
    ParamMap<float> enc_params;
    pipe.encoder.collect(enc_params, "encoder");
    const std::vector<float> before = concat_values(enc_params);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.lr = 1e-3f;
    cfg.crop = 16;
    cfg.batch = 4;
    cfg.seed = 1;
    auto session = make_session(std::move(pipe), cfg);
    run_training(session, manifest, dir.string(), cfg);

    ParamMap<float> after_params;
    session.pipe.encoder.collect(after_params, "encoder");
    const std::vector<float> after = concat_values(after_params);
    REQUIRE(before.size() == after.size());
    for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
    fs::remove_all(dir);
}

TEST_CASE("a poisoned parameter aborts with a numeric error") {
    DatasetManifest manifest;
    const fs::path dir = make_micro_dataset("omnirestore_train_nan", 1, 16, 13, &manifest);
    auto pipe = Pipeline<float>::seeded(micro_config(), 41);
    pipe.net.embed_w.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.crop = 16;
    cfg.batch = 2;
    auto session = make_session(std::move(pipe), cfg);
    CHECK_THROWS_AS(run_training(session, manifest, dir.string(), cfg), Error);
    fs::remove_all(dir);
}

TEST_CASE("unreadable files name the offending row") {
    DatasetManifest manifest;
    manifest.version = "x";
    ManifestRow row;
    row.id = "missing_row";
    row.clean = "clean/nope.ppm";
    row.degraded = "degraded/nope.ppm";
    row.labels = {"haze"};
    manifest.rows.push_back(row);
    auto pipe = Pipeline<float>::seeded(micro_config(), 51);
    TrainConfig cfg;
    cfg.crop = 16;
    auto session = make_session(std::move(pipe), cfg);
    CHECK_THROWS_WITH_AS(run_training(session, manifest, "/tmp/omnirestore_noexist", cfg),
                         doctest::Contains("missing_row"), IoError);
}

TEST_CASE("crop must divide the model and encoder granularity") {
    auto pipe = Pipeline<float>::seeded(micro_config(), 61);
    TrainConfig cfg;
    cfg.crop = 12;  // not divisible by encoder patch 8
    DatasetManifest manifest;
    manifest.rows.push_back({});
    auto session = make_session(std::move(pipe), cfg);
    CHECK_THROWS_AS(run_training(session, manifest, "/tmp", cfg), ConfigError);
}

TEST_CASE("evaluate on stub restorers: identity equals degraded metrics") {
    DatasetManifest manifest;
    const fs::path dir = make_micro_dataset("omnirestore_eval_stub", 1, 16, 15, &manifest);
    // untrained pipeline has a zero head, so restore is exactly the identity
    auto pipe = Pipeline<float>::seeded(micro_config(), 71);
    EvalReport report = evaluate(pipe, manifest, dir.string());
    REQUIRE(report.images.size() == manifest.rows.size());
    for (const auto& row : report.images) {
        CHECK(row.psnr_restored == doctest::Approx(row.psnr_degraded).epsilon(1e-3));
        CHECK(row.ssim_restored == doctest::Approx(row.ssim_degraded).epsilon(1e-3));
    }
    CHECK(report.overall.count == static_cast<int>(manifest.rows.size()));

    CHECK_THROWS_AS(evaluate(pipe, DatasetManifest{}, dir.string()), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("evaluate with oracle weights reports the psnr cap") {
    // restored == clean when the "degraded" file equals the clean file
    DatasetManifest manifest;
    const fs::path dir = make_micro_dataset("omnirestore_eval_oracle", 1, 16, 17, &manifest);
    for (auto& row : manifest.rows) row.degraded = row.clean;
    auto pipe = Pipeline<float>::seeded(micro_config(), 81);
    EvalReport report = evaluate(pipe, manifest, dir.string());
    for (const auto& row : report.images) {
        CHECK(row.psnr_restored == 100.0);
        CHECK(row.ssim_restored == doctest::Approx(1.0).epsilon(1e-6));
    }
    fs::remove_all(dir);
}

TEST_SUITE_END();
