#include <doctest.h>

#include <filesystem>

#include "omnirestore/error.hpp"
#include "omnirestore/image_io.hpp"
#include "omnirestore/train.hpp"
#include "test_util.hpp"

using namespace omnirestore;
using omnirestore::testutil::make_micro_dataset;
using omnirestore::testutil::micro_config;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("encoder checkpoints reproduce embeddings exactly") {
    const fs::path dir = fs::temp_directory_path() / "omnirestore_ckpt_enc";
    fs::create_directories(dir);
    const std::string path = (dir / "enc.ckpt").string();

    DescriptorEncoder<float> enc;
    Rng rng(3);
    EncoderConfig cfg;
    enc.init(cfg, rng);
    enc.set_trainable(false);
    save_encoder_checkpoint(path, enc, 42);

    DescriptorEncoder<float> back = load_encoder_checkpoint(path);
    ImageBuffer img = procedural_base_image(32, 4);
    TensorF a = enc.encode_image(img);
    TensorF b = back.encode_image(img);
    REQUIRE(a.shape() == b.shape());
    for (long i = 0; i < a.numel(); ++i)
        CHECK(a.data()[static_cast<size_t>(i)] == b.data()[static_cast<size_t>(i)]);
    fs::remove_all(dir);
}

TEST_CASE("pipeline checkpoint round-trip is bitwise stable") {
    const fs::path dir = fs::temp_directory_path() / "omnirestore_ckpt_pipe";
    fs::create_directories(dir);
    const std::string path = (dir / "pipe.ckpt").string();
    const std::string path2 = (dir / "pipe2.ckpt").string();

    auto pipe = Pipeline<float>::seeded(micro_config(), 9);
    Rng rng(5);
    for (auto& v : pipe.net.head_w.mutable_data()) v = static_cast<float>(rng.normal(0, 0.01));
    save_pipeline_checkpoint(path, pipe, nullptr, 123);

    std::uint64_t seed = 0;
    Pipeline<float> back = load_pipeline_checkpoint(path, nullptr, &seed);
    CHECK(seed == 123);
    CHECK(back.bank.texts == pipe.bank.texts);  // memory bank order round-trips

    ImageBuffer img = procedural_base_image(16, 6);
    ImageBuffer a = pipe.restore(img);
    ImageBuffer b = back.restore(img);
    REQUIRE(a.data.size() == b.data.size());
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);

    // save -> load -> save reproduces the file bytes
    save_pipeline_checkpoint(path2, back, nullptr, seed);
    CHECK(read_file_bytes(path) == read_file_bytes(path2));
    fs::remove_all(dir);
}

TEST_CASE("corrupt magic bytes are rejected") {
    const fs::path dir = fs::temp_directory_path() / "omnirestore_ckpt_bad";
    fs::create_directories(dir);
    const std::string path = (dir / "bad.ckpt").string();
    write_file_bytes(path, {'N', 'O', 'P', 'E', 0, 0, 0, 0});
    CHECK_THROWS_AS(load_pipeline_checkpoint(path), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("resume reproduces the uninterrupted trajectory exactly") {
    DatasetManifest manifest;
    const fs::path dir = make_micro_dataset("omnirestore_resume_data", 1, 16, 23, &manifest);
    const fs::path out_a = fs::temp_directory_path() / "omnirestore_resume_a";
    const fs::path out_b = fs::temp_directory_path() / "omnirestore_resume_b";
    fs::remove_all(out_a);
    fs::remove_all(out_b);

    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.lr = 1e-3f;
    cfg.crop = 16;
    cfg.batch = 4;
    cfg.seed = 99;
    cfg.checkpoint_every = 3;

    // uninterrupted
    cfg.out_dir = out_a.string();
    auto sa = make_session(Pipeline<float>::seeded(micro_config(), 13), cfg);
    TrainResult ra = run_training(sa, manifest, dir.string(), cfg);

    // stop after 3 epochs, then resume from the checkpoint
    TrainConfig half = cfg;
    half.epochs = 3;
    half.out_dir = out_b.string();
    auto sb = make_session(Pipeline<float>::seeded(micro_config(), 13), cfg);
    TrainResult rb1 = run_training(sb, manifest, dir.string(), half);
    REQUIRE(!rb1.final_checkpoint.empty());

    TrainConfig rest = cfg;
    rest.out_dir = out_b.string();
    auto sc = resume_session(rb1.final_checkpoint, rest);
    CHECK(sc.state.epoch == 3);
    TrainResult rb2 = run_training(sc, manifest, dir.string(), rest);

    REQUIRE(ra.epoch_mean_loss.size() == 6);
    REQUIRE(rb2.epoch_mean_loss.size() == 3);
    for (int e = 0; e < 3; ++e)
        CHECK(ra.epoch_mean_loss[static_cast<size_t>(e + 3)] ==
              rb2.epoch_mean_loss[static_cast<size_t>(e)]);

    // final weights bitwise identical
    ParamMap<float> pa = sa.pipe.all_params();
    ParamMap<float> pc = sc.pipe.all_params();
    REQUIRE(pa.items.size() == pc.items.size());
    for (size_t i = 0; i < pa.items.size(); ++i) {
        REQUIRE(pa.items[i].first == pc.items[i].first);
        const auto& va = pa.items[i].second.data();
        const auto& vc = pc.items[i].second.data();
        REQUIRE(va.size() == vc.size());
        for (size_t j = 0; j < va.size(); ++j) CHECK(va[j] == vc[j]);
    }
    fs::remove_all(dir);
    fs::remove_all(out_a);
    fs::remove_all(out_b);
}

TEST_SUITE_END();
