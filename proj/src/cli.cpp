#include "omnirestore/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "omnirestore/degrade.hpp"
#include "omnirestore/error.hpp"
#include "omnirestore/image_io.hpp"
#include "omnirestore/selftest.hpp"
#include "omnirestore/train.hpp"

namespace fs = std::filesystem;

namespace omnirestore {

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const size_t a = s.find_first_not_of(" \t\r");
            const size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

namespace {

// flags > config file > defaults
struct Resolver {
    const CLI::App* cmd;
    const std::map<std::string, std::string>& config;

    template <class T>
    T pick(const std::string& flag, const T& cli_value, const T& fallback) const {
        const CLI::Option* opt = cmd->get_option("--" + flag);
        if (opt && opt->count() > 0) return cli_value;
        auto it = config.find(flag);
        if (it == config.end()) return fallback;
        std::istringstream is(it->second);
        T v;
        if constexpr (std::is_same_v<T, std::string>) {
            v = it->second;
        } else if constexpr (std::is_same_v<T, bool>) {
            v = it->second == "1" || it->second == "true" || it->second == "yes";
        } else {
            if (!(is >> v)) throw ParseError("config value for '" + flag + "' is not parseable");
        }
        return v;
    }
};

ModelConfig desk_config(int k) {
    ModelConfig cfg;
    cfg.k = k;
    return cfg;
}

void require_out_dir(const std::string& out) {
    if (out.empty()) throw ConfigError("--out directory is required");
    fs::create_directories(out);
}

int run_degrade(const std::string& out, std::uint64_t seed, int count, int size,
                const std::string& base) {
    require_out_dir(out);
    GenConfig cfg;
    cfg.out_dir = out;
    cfg.base_dir = base;
    cfg.per_recipe = count;
    cfg.size = size;
    cfg.seed = seed;
    DatasetManifest manifest = generate_dataset(cfg);
    std::printf("wrote %zu rows under %s\n", manifest.rows.size(), out.c_str());
    return 0;
}

int run_pretrain(const std::string& data, const std::string& out, std::uint64_t seed, int epochs,
                 float lr, int batch) {
    require_out_dir(out);
    DatasetManifest manifest = read_manifest(data);
    // keep only single-degradation rows; composites are not part of alignment
    DatasetManifest singles;
    singles.version = manifest.version;
    singles.seed = manifest.seed;
    for (const auto& row : manifest.rows)
        if (row.labels.size() == 1) singles.rows.push_back(row);
    if (singles.rows.empty()) throw DatasetError("no single-degradation rows in " + data);

    DescriptorEncoder<float> enc;
    Rng rng(mix_seed(seed, 0xa11c));
    EncoderConfig ecfg;
    enc.init(ecfg, rng);

    AlignConfig acfg;
    acfg.epochs = epochs;
    acfg.lr = lr;
    acfg.batch = batch;
    acfg.seed = seed;
    AlignReport report = align_pretrain(enc, singles, fs::path(data).parent_path().string(), acfg);

    const std::string ckpt = (fs::path(out) / "encoder.ckpt").string();
    save_encoder_checkpoint(ckpt, enc, seed);

    std::ofstream rep((fs::path(out) / "align_report.txt").string(), std::ios::trunc);
    rep << "holdout contrastive loss\n";
    rep << "  initial: " << report.init_holdout_loss << "\n";
    rep << "  final:   " << report.final_holdout_loss << "\n";
    rep << "per-epoch train loss\n";
    for (size_t e = 0; e < report.epoch_train_loss.size(); ++e)
        rep << "  epoch " << e << ": " << report.epoch_train_loss[e] << "\n";
    std::printf("encoder saved to %s (holdout loss %.4f -> %.4f)\n", ckpt.c_str(),
                report.init_holdout_loss, report.final_holdout_loss);
    return 0;
}

int run_train(const std::string& data, const std::string& out, const std::string& encoder_ckpt,
              const std::string& resume_ckpt, const TrainConfig& base_cfg, int k,
              bool uniform_weights) {
    require_out_dir(out);
    DatasetManifest manifest = read_manifest(data);
    const std::string root = fs::path(data).parent_path().string();

    TrainConfig cfg = base_cfg;
    cfg.out_dir = out;

    TrainSession session;
    if (!resume_ckpt.empty()) {
        session = resume_session(resume_ckpt, cfg);
    } else {
        if (encoder_ckpt.empty())
            throw ConfigError("train needs --encoder (aligned weights) or --ckpt (resume)");
        Pipeline<float> pipe = Pipeline<float>::seeded(desk_config(k), cfg.seed);
        DescriptorEncoder<float> enc = load_encoder_checkpoint(encoder_ckpt);
        if (enc.cfg.embed_dim != pipe.cfg.encoder.embed_dim)
            throw ConfigError("encoder checkpoint embed_dim mismatch");
        pipe.encoder = std::move(enc);
        pipe.encoder.set_trainable(false);
        pipe.bank.refresh(pipe.encoder);
        pipe.force_uniform_weights = uniform_weights;
        session = make_session(std::move(pipe), cfg);
    }

    TrainResult result = run_training(session, manifest, root, cfg);
    std::printf("trained to epoch %d; final checkpoint: %s\n", cfg.epochs,
                result.final_checkpoint.c_str());
    const size_t first = static_cast<size_t>(cfg.epochs) - result.epoch_mean_loss.size();
    for (size_t e = 0; e < result.epoch_mean_loss.size(); ++e)
        std::printf("epoch %zu mean loss %.6f\n", first + e, result.epoch_mean_loss[e]);
    return 0;
}

int run_restore(const std::string& ckpt, const std::string& out,
                const std::vector<std::string>& inputs, bool debug_descriptors, bool timing) {
    require_out_dir(out);
    if (inputs.empty()) throw ConfigError("restore: no input images given");
    Pipeline<float> pipe = load_pipeline_checkpoint(ckpt);
    for (const auto& input : inputs) {
        const auto t0 = std::chrono::steady_clock::now();
        ImageBuffer img = read_image(input);
        Pipeline<float>::DescriptorSet debug;
        ImageBuffer restored = pipe.restore(img, debug_descriptors ? &debug : nullptr);
        const std::string name = fs::path(input).filename().string();
        write_image(restored, (fs::path(out) / name).string());
        const auto t1 = std::chrono::steady_clock::now();
        if (timing)
            std::printf("%s: %.1f ms\n", name.c_str(),
                        std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (debug_descriptors) {
            std::ofstream rep((fs::path(out) / (name + ".descriptors.txt")).string(),
                              std::ios::trunc);
            rep << "adaptive weights\n";
            for (int i = 0; i < pipe.bank.size(); ++i)
                rep << "  " << pipe.bank.texts[static_cast<size_t>(i)] << ": "
                    << debug.weights[static_cast<size_t>(i)] << "\n";
            rep << "top-k token indices\n";
            for (int i = 0; i < pipe.bank.size(); ++i) {
                rep << "  " << pipe.bank.texts[static_cast<size_t>(i)] << ":";
                for (int idx : debug.topk_indices[static_cast<size_t>(i)]) rep << ' ' << idx;
                rep << "\n";
            }
        }
    }
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& data, const std::string& out,
             bool timing) {
    require_out_dir(out);
    Pipeline<float> pipe = load_pipeline_checkpoint(ckpt);
    DatasetManifest manifest = read_manifest(data);
    EvalReport report = evaluate(pipe, manifest, fs::path(data).parent_path().string(), timing);
    const std::string text = eval_report_text(report, timing);
    std::fputs(text.c_str(), stdout);
    std::ofstream rep((fs::path(out) / "eval_report.txt").string(), std::ios::trunc);
    rep << text;
    write_eval_report_json(report, (fs::path(out) / "eval_report.json").string());
    return 0;
}

int run_selftest() {
    bool all = true;
    for (const auto& r : run_selftests()) {
        std::printf("[%s] %s (%s)\n", r.passed ? "PASS" : "FAIL", r.suite.c_str(),
                    r.detail.c_str());
        all = all && r.passed;
    }
    return all ? 0 : 2;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"all-in-one composite degradation image restoration"};
    app.require_subcommand(1);

    std::string config_path, out, data, base, ckpt, encoder_ckpt;
    std::uint64_t seed = 0;
    int count = 4, size = 64, epochs = -1, batch = -1, crop = 64, k = 10;
    float lr = -1.f;
    bool debug_descriptors = false, timing = false, uniform_weights = false;
    std::vector<std::string> inputs;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "global random seed");
        cmd->add_option("--config", config_path, "flat key=value config file");
        cmd->add_option("--out", out, "output directory");
    };

    CLI::App* degrade = app.add_subcommand("degrade", "generate a synthetic paired dataset");
    add_common(degrade);
    degrade->add_option("--count", count, "samples per recipe (11 recipes)");
    degrade->add_option("--size", size, "generated image extent");
    degrade->add_option("--base", base, "directory of base images (.ppm/.png)");

    CLI::App* pretrain = app.add_subcommand("pretrain-encoder",
                                            "contrastive alignment on single-degradation data");
    add_common(pretrain);
    pretrain->add_option("--data", data, "dataset manifest (jsonl)");
    pretrain->add_option("--epochs", epochs, "alignment epochs");
    pretrain->add_option("--lr", lr, "learning rate");
    pretrain->add_option("--batch", batch, "batch size");

    CLI::App* train_cmd = app.add_subcommand("train", "train the restorer");
    add_common(train_cmd);
    train_cmd->add_option("--data", data, "dataset manifest (jsonl)");
    train_cmd->add_option("--encoder", encoder_ckpt, "aligned encoder checkpoint");
    train_cmd->add_option("--ckpt", ckpt, "resume from a pipeline checkpoint");
    train_cmd->add_option("--epochs", epochs, "training epochs");
    train_cmd->add_option("--lr", lr, "learning rate");
    train_cmd->add_option("--crop", crop, "random crop size");
    train_cmd->add_option("--batch", batch, "batch size");
    train_cmd->add_option("--k", k, "sampled image tokens per descriptor");
    train_cmd->add_flag("--uniform-weights", uniform_weights,
                        "replace adaptive weights with uniform 1/n");

    CLI::App* restore_cmd = app.add_subcommand("restore", "restore degraded images");
    add_common(restore_cmd);
    restore_cmd->add_option("--ckpt", ckpt, "pipeline checkpoint");
    restore_cmd->add_option("inputs", inputs, "degraded images");
    restore_cmd->add_flag("--debug-descriptors", debug_descriptors,
                          "write per-image weights and token indices");
    restore_cmd->add_flag("--timing", timing, "report per-image wall-clock");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    add_common(eval_cmd);
    eval_cmd->add_option("--ckpt", ckpt, "pipeline checkpoint");
    eval_cmd->add_option("--data", data, "dataset manifest (jsonl)");
    eval_cmd->add_flag("--timing", timing, "report mean per-image wall-clock");

    CLI::App* selftest_cmd = app.add_subcommand("selftest", "run the built-in oracle suites");
    (void)selftest_cmd;

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        std::cerr << app.help();
        return 1;
    }

    try {
        CLI::App* cmd = app.get_subcommands().front();
        std::map<std::string, std::string> config;
        if (!config_path.empty()) config = read_config_file(config_path);
        Resolver r{cmd, config};

        if (cmd == degrade) {
            return run_degrade(r.pick<std::string>("out", out, ""), r.pick("seed", seed, {0}),
                               r.pick("count", count, 4), r.pick("size", size, 64),
                               r.pick<std::string>("base", base, ""));
        }
        if (cmd == pretrain) {
            return run_pretrain(r.pick<std::string>("data", data, ""),
                                r.pick<std::string>("out", out, ""), r.pick("seed", seed, {0}),
                                r.pick("epochs", epochs, 60), r.pick("lr", lr, 3e-4f),
                                r.pick("batch", batch, 16));
        }
        if (cmd == train_cmd) {
            TrainConfig tcfg;
            tcfg.seed = r.pick("seed", seed, {0});
            tcfg.epochs = r.pick("epochs", epochs, 30);
            tcfg.lr = r.pick("lr", lr, 1.25e-4f);
            tcfg.crop = r.pick("crop", crop, 64);
            tcfg.batch = r.pick("batch", batch, 4);
            return run_train(r.pick<std::string>("data", data, ""),
                             r.pick<std::string>("out", out, ""),
                             r.pick<std::string>("encoder", encoder_ckpt, ""),
                             r.pick<std::string>("ckpt", ckpt, ""), tcfg, r.pick("k", k, 10),
                             r.pick("uniform-weights", uniform_weights, false));
        }
        if (cmd == restore_cmd) {
            return run_restore(r.pick<std::string>("ckpt", ckpt, ""),
                               r.pick<std::string>("out", out, ""), inputs,
                               r.pick("debug-descriptors", debug_descriptors, false),
                               r.pick("timing", timing, false));
        }
        if (cmd == eval_cmd) {
            return run_eval(r.pick<std::string>("ckpt", ckpt, ""),
                            r.pick<std::string>("data", data, ""),
                            r.pick<std::string>("out", out, ""),
                            r.pick("timing", timing, false));
        }
        return run_selftest();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace omnirestore
