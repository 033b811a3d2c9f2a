#include "omnirestore/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "omnirestore/error.hpp"
#include "omnirestore/image_io.hpp"
#include "omnirestore/metrics.hpp"

namespace fs = std::filesystem;

namespace omnirestore {

void TrainConfig::validate(int model_divisibility, int encoder_patch) const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr > 0)) throw ConfigError("train: lr must be positive");
    if (perceptual_weight < 0) throw ConfigError("train: perceptual weight must be >= 0");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
    if (crop % model_divisibility || crop % encoder_patch)
        throw ConfigError("train: crop " + std::to_string(crop) + " must be divisible by " +
                          std::to_string(model_divisibility) + " (model) and " +
                          std::to_string(encoder_patch) + " (encoder patch)");
}

template <class S>
Tensor<S> perceptual_proxy(const DescriptorEncoder<S>& enc, const Tensor<S>& pred,
                           const Tensor<S>& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("perceptual_proxy: shapes differ: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    Tensor<S> tp = enc.encode_image(pred);
    Tensor<S> tt = enc.encode_image(target.detached());
    const int l = tp.dim(0);
    Tensor<S> dp = slice(tp, 0, 1, l - 1);  // patch tokens only
    Tensor<S> dt = slice(tt, 0, 1, l - 1);
    Tensor<S> d = sub(dp, dt);
    return mean_all(mul(d, d));
}

template <class S>
Tensor<S> loss_total(const DescriptorEncoder<S>& enc, const Tensor<S>& pred,
                     const Tensor<S>& target, S perceptual_weight) {
    if (pred.shape() != target.shape())
        throw ShapeError("loss_total: shapes differ: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    Tensor<S> base = smooth_l1(pred, target, S(1));
    if (perceptual_weight == S(0)) return base;
    return add(base, scale(perceptual_proxy(enc, pred, target), perceptual_weight));
}

TrainSession make_session(Pipeline<float> pipe, const TrainConfig& cfg) {
    TrainSession s;
    s.pipe = std::move(pipe);
    s.seed = cfg.seed;
    s.state.rng = Rng(mix_seed(cfg.seed, 0x7ea1));
    s.state.epoch = 0;
    s.state.opt.lr = cfg.lr;
    s.state.opt.beta1 = cfg.beta1;
    s.state.opt.beta2 = cfg.beta2;
    s.state.opt.eps = cfg.adam_eps;
    s.state.opt.attach(s.pipe.trainable_params());
    return s;
}

TrainSession resume_session(const std::string& checkpoint_path, const TrainConfig& cfg) {
    TrainSession s;
    s.pipe = load_pipeline_checkpoint(checkpoint_path, &s.state, &s.seed);
    s.state.opt.lr = cfg.lr;
    s.state.opt.beta1 = cfg.beta1;
    s.state.opt.beta2 = cfg.beta2;
    s.state.opt.eps = cfg.adam_eps;
    return s;
}

namespace {

struct Sample {
    ImageBuffer clean;
    ImageBuffer degraded;
    std::string id;
};

std::vector<Sample> load_pairs(const DatasetManifest& manifest, const std::string& data_root) {
    std::vector<Sample> out;
    out.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows) {
        Sample s;
        s.id = row.id;
        try {
            s.clean = read_image((fs::path(data_root) / row.clean).string());
            s.degraded = read_image((fs::path(data_root) / row.degraded).string());
        } catch (const Error& e) {
            throw IoError("row '" + row.id + "': " + e.what());
        }
        if (s.clean.height != s.degraded.height || s.clean.width != s.degraded.width)
            throw DatasetError("row '" + row.id + "': clean and degraded extents differ");
        out.push_back(std::move(s));
    }
    return out;
}

ImageBuffer crop_image(const ImageBuffer& img, int y0, int x0, int size) {
    ImageBuffer out(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

}  // namespace

TrainResult run_training(TrainSession& session, const DatasetManifest& manifest,
                         const std::string& data_root, const TrainConfig& cfg) {
    cfg.validate(session.pipe.cfg.divisibility(), session.pipe.cfg.encoder.patch);
    if (manifest.rows.empty()) throw ConfigError("train: empty manifest");
    auto data = load_pairs(manifest, data_root);
    for (const auto& s : data)
        if (s.clean.height < cfg.crop || s.clean.width < cfg.crop)
            throw DatasetError("row '" + s.id + "' smaller than crop " + std::to_string(cfg.crop));

    std::ofstream loss_log;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        loss_log.open((fs::path(cfg.out_dir) / "loss_log.csv").string(),
                      session.state.epoch > 0 ? std::ios::app : std::ios::trunc);
        if (!loss_log) throw IoError("cannot open loss log under " + cfg.out_dir);
    }

    TrainResult result;
    Rng& rng = session.state.rng;
    Adam<float>& opt = session.state.opt;
    long step = static_cast<long>(session.state.epoch) *
                ((static_cast<long>(data.size()) + cfg.batch - 1) / cfg.batch);

    for (; session.state.epoch < cfg.epochs; ++session.state.epoch) {
        const int epoch = session.state.epoch;
        std::vector<size_t> order(data.size());
        std::iota(order.begin(), order.end(), size_t{0});
        for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

        double epoch_loss = 0;
        long epoch_steps = 0;
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch)) {
            const size_t end = std::min(order.size(), at + static_cast<size_t>(cfg.batch));
            const int b = static_cast<int>(end - at);

            // crop corners drawn sequentially so the RNG stream is stable
            std::vector<std::pair<int, int>> corners(static_cast<size_t>(b));
            for (int i = 0; i < b; ++i) {
                const Sample& s = data[order[at + static_cast<size_t>(i)]];
                corners[static_cast<size_t>(i)] = {
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(s.clean.height - cfg.crop + 1))),
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(s.clean.width - cfg.crop + 1)))};
            }

            std::vector<TensorF> losses(static_cast<size_t>(b));
            std::vector<std::string> failures(static_cast<size_t>(b));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
            for (int i = 0; i < b; ++i) {
                try {
                    const Sample& s = data[order[at + static_cast<size_t>(i)]];
                    const auto [y0, x0] = corners[static_cast<size_t>(i)];
                    TensorF degraded =
                        image_to_tensor<float>(crop_image(s.degraded, y0, x0, cfg.crop));
                    TensorF clean = image_to_tensor<float>(crop_image(s.clean, y0, x0, cfg.crop));
                    TensorF pred = session.pipe.forward(degraded);
                    losses[static_cast<size_t>(i)] =
                        loss_total(session.pipe.encoder, pred, clean, cfg.perceptual_weight);
                } catch (const std::exception& e) {
                    failures[static_cast<size_t>(i)] = e.what();
                }
            }
            for (const auto& f : failures)
                if (!f.empty()) throw Error("train step failed: " + f);

            TensorF total = losses[0];
            for (int i = 1; i < b; ++i) total = add(total, losses[static_cast<size_t>(i)]);
            total = scale(total, 1.f / static_cast<float>(b));

            const double loss_value = static_cast<double>(total.item());
            if (!std::isfinite(loss_value)) {
                total.backward();
                char msg[160];
                std::snprintf(msg, sizeof(msg),
                              "train: non-finite loss at step %ld (lr=%.3g, grad-norm=%.3g)",
                              step, static_cast<double>(opt.lr), opt.grad_norm());
                throw NumericError(msg);
            }
            opt.zero_grad();
            total.backward();
            opt.clip_grad_norm(cfg.max_grad_norm);
            opt.step();

            if (loss_log.is_open()) loss_log << epoch << ',' << step << ',' << loss_value << '\n';
            epoch_loss += loss_value;
            ++epoch_steps;
            ++step;
        }
        result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(std::max(1L, epoch_steps)));
        if (loss_log.is_open()) loss_log.flush();

        const bool last = epoch + 1 == cfg.epochs;
        if (!cfg.out_dir.empty() && ((epoch + 1) % cfg.checkpoint_every == 0 || last)) {
            const std::string path =
                (fs::path(cfg.out_dir) / ("ckpt_epoch_" + std::to_string(epoch + 1) + ".ckpt"))
                    .string();
            TrainerState to_save = {opt, rng, epoch + 1};
            save_pipeline_checkpoint(path, session.pipe, &to_save, session.seed);
            result.checkpoints.emplace_back(epoch + 1, path);
            if (last) result.final_checkpoint = path;
        }
    }
    return result;
}

EvalReport evaluate(const Pipeline<float>& pipe, const DatasetManifest& manifest,
                    const std::string& data_root, bool timing) {
    if (manifest.rows.empty()) throw ConfigError("evaluate: empty split");
    auto data = load_pairs(manifest, data_root);

    EvalReport report;
    report.images.resize(data.size());
    std::vector<std::string> failures(data.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (long i = 0; i < static_cast<long>(data.size()); ++i) {
        try {
            const Sample& s = data[static_cast<size_t>(i)];
            EvalImageRow row;
            row.id = s.id;
            std::string recipe;
            for (const auto& lab : manifest.rows[static_cast<size_t>(i)].labels) {
                if (!recipe.empty()) recipe += '+';
                recipe += lab;
            }
            row.recipe = recipe;
            const auto t0 = std::chrono::steady_clock::now();
            ImageBuffer restored = pipe.restore(s.degraded);
            const auto t1 = std::chrono::steady_clock::now();
            row.millis = std::chrono::duration<double, std::milli>(t1 - t0).count();
            row.psnr_restored = psnr(restored, s.clean);
            row.psnr_degraded = psnr(s.degraded, s.clean);
            row.ssim_restored = ssim(restored, s.clean);
            row.ssim_degraded = ssim(s.degraded, s.clean);
            report.images[static_cast<size_t>(i)] = std::move(row);
        } catch (const std::exception& e) {
            failures[static_cast<size_t>(i)] = e.what();
        }
    }
    for (size_t i = 0; i < failures.size(); ++i)
        if (!failures[i].empty())
            throw Error("evaluate: row '" + data[i].id + "': " + failures[i]);
    (void)timing;

    auto add_to = [](EvalSummaryRow& sum, const EvalImageRow& row) {
        ++sum.count;
        sum.psnr_restored += row.psnr_restored;
        sum.psnr_degraded += row.psnr_degraded;
        sum.ssim_restored += row.ssim_restored;
        sum.ssim_degraded += row.ssim_degraded;
    };
    auto finish = [](EvalSummaryRow& sum) {
        if (!sum.count) return;
        sum.psnr_restored /= sum.count;
        sum.psnr_degraded /= sum.count;
        sum.ssim_restored /= sum.count;
        sum.ssim_degraded /= sum.count;
    };

    for (const auto& row : report.images) {
        add_to(report.overall, row);
        auto it = std::find_if(report.per_recipe.begin(), report.per_recipe.end(),
                               [&](const EvalSummaryRow& r) { return r.recipe == row.recipe; });
        if (it == report.per_recipe.end()) {
            report.per_recipe.push_back({});
            report.per_recipe.back().recipe = row.recipe;
            it = report.per_recipe.end() - 1;
        }
        add_to(*it, row);
    }
    finish(report.overall);
    for (auto& r : report.per_recipe) finish(r);
    report.overall.recipe = "overall";
    std::sort(report.per_recipe.begin(), report.per_recipe.end(),
              [](const EvalSummaryRow& a, const EvalSummaryRow& b) { return a.recipe < b.recipe; });
    return report;
}

std::string eval_report_text(const EvalReport& report, bool timing) {
    char line[256];
    std::string out;
    out += "recipe                     n   PSNR(rest)  PSNR(degr)  SSIM(rest)  SSIM(degr)\n";
    auto fmt = [&](const EvalSummaryRow& r) {
        std::snprintf(line, sizeof(line), "%-24s %4d  %10.2f  %10.2f  %10.4f  %10.4f\n",
                      r.recipe.c_str(), r.count, r.psnr_restored, r.psnr_degraded, r.ssim_restored,
                      r.ssim_degraded);
        out += line;
    };
    for (const auto& r : report.per_recipe) fmt(r);
    fmt(report.overall);
    if (timing) {
        double total = 0;
        for (const auto& row : report.images) total += row.millis;
        std::snprintf(line, sizeof(line), "mean wall-clock per image: %.1f ms\n",
                      report.images.empty() ? 0.0 : total / static_cast<double>(report.images.size()));
        out += line;
    }
    return out;
}

template Tensor<float> perceptual_proxy<float>(const DescriptorEncoder<float>&,
                                               const Tensor<float>&, const Tensor<float>&);
template Tensor<double> perceptual_proxy<double>(const DescriptorEncoder<double>&,
                                                 const Tensor<double>&, const Tensor<double>&);
template Tensor<float> loss_total<float>(const DescriptorEncoder<float>&, const Tensor<float>&,
                                         const Tensor<float>&, float);
template Tensor<double> loss_total<double>(const DescriptorEncoder<double>&, const Tensor<double>&,
                                           const Tensor<double>&, double);

}  // namespace omnirestore
