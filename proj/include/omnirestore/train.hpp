#pragma once

#include "omnirestore/checkpoint.hpp"
#include "omnirestore/degrade.hpp"

namespace omnirestore {

struct TrainConfig {
    int epochs = 30;
    float lr = 1.25e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_eps = 1e-8f;
    int crop = 64;
    int batch = 4;
    float perceptual_weight = 0.04f;
    float max_grad_norm = 1.0f;  // global-norm gradient clip; <= 0 disables
    int checkpoint_every = 10;   // epochs
    std::uint64_t seed = 0;
    std::string out_dir;  // empty disables checkpoints and the loss log

    void validate(int model_divisibility, int encoder_patch) const;
};

// Feature-space distance between frozen-encoder patch tokens of pred and
// target (the summary token excluded), mean squared.
template <class S>
Tensor<S> perceptual_proxy(const DescriptorEncoder<S>& enc, const Tensor<S>& pred,
                           const Tensor<S>& target);

// smooth_l1 + w_p * perceptual_proxy.
template <class S>
Tensor<S> loss_total(const DescriptorEncoder<S>& enc, const Tensor<S>& pred,
                     const Tensor<S>& target, S perceptual_weight);

struct TrainSession {
    Pipeline<float> pipe;
    TrainerState state;
    std::uint64_t seed = 0;
};

TrainSession make_session(Pipeline<float> pipe, const TrainConfig& cfg);
TrainSession resume_session(const std::string& checkpoint_path, const TrainConfig& cfg);

struct TrainResult {
    std::vector<double> epoch_mean_loss;
    std::vector<std::pair<int, std::string>> checkpoints;  // (epoch, path)
    std::string final_checkpoint;
};

// Random-crop batches, Adam on the restorer and descriptor projections only,
// per-step loss log lines "epoch,step,loss", checkpoint every
// cfg.checkpoint_every epochs. Seed-deterministic, resumable mid-run.
TrainResult run_training(TrainSession& session, const DatasetManifest& manifest,
                         const std::string& data_root, const TrainConfig& cfg);

struct EvalImageRow {
    std::string id;
    std::string recipe;
    double psnr_restored = 0, psnr_degraded = 0;
    double ssim_restored = 0, ssim_degraded = 0;
    double millis = 0;
};

struct EvalSummaryRow {
    std::string recipe;
    int count = 0;
    double psnr_restored = 0, psnr_degraded = 0;
    double ssim_restored = 0, ssim_degraded = 0;
};

struct EvalReport {
    std::vector<EvalImageRow> images;
    std::vector<EvalSummaryRow> per_recipe;
    EvalSummaryRow overall;
};

EvalReport evaluate(const Pipeline<float>& pipe, const DatasetManifest& manifest,
                    const std::string& data_root, bool timing = false);
std::string eval_report_text(const EvalReport& report, bool timing = false);
void write_eval_report_json(const EvalReport& report, const std::string& path);

}  // namespace omnirestore
