#pragma once

#include "omnirestore/optim.hpp"
#include "omnirestore/pipeline.hpp"

namespace omnirestore {

// Binary container: magic "OMNR", u32 format version, the config as a JSON
// blob, then length-prefixed named float32 tensors in little-endian order,
// optional Adam state, the trainer RNG state, epoch counter, and seed.
// Save -> load -> save reproduces the file byte for byte.

constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainerState {
    Adam<float> opt;
    Rng rng;
    int epoch = 0;  // completed epochs
};

void save_encoder_checkpoint(const std::string& path, DescriptorEncoder<float>& enc,
                             std::uint64_t seed);
DescriptorEncoder<float> load_encoder_checkpoint(const std::string& path);

void save_pipeline_checkpoint(const std::string& path, Pipeline<float>& pipe,
                              const TrainerState* state, std::uint64_t seed);
Pipeline<float> load_pipeline_checkpoint(const std::string& path, TrainerState* state_out = nullptr,
                                         std::uint64_t* seed_out = nullptr);

}  // namespace omnirestore
