#pragma once

#include <filesystem>

#include "omnirestore/degrade.hpp"
#include "omnirestore/pipeline.hpp"

namespace omnirestore::testutil {

// Smallest config that exercises every code path: one scale, one block,
// 16x16-friendly extents.
inline ModelConfig micro_config() {
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

// A throwaway dataset under the system temp dir; caller removes it.
inline std::filesystem::path make_micro_dataset(const char* name, int per_recipe, int size,
                                                std::uint64_t seed,
                                                DatasetManifest* manifest_out = nullptr) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    GenConfig cfg;
    cfg.out_dir = dir.string();
    cfg.per_recipe = per_recipe;
    cfg.size = size;
    cfg.seed = seed;
    DatasetManifest m = generate_dataset(cfg);
    if (manifest_out) *manifest_out = std::move(m);
    return dir;
}

}  // namespace omnirestore::testutil
