#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omnirestore/image.hpp"

namespace omnirestore {

// The four degradation classes, in canonical application order. The index is
// the class identity everywhere downstream (memory bank, adaptive weights).
enum class Degradation : int { LowLight = 0, Haze = 1, Rain = 2, Snow = 3 };

constexpr int kNumDegradations = 4;
constexpr std::array<const char*, 4> kDegradationNames = {"low-light", "haze", "rain", "snow"};

std::optional<Degradation> degradation_from_name(const std::string& name);

struct LowLightParams {
    float scale = 0.35f;  // (0, 1]
    float gamma = 2.0f;   // >= 1
};

struct HazeParams {
    float airlight = 0.9f;      // [0.7, 1.0] in recipes, [0, 1] for the raw op
    float transmission = 0.5f;  // [0.2, 0.9] in recipes, [0, 1] for the raw op
};

struct RainParams {
    int count = 60;
    float length = 12.f;     // px
    float angle_deg = 15.f;  // tilt from vertical
    float opacity = 0.7f;    // [0, 1]
};

struct SnowParams {
    int count = 45;
    float radius = 1.8f;  // px
    float opacity = 0.8f; // [0, 1]
};

struct DegradationRecipe {
    std::array<bool, 4> present = {false, false, false, false};
    LowLightParams low_light;
    HazeParams haze;
    RainParams rain;
    SnowParams snow;
    std::uint64_t seed = 0;

    bool has(Degradation d) const { return present[static_cast<size_t>(d)]; }
    DegradationRecipe& add(Degradation d) {
        present[static_cast<size_t>(d)] = true;
        return *this;
    }
    // Labels in canonical order, e.g. {"low-light", "haze"}.
    std::vector<std::string> labels() const;
    void validate() const;  // throws ValueError on out-of-range parameters
};

// I = J*t + A*(1-t), uniform transmission.
ImageBuffer apply_haze(const ImageBuffer& img, float airlight, float transmission);
// (s*J)^gamma per pixel.
ImageBuffer apply_low_light(const ImageBuffer& img, float scale, float gamma);
// Alpha-composited white streaks (rain) or soft discs (snow) at seeded positions.
enum class ParticleKind { Rain, Snow };
ImageBuffer apply_particles(const ImageBuffer& img, ParticleKind kind, const RainParams& rain,
                            const SnowParams& snow, std::uint64_t seed);
// Components applied in canonical order regardless of how the recipe was built.
ImageBuffer compose(const ImageBuffer& img, const DegradationRecipe& recipe);

// The eleven canonical recipes: four singles plus {l+h, l+r, l+s, h+r, h+s,
// l+h+r, l+h+s}. Parameters come from `rng` within the recipe ranges.
std::vector<std::vector<Degradation>> canonical_recipe_sets();
std::string recipe_short_name(const std::vector<Degradation>& set);
DegradationRecipe sample_recipe(const std::vector<Degradation>& set, std::uint64_t seed);

struct ManifestRow {
    std::string id;
    std::string clean;     // path relative to the manifest directory
    std::string degraded;  // path relative to the manifest directory
    std::vector<std::string> labels;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    std::string version;
    std::uint64_t seed = 0;
    std::vector<ManifestRow> rows;
};

struct GenConfig {
    std::string out_dir;
    std::string base_dir;  // empty selects the procedural base images
    int per_recipe = 4;
    int size = 64;  // generated images are size x size
    std::uint64_t seed = 0;
};

// Seeded procedural base image: smooth gradient plus a few flat shapes.
ImageBuffer procedural_base_image(int size, std::uint64_t seed);

DatasetManifest generate_dataset(const GenConfig& config);

void write_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

}  // namespace omnirestore
