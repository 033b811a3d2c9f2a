#include "omnirestore/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "omnirestore/error.hpp"
#include "omnirestore/image_io.hpp"
#include "omnirestore/rng.hpp"

namespace fs = std::filesystem;

namespace omnirestore {

std::optional<Degradation> degradation_from_name(const std::string& name) {
    for (int i = 0; i < kNumDegradations; ++i)
        if (name == kDegradationNames[static_cast<size_t>(i)]) return static_cast<Degradation>(i);
    return std::nullopt;
}

std::vector<std::string> DegradationRecipe::labels() const {
    std::vector<std::string> out;
    for (int i = 0; i < kNumDegradations; ++i)
        if (present[static_cast<size_t>(i)]) out.emplace_back(kDegradationNames[static_cast<size_t>(i)]);
    return out;
}

void DegradationRecipe::validate() const {
    if (has(Degradation::LowLight)) {
        if (!(low_light.scale > 0.f && low_light.scale <= 1.f))
            throw ValueError("low-light scale must be in (0,1]");
        if (!(low_light.gamma >= 1.f)) throw ValueError("low-light gamma must be >= 1");
    }
    if (has(Degradation::Haze)) {
        if (haze.airlight < 0.7f || haze.airlight > 1.f)
            throw ValueError("haze airlight must be in [0.7,1.0]");
        if (haze.transmission < 0.2f || haze.transmission > 0.9f)
            throw ValueError("haze transmission must be in [0.2,0.9]");
    }
    if (has(Degradation::Rain)) {
        if (rain.count < 0) throw ValueError("rain streak count must be >= 0");
        if (rain.opacity < 0.f || rain.opacity > 1.f) throw ValueError("rain opacity must be in [0,1]");
    }
    if (has(Degradation::Snow)) {
        if (snow.count < 0) throw ValueError("snow particle count must be >= 0");
        if (snow.opacity < 0.f || snow.opacity > 1.f) throw ValueError("snow opacity must be in [0,1]");
    }
}

ImageBuffer apply_haze(const ImageBuffer& img, float airlight, float transmission) {
    if (airlight < 0.f || airlight > 1.f) throw ValueError("apply_haze: airlight outside [0,1]");
    if (transmission < 0.f || transmission > 1.f)
        throw ValueError("apply_haze: transmission outside [0,1]");
    ImageBuffer out = img;
    const float a = airlight * (1.f - transmission);
    for (auto& v : out.data) v = v * transmission + a;
    out.clamp();
    return out;
}

ImageBuffer apply_low_light(const ImageBuffer& img, float scale, float gamma) {
    if (!(scale > 0.f && scale <= 1.f)) throw ValueError("apply_low_light: scale outside (0,1]");
    if (!(gamma >= 1.f)) throw ValueError("apply_low_light: gamma must be >= 1");
    ImageBuffer out = img;
    for (auto& v : out.data) {
        float s = scale * (v < 0.f ? 0.f : (v > 1.f ? 1.f : v));
        v = std::pow(s, gamma);
    }
    out.clamp();
    return out;
}

namespace {

// cov is 1 on the particle core and falls linearly to 0 at the soft fringe.
void stamp(ImageBuffer& img, int y, int x, float cov, float opacity) {
    if (y < 0 || y >= img.height || x < 0 || x >= img.width || cov <= 0.f) return;
    const float a = opacity * std::min(1.f, cov);
    for (int c = 0; c < 3; ++c) {
        float& v = img.at(y, x, c);
        v = v + a * (1.f - v);  // composite toward pure white
    }
}

void draw_streak(ImageBuffer& img, float cy, float cx, float length, float angle_rad,
                 float opacity) {
    const float dy = std::cos(angle_rad), dx = std::sin(angle_rad);
    const float half = length * 0.5f;
    const int y0 = static_cast<int>(std::floor(cy - half - 2)), y1 = static_cast<int>(std::ceil(cy + half + 2));
    const int x0 = static_cast<int>(std::floor(cx - half - 2)), x1 = static_cast<int>(std::ceil(cx + half + 2));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            // distance from pixel center to the segment
            const float py = static_cast<float>(y) - cy, px = static_cast<float>(x) - cx;
            float t = py * dy + px * dx;
            t = std::max(-half, std::min(half, t));
            const float ddy = py - t * dy, ddx = px - t * dx;
            const float d = std::sqrt(ddy * ddy + ddx * ddx);
            const float cov = d <= 0.45f ? 1.f : 1.f - (d - 0.45f) / 0.55f;
            stamp(img, y, x, cov, opacity);
        }
}

void draw_disc(ImageBuffer& img, float cy, float cx, float radius, float opacity) {
    const int r = static_cast<int>(std::ceil(radius)) + 1;
    for (int y = static_cast<int>(cy) - r; y <= static_cast<int>(cy) + r; ++y)
        for (int x = static_cast<int>(cx) - r; x <= static_cast<int>(cx) + r; ++x) {
            const float dy = static_cast<float>(y) - cy, dx = static_cast<float>(x) - cx;
            const float d = std::sqrt(dy * dy + dx * dx);
            const float edge = std::max(0.5f, 0.35f * radius);
            const float cov = (radius - d) / edge;
            stamp(img, y, x, cov, opacity);
        }
}

}  // namespace

ImageBuffer apply_particles(const ImageBuffer& img, ParticleKind kind, const RainParams& rain,
                            const SnowParams& snow, std::uint64_t seed) {
    ImageBuffer out = img;
    Rng rng(seed);
    if (kind == ParticleKind::Rain) {
        if (rain.count < 0) throw ValueError("apply_particles: rain count must be >= 0");
        if (rain.opacity < 0.f || rain.opacity > 1.f)
            throw ValueError("apply_particles: opacity outside [0,1]");
        const float base = rain.angle_deg * 3.14159265358979f / 180.f;
        for (int i = 0; i < rain.count; ++i) {
            const float cy = static_cast<float>(rng.uniform(0, img.height));
            const float cx = static_cast<float>(rng.uniform(0, img.width));
            const float ang = base + static_cast<float>(rng.uniform(-0.12, 0.12));
            const float len = rain.length * static_cast<float>(rng.uniform(0.75, 1.25));
            draw_streak(out, cy, cx, len, ang, rain.opacity);
        }
    } else {
        if (snow.count < 0) throw ValueError("apply_particles: snow count must be >= 0");
        if (snow.opacity < 0.f || snow.opacity > 1.f)
            throw ValueError("apply_particles: opacity outside [0,1]");
        for (int i = 0; i < snow.count; ++i) {
            const float cy = static_cast<float>(rng.uniform(0, img.height));
            const float cx = static_cast<float>(rng.uniform(0, img.width));
            const float rad = snow.radius * static_cast<float>(rng.uniform(0.7, 1.3));
            draw_disc(out, cy, cx, rad, snow.opacity);
        }
    }
    out.clamp();
    return out;
}

ImageBuffer compose(const ImageBuffer& img, const DegradationRecipe& recipe) {
    recipe.validate();
    ImageBuffer out = img;
    if (recipe.has(Degradation::LowLight))
        out = apply_low_light(out, recipe.low_light.scale, recipe.low_light.gamma);
    if (recipe.has(Degradation::Haze))
        out = apply_haze(out, recipe.haze.airlight, recipe.haze.transmission);
    if (recipe.has(Degradation::Rain))
        out = apply_particles(out, ParticleKind::Rain, recipe.rain, recipe.snow,
                              mix_seed(recipe.seed, 2));
    if (recipe.has(Degradation::Snow))
        out = apply_particles(out, ParticleKind::Snow, recipe.rain, recipe.snow,
                              mix_seed(recipe.seed, 3));
    return out;
}

std::vector<std::vector<Degradation>> canonical_recipe_sets() {
    using D = Degradation;
    return {
        {D::LowLight},
        {D::Haze},
        {D::Rain},
        {D::Snow},
        {D::LowLight, D::Haze},
        {D::LowLight, D::Rain},
        {D::LowLight, D::Snow},
        {D::Haze, D::Rain},
        {D::Haze, D::Snow},
        {D::LowLight, D::Haze, D::Rain},
        {D::LowLight, D::Haze, D::Snow},
    };
}

std::string recipe_short_name(const std::vector<Degradation>& set) {
    static const char* letters[4] = {"l", "h", "r", "s"};
    bool present[4] = {false, false, false, false};
    for (Degradation d : set) present[static_cast<size_t>(d)] = true;
    std::string out;
    for (int i = 0; i < 4; ++i)
        if (present[i]) out += letters[i];
    return out;
}

DegradationRecipe sample_recipe(const std::vector<Degradation>& set, std::uint64_t seed) {
    DegradationRecipe r;
    r.seed = seed;
    Rng rng(mix_seed(seed, 1));
    for (Degradation d : set) r.add(d);
    if (r.has(Degradation::LowLight)) {
        r.low_light.scale = static_cast<float>(rng.uniform(0.25, 0.5));
        r.low_light.gamma = static_cast<float>(rng.uniform(1.4, 2.2));
    }
    if (r.has(Degradation::Haze)) {
        r.haze.airlight = static_cast<float>(rng.uniform(0.75, 1.0));
        r.haze.transmission = static_cast<float>(rng.uniform(0.35, 0.75));
    }
    if (r.has(Degradation::Rain)) {
        r.rain.count = 40 + static_cast<int>(rng.below(41));
        r.rain.length = static_cast<float>(rng.uniform(16, 24));
        r.rain.angle_deg = static_cast<float>(rng.uniform(-25, 25));
        r.rain.opacity = static_cast<float>(rng.uniform(0.4, 0.7));
    }
    if (r.has(Degradation::Snow)) {
        r.snow.count = 25 + static_cast<int>(rng.below(26));
        r.snow.radius = static_cast<float>(rng.uniform(2.0, 3.2));
        r.snow.opacity = static_cast<float>(rng.uniform(0.7, 0.95));
    }
    return r;
}

ImageBuffer procedural_base_image(int size, std::uint64_t seed) {
    Rng rng(seed);
    ImageBuffer img(size, size);
    float c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = static_cast<float>(rng.uniform(0.15, 0.85));
        c1[c] = static_cast<float>(rng.uniform(0.15, 0.85));
    }
    const float theta = static_cast<float>(rng.uniform(0, 6.2831853));
    const float gy = std::sin(theta), gx = std::cos(theta);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const float t = 0.5f + 0.5f * (gy * (y / static_cast<float>(size) - 0.5f) +
                                           gx * (x / static_cast<float>(size) - 0.5f)) * 2.f /
                                        1.4142136f;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = c0[c] + (c1[c] - c0[c]) * t;
        }
    const int shapes = 3 + static_cast<int>(rng.below(4));
    for (int s = 0; s < shapes; ++s) {
        float col[3];
        for (int c = 0; c < 3; ++c) col[c] = static_cast<float>(rng.uniform(0.1, 0.9));
        const bool circle = rng.below(2) == 0;
        const float cy = static_cast<float>(rng.uniform(0, size));
        const float cx = static_cast<float>(rng.uniform(0, size));
        const float ext = static_cast<float>(rng.uniform(size * 0.08, size * 0.3));
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                bool inside;
                if (circle) {
                    const float dy = y - cy, dx = x - cx;
                    inside = dy * dy + dx * dx <= ext * ext;
                } else {
                    inside = std::abs(y - cy) <= ext && std::abs(x - cx) <= ext * 0.7f;
                }
                if (inside)
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
            }
    }
    img.clamp();
    return img;
}

namespace {

ImageBuffer center_crop(const ImageBuffer& img, int size) {
    if (img.height < size || img.width < size)
        throw ConfigError("base image smaller than requested size " + std::to_string(size));
    if (img.height == size && img.width == size) return img;
    ImageBuffer out(size, size);
    const int oy = (img.height - size) / 2, ox = (img.width - size) / 2;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(oy + y, ox + x, c);
    return out;
}

}  // namespace

DatasetManifest generate_dataset(const GenConfig& config) {
    if (config.per_recipe < 1) throw ConfigError("per-recipe count must be >= 1");
    if (config.size < 16) throw ConfigError("image size must be >= 16");
    if (config.out_dir.empty()) throw ConfigError("output directory is required");

    std::vector<std::string> base_files;
    if (!config.base_dir.empty()) {
        if (!fs::is_directory(config.base_dir))
            throw IoError("base image directory not found: " + config.base_dir);
        for (const auto& e : fs::directory_iterator(config.base_dir)) {
            const std::string p = e.path().string();
            if (p.size() > 4 && (p.substr(p.size() - 4) == ".ppm" || p.substr(p.size() - 4) == ".png"))
                base_files.push_back(p);
        }
        std::sort(base_files.begin(), base_files.end());
        if (base_files.empty()) throw IoError("no .ppm/.png images in " + config.base_dir);
    }

    std::error_code ec;
    fs::create_directories(fs::path(config.out_dir) / "clean", ec);
    fs::create_directories(fs::path(config.out_dir) / "degraded", ec);
    if (ec) throw IoError("cannot create output directories under " + config.out_dir);

    const auto sets = canonical_recipe_sets();
    DatasetManifest manifest;
    manifest.version = "omnirestore-degrade/1";
    manifest.seed = config.seed;

    long row_index = 0;
    for (int j = 0; j < config.per_recipe; ++j) {
        for (size_t rid = 0; rid < sets.size(); ++rid, ++row_index) {
            const std::uint64_t row_seed = mix_seed(config.seed, static_cast<std::uint64_t>(row_index));
            ImageBuffer clean =
                base_files.empty()
                    ? procedural_base_image(config.size, mix_seed(row_seed, 101))
                    : center_crop(read_image(base_files[static_cast<size_t>(row_index) % base_files.size()]),
                                  config.size);
            const DegradationRecipe recipe = sample_recipe(sets[rid], row_seed);
            ImageBuffer degraded = compose(clean, recipe);

            char idbuf[64];
            std::snprintf(idbuf, sizeof(idbuf), "%s_%04ld", recipe_short_name(sets[rid]).c_str(),
                          static_cast<long>(j));
            ManifestRow row;
            row.id = idbuf;
            row.clean = std::string("clean/") + idbuf + ".ppm";
            row.degraded = std::string("degraded/") + idbuf + ".ppm";
            row.labels = recipe.labels();
            row.seed = row_seed;
            write_image(clean, (fs::path(config.out_dir) / row.clean).string());
            write_image(degraded, (fs::path(config.out_dir) / row.degraded).string());
            manifest.rows.push_back(std::move(row));
        }
    }
    write_manifest(manifest, (fs::path(config.out_dir) / "manifest.jsonl").string());
    return manifest;
}

}  // namespace omnirestore
