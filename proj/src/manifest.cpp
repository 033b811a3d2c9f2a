#include <json.hpp>

#include <fstream>

#include "omnirestore/degrade.hpp"
#include "omnirestore/error.hpp"

namespace omnirestore {

// One JSON object per line: a header row with the generator version and the
// global seed, then one row per sample.

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open manifest for writing: " + path);
    nlohmann::json header;
    header["version"] = manifest.version;
    header["seed"] = manifest.seed;
    out << header.dump() << '\n';
    for (const auto& row : manifest.rows) {
        nlohmann::json j;
        j["id"] = row.id;
        j["clean"] = row.clean;
        j["degraded"] = row.degraded;
        j["labels"] = row.labels;
        j["seed"] = row.seed;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("manifest write failed: " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    DatasetManifest manifest;
    std::string line;
    long lineno = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!saw_header) {
            if (!j.contains("version") || !j.contains("seed"))
                throw ParseError("manifest line 1: missing version/seed header");
            manifest.version = j["version"].get<std::string>();
            manifest.seed = j["seed"].get<std::uint64_t>();
            saw_header = true;
            continue;
        }
        ManifestRow row;
        try {
            row.id = j.at("id").get<std::string>();
            row.clean = j.at("clean").get<std::string>();
            row.degraded = j.at("degraded").get<std::string>();
            row.labels = j.at("labels").get<std::vector<std::string>>();
            row.seed = j.at("seed").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        manifest.rows.push_back(std::move(row));
    }
    if (!saw_header) throw ParseError("manifest is empty: " + path);
    return manifest;
}

}  // namespace omnirestore
