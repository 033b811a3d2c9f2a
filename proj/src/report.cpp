#include <json.hpp>

#include <fstream>

#include "omnirestore/error.hpp"
#include "omnirestore/train.hpp"

namespace omnirestore {

void write_eval_report_json(const EvalReport& report, const std::string& path) {
    nlohmann::json j;
    auto row_json = [](const EvalSummaryRow& r) {
        return nlohmann::json{{"recipe", r.recipe},
                              {"count", r.count},
                              {"psnr_restored", r.psnr_restored},
                              {"psnr_degraded", r.psnr_degraded},
                              {"ssim_restored", r.ssim_restored},
                              {"ssim_degraded", r.ssim_degraded}};
    };
    j["per_recipe"] = nlohmann::json::array();
    for (const auto& r : report.per_recipe) j["per_recipe"].push_back(row_json(r));
    j["overall"] = row_json(report.overall);
    j["images"] = nlohmann::json::array();
    for (const auto& r : report.images)
        j["images"].push_back({{"id", r.id},
                               {"recipe", r.recipe},
                               {"psnr_restored", r.psnr_restored},
                               {"psnr_degraded", r.psnr_degraded},
                               {"ssim_restored", r.ssim_restored},
                               {"ssim_degraded", r.ssim_degraded},
                               {"millis", r.millis}});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open eval report for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("eval report write failed: " + path);
}

}  // namespace omnirestore
