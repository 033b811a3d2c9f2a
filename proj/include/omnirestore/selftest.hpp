#pragma once

#include <string>
#include <vector>

namespace omnirestore {

struct SelftestResult {
    std::string suite;
    bool passed = false;
    std::string detail;
};

// Gradient checks plus the oracle suites (attention, descriptor math,
// metrics, image round-trip), compact enough to run on every install.
std::vector<SelftestResult> run_selftests();

}  // namespace omnirestore
