#pragma once

#include <string>
#include <vector>

#include "hlab/numcore/grad_check.hpp"

namespace hlab::harness {

struct GradSuiteEntry {
    std::string name;
    GradCheckReport report;
};

// Central-difference checks of every block, the full 4-layer model CE loss and
// the AGAPO objective on small random inputs.
std::vector<GradSuiteEntry> run_grad_suite(std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace hlab::harness
