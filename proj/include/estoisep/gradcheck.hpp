#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace estoisep {

struct GradCheckReport {
    std::string stage;
    double max_rel_err = 0.0;
    double threshold = 0.0;
    bool pass = false;
    std::string worst;  // coordinates of the worst offender
};

/// Self-contained finite-difference suites over random instances. Stages:
/// normalize, band, loss, mse, network; empty filter runs all of them.
std::vector<GradCheckReport> run_gradcheck(const std::string& stage_filter, std::uint64_t seed,
                                           int instances);

}  // namespace estoisep
