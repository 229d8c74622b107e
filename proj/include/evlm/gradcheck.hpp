#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evlm {

struct GradCheckEntry {
    std::string op;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    int instances = 0;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    bool all_passed() const;
    std::string to_text() const;
};

// Central finite differences (h = 1e-5, float64) against the analytic
// backward pass of every op plus the end-to-end masked loss on a tiny
// model. The oracle side only ever runs forward passes. Relative error
// is max_i |a_i - f_i| / max(1, ||a||_inf, ||f||_inf); linear ops must
// stay under 1e-6, the rest under 1e-4.
GradCheckReport run_gradcheck(uint64_t seed, int instances_per_op);

} // namespace evlm
