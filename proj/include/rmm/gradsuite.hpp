#pragma once

#include <string>
#include <vector>

#include "rmm/gradcheck.hpp"

namespace rmm::gradsuite {

struct ModuleReport {
    std::string module;
    double max_rel_err = 0.0;
    int coords = 0;
};

// Finite-difference sweeps: one per tape operation, the modulation block, the
// loss family, and the 16x16 two-block end-to-end training graph. All run at
// float64 with step 1e-5; the pass bar everywhere is 1e-4 relative error.
ModuleReport check_tensor_ops(uint64_t seed, int coords_per_op = 50);
ModuleReport check_modulation(uint64_t seed, int coords = 60);
ModuleReport check_objectives(uint64_t seed, int coords_per_loss = 50);
ModuleReport check_end_to_end(uint64_t seed, int coords = 60);

std::vector<ModuleReport> run_all(uint64_t seed);

constexpr double kPassBar = 1e-4;

}  // namespace rmm::gradsuite
