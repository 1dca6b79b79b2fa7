#pragma once

#include "trvae/autodiff.hpp"
#include "trvae/model.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace trvae {

/// A seeded trVAE loss evaluation point for finite-difference checking.
struct GradCheckProblem {
    ModelConfig config;
    ModelParams params;
    Tensor x;
    std::vector<int> labels;
    Tensor eps;
};

/// "toy": p=20, z=4, g1=8, batch 8 (4 per condition), one hidden layer of 16 on each side,
/// beta=1 at y1. "small": p=6, z=2, g1=3, batch 4, hidden width 5.
GradCheckProblem make_gradcheck_problem(std::string_view size, std::uint64_t seed = 7);

/// Full trVAE loss gradient against central differences over every parameter coordinate.
GradCheckReport run_gradcheck(const GradCheckProblem& problem, double h = 1e-4);

}  // namespace trvae
