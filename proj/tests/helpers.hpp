#pragma once

#include "trvae/rng.hpp"
#include "trvae/tensor.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace test_util {

inline trvae::Tensor random_matrix(std::size_t rows, std::size_t cols, trvae::SplitMix64& rng, double sd = 1.0) {
    trvae::Tensor t = trvae::Tensor::zeros(rows, cols);
    for (double& v : t.values()) {
        v = sd * rng.normal();
    }
    return t;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("trvae-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace test_util
