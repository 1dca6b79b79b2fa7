#pragma once

#include "trvae/autodiff.hpp"
#include "trvae/tensor.hpp"

#include <span>
#include <vector>

namespace trvae {

/// Bandwidths of a multi-scale RBF kernel k(x, x') = sum_i exp(-gamma_i ||x - x'||^2).
struct KernelSpec {
    std::vector<double> gammas{0.01, 0.1, 1.0, 10.0, 100.0};

    void validate() const;
    friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

/// Samples (rows) drawn under one condition.
struct SampleGroup {
    Tensor matrix;
    int label = 0;
};

double rbf_kernel(std::span<const double> x, std::span<const double> y, double gamma);
double multi_scale_kernel(std::span<const double> x, std::span<const double> y, const KernelSpec& spec);

/// Biased (V-statistic) squared MMD between the rows of `a` and `b`; self pairs included.
double mmd(const Tensor& a, const Tensor& b, const KernelSpec& spec);
double mmd(const SampleGroup& a, const SampleGroup& b, const KernelSpec& spec);

/// Sum of mmd over all unordered pairs of groups.
double mmd_multigroup(std::span<const SampleGroup> groups, const KernelSpec& spec);

/// Differentiable forms, sharing the arithmetic of the plain versions.
Var mmd(Var a, Var b, const KernelSpec& spec);
Var mmd_multigroup(std::span<const Var> groups, const KernelSpec& spec);

}  // namespace trvae
