#include "trvae/mmd.hpp"

#include "trvae/error.hpp"

#include <cmath>
#include <string>

namespace trvae {

namespace {

void require_groups(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("mmd: sample groups must be matrices");
    }
    if (a.cols() != b.cols()) {
        throw DimensionError("mmd: feature dims differ (" + std::to_string(a.cols()) + " vs " +
                             std::to_string(b.cols()) + ")");
    }
}

double kernel_sum(const Tensor& dist, const KernelSpec& spec) {
    double acc = 0.0;
    for (double gamma : spec.gammas) {
        double part = 0.0;
        for (double d : dist.values()) {
            part += std::exp(-gamma * d);
        }
        acc += part;
    }
    return acc;
}

Var kernel_sum(Var dist, const KernelSpec& spec) {
    Var acc = sum(exp(scale(dist, -spec.gammas.front())));
    for (std::size_t i = 1; i < spec.gammas.size(); ++i) {
        acc = add(acc, sum(exp(scale(dist, -spec.gammas[i]))));
    }
    return acc;
}

double combine(double kaa, double kbb, double kab, double na, double nb) {
    return kaa * (1.0 / (na * na)) + kbb * (1.0 / (nb * nb)) - kab * (2.0 / (na * nb));
}

Var combine(Var kaa, Var kbb, Var kab, double na, double nb) {
    return sub(add(scale(kaa, 1.0 / (na * na)), scale(kbb, 1.0 / (nb * nb))), scale(kab, 2.0 / (na * nb)));
}

}  // namespace

void KernelSpec::validate() const {
    if (gammas.empty()) {
        throw ContractError("kernel: at least one gamma required");
    }
    for (double g : gammas) {
        if (!(g > 0.0) || !std::isfinite(g)) {
            throw ContractError("kernel: gammas must be positive and finite, got " + std::to_string(g));
        }
    }
}

double rbf_kernel(std::span<const double> x, std::span<const double> y, double gamma) {
    if (x.size() != y.size()) {
        throw DimensionError("rbf_kernel: dims differ (" + std::to_string(x.size()) + " vs " +
                             std::to_string(y.size()) + ")");
    }
    if (!(gamma > 0.0)) {
        throw ContractError("rbf_kernel: gamma must be positive");
    }
    double d2 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - y[k];
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

double multi_scale_kernel(std::span<const double> x, std::span<const double> y, const KernelSpec& spec) {
    spec.validate();
    double acc = 0.0;
    for (double gamma : spec.gammas) {
        acc += rbf_kernel(x, y, gamma);
    }
    return acc;
}

double mmd(const Tensor& a, const Tensor& b, const KernelSpec& spec) {
    spec.validate();
    require_groups(a, b);
    const double kaa = kernel_sum(pairwise_sq_dist(a, a), spec);
    const double kbb = kernel_sum(pairwise_sq_dist(b, b), spec);
    const double kab = kernel_sum(pairwise_sq_dist(a, b), spec);
    return combine(kaa, kbb, kab, static_cast<double>(a.rows()), static_cast<double>(b.rows()));
}

double mmd(const SampleGroup& a, const SampleGroup& b, const KernelSpec& spec) {
    return mmd(a.matrix, b.matrix, spec);
}

double mmd_multigroup(std::span<const SampleGroup> groups, const KernelSpec& spec) {
    spec.validate();
    if (groups.size() < 2) {
        throw ContractError("mmd_multigroup: at least two non-empty groups required");
    }
    std::vector<double> self(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
        self[i] = kernel_sum(pairwise_sq_dist(groups[i].matrix, groups[i].matrix), spec);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t j = i + 1; j < groups.size(); ++j) {
            require_groups(groups[i].matrix, groups[j].matrix);
            const double kab = kernel_sum(pairwise_sq_dist(groups[i].matrix, groups[j].matrix), spec);
            total += combine(self[i], self[j], kab, static_cast<double>(groups[i].matrix.rows()),
                             static_cast<double>(groups[j].matrix.rows()));
        }
    }
    return total;
}

Var mmd(Var a, Var b, const KernelSpec& spec) {
    spec.validate();
    require_groups(a.value(), b.value());
    const Var kaa = kernel_sum(pairwise_sq_dist(a, a), spec);
    const Var kbb = kernel_sum(pairwise_sq_dist(b, b), spec);
    const Var kab = kernel_sum(pairwise_sq_dist(a, b), spec);
    return combine(kaa, kbb, kab, static_cast<double>(a.value().rows()), static_cast<double>(b.value().rows()));
}

Var mmd_multigroup(std::span<const Var> groups, const KernelSpec& spec) {
    spec.validate();
    if (groups.size() < 2) {
        throw ContractError("mmd_multigroup: at least two non-empty groups required");
    }
    std::vector<Var> self;
    self.reserve(groups.size());
    for (Var g : groups) {
        self.push_back(kernel_sum(pairwise_sq_dist(g, g), spec));
    }
    std::optional<Var> total;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t j = i + 1; j < groups.size(); ++j) {
            require_groups(groups[i].value(), groups[j].value());
            const Var kab = kernel_sum(pairwise_sq_dist(groups[i], groups[j]), spec);
            const Var term = combine(self[i], self[j], kab, static_cast<double>(groups[i].value().rows()),
                                     static_cast<double>(groups[j].value().rows()));
            total = total ? add(*total, term) : term;
        }
    }
    return *total;
}

}  // namespace trvae
