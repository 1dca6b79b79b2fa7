#pragma once

#include "trvae/rng.hpp"
#include "trvae/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace trvae {

/// Observations with a condition label and a domain label per row.
///
/// Label indices are dense and assigned in order of first appearance when read from a
/// file. An empty dataset keeps its names but holds a default-constructed `x`.
struct Dataset {
    Tensor x;
    std::vector<int> condition;
    std::vector<int> domain;
    std::vector<std::string> feature_names;
    std::vector<std::string> condition_names;
    std::vector<std::string> domain_names;

    std::size_t rows() const { return condition.size(); }
    std::size_t cols() const { return feature_names.size(); }
    bool empty() const { return condition.empty(); }

    /// Rows in the given order; names are kept.
    Dataset select(std::span<const std::size_t> rows) const;
    std::vector<std::size_t> rows_with_condition(int condition) const;
    void validate() const;
};

struct CsvSchema {
    std::string condition_col = "condition";
    std::string domain_col = "domain";  // empty: every row gets domain 0
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
Dataset parse_csv(std::istream& in, const CsvSchema& schema = {});
void write_csv(const Dataset& data, const std::filesystem::path& path, const CsvSchema& schema = {});
void write_csv(const Dataset& data, std::ostream& out, const CsvSchema& schema = {});

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Desk-scale out-of-sample benchmark.
///
/// Domain d draws rows as mean_d + W_d u + noise with u ~ N(0, I_rank). Condition s >= 1
/// applies a response shared by all domains: a sparse shift on a random subset of features
/// and a per-feature scale exp(0.1 * shift_magnitude * U(-1, 1)) on that same subset.
struct SyntheticSpec {
    std::size_t domain_count = 3;
    std::size_t condition_count = 2;
    std::size_t dims = 100;
    std::size_t samples_per_cell = 500;
    double domain_separation = 1.0;
    double shift_magnitude = 3.0;
    double response_sparsity = 0.2;
    double noise_sd = 0.5;
    std::size_t latent_rank = 3;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Exact population moments of each (domain, condition) cell.
struct GroundTruth {
    struct Cell {
        int domain = 0;
        int condition = 0;
        std::vector<double> mean;
        std::vector<double> variance;
    };
    std::vector<Cell> cells;
    std::vector<std::vector<double>> shift;  // per condition (row 0 is all zeros)
    std::vector<std::vector<double>> scale;  // per condition (row 0 is all ones)

    const Cell& cell(int domain, int condition) const;
};

std::pair<Dataset, GroundTruth> synth_shift(const SyntheticSpec& spec);

struct HoldoutPlan {
    std::vector<std::pair<int, int>> held_out;  // (domain, condition)

    bool holds_out(int domain, int condition) const;
    /// Each held-out domain must keep its control (condition 0) rows in training.
    void validate(const Dataset& data) const;
};

std::pair<Dataset, Dataset> split_holdout(const Dataset& data, const HoldoutPlan& plan);

/// Per-feature z-scoring fitted on training data. Constant features get scale 1.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const Tensor& x);
    static Standardizer identity(std::size_t dims);
    Tensor apply(const Tensor& x) const;
    Tensor invert(const Tensor& x) const;
    Dataset apply(const Dataset& data) const;
    friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

}  // namespace trvae
