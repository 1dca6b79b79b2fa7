#pragma once

#include "trvae/data.hpp"
#include "trvae/model.hpp"
#include "trvae/train.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace trvae {

struct DimStats {
    std::vector<double> mean;
    std::vector<double> variance;  // unbiased, n - 1 denominator
};

DimStats per_dim_stats(const Tensor& x);

/// Sample Pearson correlation. Throws NumericError when either input is constant.
double pearson(std::span<const double> a, std::span<const double> b);

struct EvalReport {
    double r_mean = 0.0;
    double r_var = 0.0;
    std::vector<double> means_pred;
    std::vector<double> means_true;
    std::vector<double> vars_pred;
    std::vector<double> vars_true;
    std::size_t n_source = 0;
    std::size_t n_target = 0;
};

/// Compare an already-computed prediction (original units) with the truth rows.
EvalReport compare_prediction(const Tensor& prediction, const Tensor& truth);

/// Transform `source` rows (all under `s_src`) to `s_tgt` and score against `truth`.
/// Both datasets and the reported statistics are in original, unstandardized units.
EvalReport evaluate_transform(const FittedModel& model, const Dataset& source, const Dataset& truth, int s_src,
                              int s_tgt);

/// Apply the prediction protocol in original units.
Tensor predict_original_units(const FittedModel& model, const Tensor& x, int s_src, int s_tgt);

enum class Layer { z, y1 };

struct PairMmd {
    int condition_a = 0;
    int condition_b = 0;
    double value = 0.0;
};

struct CompactnessReport {
    std::vector<PairMmd> z;
    std::vector<PairMmd> y1;

    double total(Layer layer) const;
};

/// Cross-condition MMD of posterior means (z) and first decoder layer outputs (y1).
/// `data` must already be in model (standardized) units.
CompactnessReport compactness_report(const ModelParams& params, const ModelConfig& config, const Dataset& data);

/// CSV with dim_0..dim_{k-1},condition,domain, one row per sample in dataset order.
/// `data` must already be in model units.
void export_embeddings(const ModelParams& params, const ModelConfig& config, const Dataset& data, Layer layer,
                       const std::filesystem::path& path);

}  // namespace trvae
