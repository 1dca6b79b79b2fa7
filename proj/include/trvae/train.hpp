#pragma once

#include "trvae/data.hpp"
#include "trvae/model.hpp"
#include "trvae/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace trvae {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    std::array<double, 2> adam_betas{0.9, 0.999};
    double adam_epsilon = 1e-8;
    std::optional<std::size_t> early_stop_patience;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AdamState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::uint64_t step = 0;

    static AdamState fresh(const std::vector<Tensor>& params);
};

struct LossRecord {
    std::size_t epoch = 0;  // 1-based
    std::size_t step = 0;   // 1-based, counted across epochs
    double total = 0.0;
    double recon = 0.0;
    double kl = 0.0;
    double mmd = 0.0;
};

using LossTrace = std::vector<LossRecord>;

/// One bias-corrected Adam update; returns updated copies.
std::pair<std::vector<Tensor>, AdamState> adam_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                                                    const AdamState& state, const TrainConfig& config);

/// Condition-stratified partition of all row indices into ceil(n / batch_size) batches.
std::vector<std::vector<std::size_t>> make_batches(std::span<const int> conditions, std::size_t batch_size,
                                                   SplitMix64& rng);

struct TrainResult {
    ModelParams params;
    LossTrace trace;
    std::size_t epochs_run = 0;
};

/// Trains on `data` as given (callers standardize first). Deterministic in its inputs.
TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& train_config);

/// A trained model together with the feature scaling it was trained under.
struct FittedModel {
    ModelConfig config;
    ModelParams params;
    Standardizer scaler;
};

struct FitResult {
    FittedModel model;
    LossTrace trace;
    std::size_t epochs_run = 0;
};

/// Standardize on `train_data`, then train. `model_config.input_dim` and `condition_count`
/// are filled in from the data when zero.
FitResult fit(const Dataset& train_data, ModelConfig model_config, const TrainConfig& train_config);

std::vector<Tensor> copy_tensors(const ModelParams& params);
void assign_tensors(ModelParams& params, const std::vector<Tensor>& values);

}  // namespace trvae
