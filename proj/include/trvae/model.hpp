#pragma once

#include "trvae/autodiff.hpp"
#include "trvae/mmd.hpp"
#include "trvae/rng.hpp"
#include "trvae/tensor.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trvae {

/// Where the cross-condition MMD penalty is applied: nowhere (vanilla CVAE), the
/// bottleneck z, or the output of the first decoder layer (trVAE).
enum class MmdLayer { none, z, y1 };

std::string_view to_string(MmdLayer layer);
MmdLayer mmd_layer_from_string(std::string_view name);

struct ModelConfig {
    std::size_t input_dim = 0;
    std::size_t condition_count = 2;
    std::vector<std::size_t> encoder_hidden{128, 64};
    std::size_t z_dim = 10;
    std::size_t g1_dim = 64;
    std::vector<std::size_t> g2_hidden{128};
    double activation_slope = 0.2;
    double alpha = 0.01;   // KL weight
    double eta = 1.0;      // reconstruction weight
    double beta = 1.0;     // MMD weight
    MmdLayer mmd_layer = MmdLayer::y1;
    KernelSpec kernel;

    void validate() const;
    bool mmd_active() const { return mmd_layer != MmdLayer::none && beta != 0.0; }
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DenseLayer {
    Tensor weight;  // fan_in x fan_out
    Tensor bias;    // 1 x fan_out
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Encoder (hidden stack plus mean and log-variance heads), the single g1 layer and the
/// g2 stack whose last layer is the linear output.
struct ModelParams {
    std::vector<DenseLayer> encoder;
    DenseLayer mu_head;
    DenseLayer logvar_head;
    DenseLayer g1;
    std::vector<DenseLayer> g2;

    static ModelParams zeros(const ModelConfig& config);
    /// Uniform weights with standard deviation sqrt(2 / (fan_in (1 + slope^2))), zero biases.
    static ModelParams initialize(const ModelConfig& config, SplitMix64& rng);

    /// Flattened view in a fixed order (weight then bias, layer by layer).
    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
    std::vector<std::string> tensor_names() const;

    void validate(const ModelConfig& config) const;
    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct LatentStats {
    Tensor mu;
    Tensor logvar;
};

// ---- graph-level building blocks -------------------------------------------------

struct BoundLayer {
    Var weight;
    Var bias;
};

/// ModelParams registered as parameter nodes of one graph.
struct BoundParams {
    std::vector<BoundLayer> encoder;
    BoundLayer mu_head;
    BoundLayer logvar_head;
    BoundLayer g1;
    std::vector<BoundLayer> g2;

    std::vector<Var> flat() const;
};

BoundParams bind_params(Graph& graph, const ModelParams& params);
/// Re-assemble handles created from `ModelParams::tensors()` order.
BoundParams bind_params(std::span<const Var> flat, const ModelConfig& config);

struct LatentVars {
    Var mu;
    Var logvar;
};

struct DecodedVars {
    Var y1;
    Var xhat;
};

Tensor one_hot(std::span<const int> labels, std::size_t condition_count);

LatentVars encode(const BoundParams& p, const ModelConfig& config, Var x, std::span<const int> labels);
Var reparameterize(const LatentVars& stats, Var eps);
DecodedVars decode(const BoundParams& p, const ModelConfig& config, Var z, std::span<const int> labels);
Var kl_divergence(const LatentVars& stats);
Var mse(Var x, Var xhat);
Var loss_cvae(Var x, Var xhat, const LatentVars& stats, double alpha, double eta);

struct LossParts {
    double recon = 0.0;  // sum over conditions of per-condition MSE
    double kl = 0.0;     // sum over conditions of per-condition mean KL
    double mmd = 0.0;    // raw cross-condition MMD (0 when skipped)
    bool mmd_skipped = true;
};

struct LossGraph {
    Var total;
    LossParts parts;
};

/// Builds the trVAE objective for one minibatch inside `graph`.
LossGraph loss_trvae(Graph& graph, const BoundParams& p, const ModelConfig& config, const Tensor& x,
                     std::span<const int> labels, const Tensor& eps);

// ---- value-level API ---------------------------------------------------------------

LatentStats encode(const ModelParams& params, const ModelConfig& config, const Tensor& x, std::span<const int> labels);
Tensor reparameterize(const LatentStats& stats, const Tensor& eps);
std::pair<Tensor, Tensor> decode(const ModelParams& params, const ModelConfig& config, const Tensor& z,
                                 std::span<const int> labels);
double kl_divergence(const LatentStats& stats);
double loss_cvae(const Tensor& x, const Tensor& xhat, const LatentStats& stats, double alpha, double eta);

struct LossValue {
    double total = 0.0;
    LossParts parts;
};

LossValue loss_trvae(const ModelParams& params, const ModelConfig& config, const Tensor& x, std::span<const int> labels,
                     const Tensor& eps);

/// Encode with the source condition (posterior mean, no sampling), decode with the target.
Tensor predict_transform(const ModelParams& params, const ModelConfig& config, const Tensor& x, int source, int target);

/// Posterior means and first-decoder-layer activations for every row (decoded under the
/// row's own condition).
struct Activations {
    Tensor z;
    Tensor y1;
};
Activations layer_activations(const ModelParams& params, const ModelConfig& config, const Tensor& x,
                              std::span<const int> labels);

}  // namespace trvae
