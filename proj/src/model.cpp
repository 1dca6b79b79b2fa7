#include "trvae/model.hpp"

#include "trvae/error.hpp"

#include <cmath>
#include <map>

namespace trvae {

namespace {

DenseLayer make_layer(std::size_t fan_in, std::size_t fan_out) {
    return DenseLayer{Tensor::zeros(fan_in, fan_out), Tensor::zeros(1, fan_out)};
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t condition_count) {
    if (labels.size() != rows) {
        throw DimensionError("condition labels: expected " + std::to_string(rows) + ", got " +
                             std::to_string(labels.size()));
    }
    for (int s : labels) {
        if (s < 0 || static_cast<std::size_t>(s) >= condition_count) {
            throw ContractError("condition label " + std::to_string(s) + " out of range [0, " +
                                std::to_string(condition_count) + ")");
        }
    }
}

Var affine(Var x, const BoundLayer& layer) { return add(matmul(x, layer.weight), layer.bias); }

BoundLayer bind_layer(Graph& g, const DenseLayer& layer) {
    return BoundLayer{g.parameter(layer.weight), g.parameter(layer.bias)};
}

std::vector<std::size_t> g2_widths(const ModelConfig& c) {
    std::vector<std::size_t> widths{c.g1_dim};
    widths.insert(widths.end(), c.g2_hidden.begin(), c.g2_hidden.end());
    widths.push_back(c.input_dim);
    return widths;
}

std::vector<std::size_t> encoder_widths(const ModelConfig& c) {
    std::vector<std::size_t> widths{c.input_dim + c.condition_count};
    widths.insert(widths.end(), c.encoder_hidden.begin(), c.encoder_hidden.end());
    return widths;
}

}  // namespace

std::string_view to_string(MmdLayer layer) {
    switch (layer) {
        case MmdLayer::none:
            return "none";
        case MmdLayer::z:
            return "z";
        case MmdLayer::y1:
            return "y1";
    }
    return "none";
}

MmdLayer mmd_layer_from_string(std::string_view name) {
    if (name == "none") {
        return MmdLayer::none;
    }
    if (name == "z") {
        return MmdLayer::z;
    }
    if (name == "y1") {
        return MmdLayer::y1;
    }
    throw ConfigError("mmd_layer must be one of none, z, y1; got '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
    if (input_dim < 1 || z_dim < 1 || g1_dim < 1) {
        throw ConfigError("model: input_dim, z_dim and g1_dim must be >= 1");
    }
    if (condition_count < 2) {
        throw ConfigError("model: condition_count must be >= 2");
    }
    for (std::size_t w : encoder_hidden) {
        if (w < 1) {
            throw ConfigError("model: encoder_hidden widths must be >= 1");
        }
    }
    for (std::size_t w : g2_hidden) {
        if (w < 1) {
            throw ConfigError("model: g2_hidden widths must be >= 1");
        }
    }
    if (!(activation_slope >= 0.0 && activation_slope < 1.0)) {
        throw ConfigError("model: activation_slope must lie in [0, 1)");
    }
    if (!(alpha >= 0.0) || !(eta > 0.0) || !(beta >= 0.0)) {
        throw ConfigError("model: need alpha >= 0, eta > 0, beta >= 0");
    }
    try {
        kernel.validate();
    } catch (const ContractError& e) {
        throw ConfigError(std::string("model.") + e.what());
    }
}

ModelParams ModelParams::zeros(const ModelConfig& c) {
    c.validate();
    ModelParams p;
    const auto enc = encoder_widths(c);
    for (std::size_t i = 0; i + 1 < enc.size(); ++i) {
        p.encoder.push_back(make_layer(enc[i], enc[i + 1]));
    }
    p.mu_head = make_layer(enc.back(), c.z_dim);
    p.logvar_head = make_layer(enc.back(), c.z_dim);
    p.g1 = make_layer(c.z_dim + c.condition_count, c.g1_dim);
    const auto dec = g2_widths(c);
    for (std::size_t i = 0; i + 1 < dec.size(); ++i) {
        p.g2.push_back(make_layer(dec[i], dec[i + 1]));
    }
    return p;
}

ModelParams ModelParams::initialize(const ModelConfig& c, SplitMix64& rng) {
    ModelParams p = zeros(c);
    const double slope2 = c.activation_slope * c.activation_slope;
    const auto fill = [&](DenseLayer& layer) {
        const double sd = std::sqrt(2.0 / (static_cast<double>(layer.weight.rows()) * (1.0 + slope2)));
        const double bound = std::sqrt(3.0) * sd;
        for (double& v : layer.weight.values()) {
            v = rng.uniform(-bound, bound);
        }
    };
    for (auto& l : p.encoder) {
        fill(l);
    }
    fill(p.mu_head);
    fill(p.logvar_head);
    fill(p.g1);
    for (auto& l : p.g2) {
        fill(l);
    }
    return p;
}

std::vector<Tensor*> ModelParams::tensors() {
    std::vector<Tensor*> out;
    for (auto& l : encoder) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    out.push_back(&mu_head.weight);
    out.push_back(&mu_head.bias);
    out.push_back(&logvar_head.weight);
    out.push_back(&logvar_head.bias);
    out.push_back(&g1.weight);
    out.push_back(&g1.bias);
    for (auto& l : g2) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
    auto mut = const_cast<ModelParams*>(this)->tensors();
    return {mut.begin(), mut.end()};
}

std::vector<std::string> ModelParams::tensor_names() const {
    std::vector<std::string> names;
    const auto add_layer = [&names](const std::string& prefix) {
        names.push_back(prefix + ".weight");
        names.push_back(prefix + ".bias");
    };
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        add_layer("encoder." + std::to_string(i));
    }
    add_layer("encoder.mu");
    add_layer("encoder.logvar");
    add_layer("g1");
    for (std::size_t i = 0; i < g2.size(); ++i) {
        add_layer("g2." + std::to_string(i));
    }
    return names;
}

void ModelParams::validate(const ModelConfig& config) const {
    const ModelParams reference = zeros(config);
    const auto expected = reference.tensors();
    const auto actual = tensors();
    const auto names = reference.tensor_names();
    if (expected.size() != actual.size()) {
        throw ContractError("model params: expected " + std::to_string(expected.size()) + " tensors, got " +
                            std::to_string(actual.size()));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (!expected[i]->same_shape(*actual[i])) {
            throw DimensionError("model params: " + names[i] + " has shape " + actual[i]->shape_string() +
                                 ", expected " + expected[i]->shape_string());
        }
    }
}

std::vector<Var> BoundParams::flat() const {
    std::vector<Var> out;
    for (const auto& l : encoder) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    for (const BoundLayer* l : {&mu_head, &logvar_head, &g1}) {
        out.push_back(l->weight);
        out.push_back(l->bias);
    }
    for (const auto& l : g2) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    return out;
}

BoundParams bind_params(Graph& graph, const ModelParams& params) {
    BoundParams b;
    for (const auto& l : params.encoder) {
        b.encoder.push_back(bind_layer(graph, l));
    }
    b.mu_head = bind_layer(graph, params.mu_head);
    b.logvar_head = bind_layer(graph, params.logvar_head);
    b.g1 = bind_layer(graph, params.g1);
    for (const auto& l : params.g2) {
        b.g2.push_back(bind_layer(graph, l));
    }
    return b;
}

BoundParams bind_params(std::span<const Var> flat, const ModelConfig& config) {
    const std::size_t expected = 2 * (config.encoder_hidden.size() + 3 + config.g2_hidden.size() + 1);
    if (flat.size() != expected) {
        throw ContractError("bind: expected " + std::to_string(expected) + " parameter handles, got " +
                            std::to_string(flat.size()));
    }
    std::size_t k = 0;
    const auto next = [&]() {
        BoundLayer l{flat[k], flat[k + 1]};
        k += 2;
        return l;
    };
    BoundParams b;
    for (std::size_t i = 0; i < config.encoder_hidden.size(); ++i) {
        b.encoder.push_back(next());
    }
    b.mu_head = next();
    b.logvar_head = next();
    b.g1 = next();
    for (std::size_t i = 0; i <= config.g2_hidden.size(); ++i) {
        b.g2.push_back(next());
    }
    return b;
}

Tensor one_hot(std::span<const int> labels, std::size_t condition_count) {
    check_labels(labels, labels.size(), condition_count);
    Tensor out = Tensor::zeros(labels.size(), condition_count);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        out(r, static_cast<std::size_t>(labels[r])) = 1.0;
    }
    return out;
}

LatentVars encode(const BoundParams& p, const ModelConfig& config, Var x, std::span<const int> labels) {
    const Tensor& xv = x.value();
    if (xv.cols() != config.input_dim) {
        throw DimensionError("encode: expected " + std::to_string(config.input_dim) + " features, got " +
                             std::to_string(xv.cols()));
    }
    check_labels(labels, xv.rows(), config.condition_count);
    Graph& g = *x.graph;
    Var h = concat_cols(x, g.constant(one_hot(labels, config.condition_count)));
    for (const auto& layer : p.encoder) {
        h = leaky_relu(affine(h, layer), config.activation_slope);
    }
    return LatentVars{affine(h, p.mu_head), affine(h, p.logvar_head)};
}

Var reparameterize(const LatentVars& stats, Var eps) {
    if (!eps.value().same_shape(stats.mu.value())) {
        throw DimensionError("reparameterize: eps shape " + eps.value().shape_string() + " differs from " +
                             stats.mu.value().shape_string());
    }
    return add(stats.mu, mul(exp(scale(stats.logvar, 0.5)), eps));
}

DecodedVars decode(const BoundParams& p, const ModelConfig& config, Var z, std::span<const int> labels) {
    const Tensor& zv = z.value();
    if (zv.cols() != config.z_dim) {
        throw DimensionError("decode: expected z_dim " + std::to_string(config.z_dim) + ", got " +
                             std::to_string(zv.cols()));
    }
    check_labels(labels, zv.rows(), config.condition_count);
    Graph& g = *z.graph;
    const Var zs = concat_cols(z, g.constant(one_hot(labels, config.condition_count)));
    const Var y1 = leaky_relu(affine(zs, p.g1), config.activation_slope);
    Var h = y1;
    for (std::size_t i = 0; i < p.g2.size(); ++i) {
        h = affine(h, p.g2[i]);
        if (i + 1 < p.g2.size()) {
            h = leaky_relu(h, config.activation_slope);
        }
    }
    return DecodedVars{y1, h};
}

Var kl_divergence(const LatentVars& stats) {
    // 0.5 * sum_j (exp(lv) + mu^2 - 1 - lv), averaged over the batch
    const Var terms = sub(add_scalar(add(exp(stats.logvar), square(stats.mu)), -1.0), stats.logvar);
    const double rows = static_cast<double>(stats.mu.value().rows());
    return scale(sum(terms), 0.5 / rows);
}

Var mse(Var x, Var xhat) {
    if (!x.value().same_shape(xhat.value())) {
        throw DimensionError("mse: shapes " + x.value().shape_string() + " and " + xhat.value().shape_string() +
                             " differ");
    }
    return mean(square(sub(x, xhat)));
}

Var loss_cvae(Var x, Var xhat, const LatentVars& stats, double alpha, double eta) {
    return add(scale(mse(x, xhat), eta), scale(kl_divergence(stats), alpha));
}

LossGraph loss_trvae(Graph& graph, const BoundParams& p, const ModelConfig& config, const Tensor& x,
                     std::span<const int> labels, const Tensor& eps) {
    if (x.rank() != 2 || x.rows() == 0) {
        throw ContractError("loss_trvae: empty batch");
    }
    check_labels(labels, x.rows(), config.condition_count);

    const Var xv = graph.constant(x);
    const LatentVars stats = encode(p, config, xv, labels);
    const Var z = reparameterize(stats, graph.constant(eps));
    const DecodedVars dec = decode(p, config, z, labels);

    std::map<int, std::vector<std::size_t>> rows_by_condition;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        rows_by_condition[labels[r]].push_back(r);
    }

    LossGraph out;
    std::optional<Var> total;
    std::vector<Var> mmd_groups;
    for (const auto& [condition, rows] : rows_by_condition) {
        const Var xc = take_rows(xv, rows);
        const Var xhat_c = take_rows(dec.xhat, rows);
        const LatentVars stats_c{take_rows(stats.mu, rows), take_rows(stats.logvar, rows)};
        const Var recon = mse(xc, xhat_c);
        const Var kl = kl_divergence(stats_c);
        const Var cvae = add(scale(recon, config.eta), scale(kl, config.alpha));
        out.parts.recon += recon.value().item();
        out.parts.kl += kl.value().item();
        total = total ? add(*total, cvae) : cvae;
        if (config.mmd_layer != MmdLayer::none) {
            mmd_groups.push_back(take_rows(config.mmd_layer == MmdLayer::y1 ? dec.y1 : z, rows));
        }
    }

    if (config.mmd_layer != MmdLayer::none && mmd_groups.size() >= 2) {
        const Var discrepancy = mmd_multigroup(mmd_groups, config.kernel);
        out.parts.mmd = discrepancy.value().item();
        out.parts.mmd_skipped = false;
        if (config.beta != 0.0) {
            total = add(*total, scale(discrepancy, config.beta));
        }
    }
    out.total = *total;
    return out;
}

LatentStats encode(const ModelParams& params, const ModelConfig& config, const Tensor& x, std::span<const int> labels) {
    Graph g;
    const BoundParams p = bind_params(g, params);
    const LatentVars v = encode(p, config, g.constant(x), labels);
    return LatentStats{v.mu.value(), v.logvar.value()};
}

Tensor reparameterize(const LatentStats& stats, const Tensor& eps) {
    Graph g;
    return reparameterize(LatentVars{g.constant(stats.mu), g.constant(stats.logvar)}, g.constant(eps)).value();
}

std::pair<Tensor, Tensor> decode(const ModelParams& params, const ModelConfig& config, const Tensor& z,
                                 std::span<const int> labels) {
    Graph g;
    const BoundParams p = bind_params(g, params);
    const DecodedVars d = decode(p, config, g.constant(z), labels);
    return {d.y1.value(), d.xhat.value()};
}

double kl_divergence(const LatentStats& stats) {
    if (!stats.mu.same_shape(stats.logvar)) {
        throw DimensionError("kl_divergence: mu and logvar shapes differ");
    }
    Graph g;
    return kl_divergence(LatentVars{g.constant(stats.mu), g.constant(stats.logvar)}).value().item();
}

double loss_cvae(const Tensor& x, const Tensor& xhat, const LatentStats& stats, double alpha, double eta) {
    Graph g;
    return loss_cvae(g.constant(x), g.constant(xhat), LatentVars{g.constant(stats.mu), g.constant(stats.logvar)},
                     alpha, eta)
        .value()
        .item();
}

LossValue loss_trvae(const ModelParams& params, const ModelConfig& config, const Tensor& x, std::span<const int> labels,
                     const Tensor& eps) {
    Graph g;
    const BoundParams p = bind_params(g, params);
    const LossGraph lg = loss_trvae(g, p, config, x, labels, eps);
    return LossValue{lg.total.value().item(), lg.parts};
}

Tensor predict_transform(const ModelParams& params, const ModelConfig& config, const Tensor& x, int source, int target) {
    const std::vector<int> src(x.rows(), source);
    const std::vector<int> tgt(x.rows(), target);
    Graph g;
    const BoundParams p = bind_params(g, params);
    const LatentVars stats = encode(p, config, g.constant(x), src);
    return decode(p, config, stats.mu, tgt).xhat.value();
}

Activations layer_activations(const ModelParams& params, const ModelConfig& config, const Tensor& x,
                              std::span<const int> labels) {
    Graph g;
    const BoundParams p = bind_params(g, params);
    const LatentVars stats = encode(p, config, g.constant(x), labels);
    const DecodedVars d = decode(p, config, stats.mu, labels);
    return Activations{stats.mu.value(), d.y1.value()};
}

}  // namespace trvae
