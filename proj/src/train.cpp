#include "trvae/train.hpp"

#include "trvae/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace trvae {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw ConfigError("train: learning_rate must be positive");
    }
    if (batch_size < 2) {
        throw ConfigError("train: batch_size must be >= 2");
    }
    for (double b : adam_betas) {
        if (!(b > 0.0 && b < 1.0)) {
            throw ConfigError("train: adam_betas must lie in (0, 1)");
        }
    }
    if (!(adam_epsilon > 0.0)) {
        throw ConfigError("train: adam_epsilon must be positive");
    }
    if (early_stop_patience && *early_stop_patience == 0) {
        throw ConfigError("train: early_stop_patience must be >= 1 when set");
    }
}

AdamState AdamState::fresh(const std::vector<Tensor>& params) {
    AdamState s;
    for (const Tensor& p : params) {
        s.first_moment.emplace_back(p.shape(), std::vector<double>(p.size(), 0.0));
        s.second_moment.emplace_back(p.shape(), std::vector<double>(p.size(), 0.0));
    }
    return s;
}

std::pair<std::vector<Tensor>, AdamState> adam_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                                                    const AdamState& state, const TrainConfig& config) {
    if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size()) {
        throw ContractError("adam_step: parameter, gradient and moment counts differ");
    }
    const auto [beta1, beta2] = config.adam_betas;
    AdamState next = state;
    next.step = state.step + 1;
    const double t = static_cast<double>(next.step);
    const double correction1 = 1.0 - std::pow(beta1, t);
    const double correction2 = 1.0 - std::pow(beta2, t);

    std::vector<Tensor> updated = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!grads[i].same_shape(params[i]) || !state.first_moment[i].same_shape(params[i]) ||
            !state.second_moment[i].same_shape(params[i])) {
            throw ContractError("adam_step: shape mismatch at parameter " + std::to_string(i) + " (" +
                                params[i].shape_string() + " vs gradient " + grads[i].shape_string() + ")");
        }
        auto m = next.first_moment[i].values();
        auto v = next.second_moment[i].values();
        auto p = updated[i].values();
        const auto g = grads[i].values();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            const double m_hat = m[k] / correction1;
            const double v_hat = v[k] / correction2;
            p[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
        }
    }
    return {std::move(updated), std::move(next)};
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const int> conditions, std::size_t batch_size,
                                                   SplitMix64& rng) {
    const std::size_t n = conditions.size();
    if (n == 0) {
        throw ContractError("make_batches: empty dataset");
    }
    if (batch_size == 0 || batch_size > n) {
        throw ContractError("make_batches: batch_size " + std::to_string(batch_size) + " must lie in [1, " +
                            std::to_string(n) + "]");
    }
    int max_label = 0;
    for (int c : conditions) {
        max_label = std::max(max_label, c);
    }
    std::vector<std::vector<std::size_t>> by_condition(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t r = 0; r < n; ++r) {
        by_condition[static_cast<std::size_t>(conditions[r])].push_back(r);
    }
    // Fisher-Yates per condition, conditions in label order.
    for (auto& rows : by_condition) {
        for (std::size_t i = rows.size(); i > 1; --i) {
            std::swap(rows[i - 1], rows[rng.below(i)]);
        }
    }

    const std::size_t batch_count = (n + batch_size - 1) / batch_size;
    std::vector<std::vector<std::size_t>> batches(batch_count);
    // Condition c contributes floor(n_c / B) rows to every batch; its n_c mod B leftovers go to
    // consecutive batches starting where the previous condition's leftovers ended, so batch
    // sizes differ by at most one.
    std::size_t offset = 0;
    for (const auto& rows : by_condition) {
        const std::size_t base = rows.size() / batch_count;
        const std::size_t extra = rows.size() % batch_count;
        std::size_t cursor = 0;
        for (std::size_t b = 0; b < batch_count; ++b) {
            const bool gets_extra = ((b + batch_count - offset) % batch_count) < extra;
            const std::size_t take = base + (gets_extra ? 1 : 0);
            batches[b].insert(batches[b].end(), rows.begin() + static_cast<std::ptrdiff_t>(cursor),
                              rows.begin() + static_cast<std::ptrdiff_t>(cursor + take));
            cursor += take;
        }
        offset = (offset + extra) % batch_count;
    }
    return batches;
}

std::vector<Tensor> copy_tensors(const ModelParams& params) {
    std::vector<Tensor> out;
    for (const Tensor* t : params.tensors()) {
        out.push_back(*t);
    }
    return out;
}

void assign_tensors(ModelParams& params, const std::vector<Tensor>& values) {
    auto dst = params.tensors();
    if (dst.size() != values.size()) {
        throw ContractError("assign_tensors: tensor count mismatch");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (!dst[i]->same_shape(values[i])) {
            throw ContractError("assign_tensors: shape mismatch at tensor " + std::to_string(i));
        }
        *dst[i] = values[i];
    }
}

TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& train_config) {
    model_config.validate();
    train_config.validate();
    data.validate();
    if (data.empty()) {
        throw ContractError("train: empty dataset");
    }
    if (data.cols() != model_config.input_dim) {
        throw DimensionError("train: dataset has " + std::to_string(data.cols()) + " features, model expects " +
                             std::to_string(model_config.input_dim));
    }

    SplitMix64 rng(train_config.seed);
    TrainResult result;
    result.params = ModelParams::initialize(model_config, rng);
    std::vector<Tensor> params = copy_tensors(result.params);
    AdamState adam = AdamState::fresh(params);

    double best_epoch_loss = std::numeric_limits<double>::infinity();
    std::size_t epochs_without_improvement = 0;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
        const auto batches = make_batches(data.condition, train_config.batch_size, rng);
        double epoch_total = 0.0;
        for (const auto& rows : batches) {
            ++step;
            const Tensor x = take_rows(data.x, rows);
            std::vector<int> labels;
            labels.reserve(rows.size());
            for (std::size_t r : rows) {
                labels.push_back(data.condition[r]);
            }
            Tensor eps = Tensor::zeros(rows.size(), model_config.z_dim);
            for (double& e : eps.values()) {
                e = rng.normal();
            }

            Graph graph;
            std::vector<Var> handles;
            handles.reserve(params.size());
            for (const Tensor& p : params) {
                handles.push_back(graph.parameter(p));
            }
            const BoundParams bound = bind_params(handles, model_config);
            const LossGraph loss = loss_trvae(graph, bound, model_config, x, labels, eps);
            const double total = loss.total.value().item();
            if (!std::isfinite(total)) {
                std::ostringstream msg;
                msg << "train: non-finite loss at epoch " << epoch << ", step " << step << " (total=" << total
                    << ", recon=" << loss.parts.recon << ", kl=" << loss.parts.kl << ", mmd=" << loss.parts.mmd
                    << ")";
                throw NumericError(msg.str());
            }
            const GradientMap grads_by_node = graph.backward(loss.total);
            std::vector<Tensor> grads;
            grads.reserve(handles.size());
            for (Var h : handles) {
                grads.push_back(grads_by_node.at(h));
            }
            auto [next_params, next_state] = adam_step(params, grads, adam, train_config);
            params = std::move(next_params);
            adam = std::move(next_state);

            result.trace.push_back(LossRecord{epoch, step, total, loss.parts.recon, loss.parts.kl, loss.parts.mmd});
            epoch_total += total;
        }
        result.epochs_run = epoch;

        if (train_config.early_stop_patience) {
            const double epoch_loss = epoch_total / static_cast<double>(batches.size());
            if (epoch_loss < best_epoch_loss) {
                best_epoch_loss = epoch_loss;
                epochs_without_improvement = 0;
            } else if (++epochs_without_improvement >= *train_config.early_stop_patience) {
                break;
            }
        }
    }
    assign_tensors(result.params, params);
    return result;
}

FitResult fit(const Dataset& train_data, ModelConfig model_config, const TrainConfig& train_config) {
    if (train_data.empty()) {
        throw ContractError("fit: empty training set");
    }
    if (model_config.input_dim == 0) {
        model_config.input_dim = train_data.cols();
    }
    if (model_config.condition_count == 0) {
        model_config.condition_count = train_data.condition_names.size();
    }
    FitResult out;
    out.model.scaler = Standardizer::fit(train_data.x);
    out.model.config = model_config;
    TrainResult trained = train(out.model.scaler.apply(train_data), model_config, train_config);
    out.model.params = std::move(trained.params);
    out.trace = std::move(trained.trace);
    out.epochs_run = trained.epochs_run;
    return out;
}

}  // namespace trvae
