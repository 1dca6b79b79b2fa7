#include "trvae/eval.hpp"

#include "trvae/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace trvae {

DimStats per_dim_stats(const Tensor& x) {
    if (x.rank() != 2 || x.rows() < 2) {
        throw ContractError("per_dim_stats: need at least two rows for a sample variance");
    }
    const std::size_t n = x.rows();
    const std::size_t p = x.cols();
    DimStats s{std::vector<double>(p, 0.0), std::vector<double>(p, 0.0)};
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            s.mean[c] += x(r, c);
        }
    }
    for (double& m : s.mean) {
        m /= static_cast<double>(n);
    }
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            const double d = x(r, c) - s.mean[c];
            s.variance[c] += d * d;
        }
    }
    for (double& v : s.variance) {
        v /= static_cast<double>(n - 1);
    }
    return s;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("pearson: lengths differ (" + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()) + ")");
    }
    if (a.size() < 2) {
        throw ContractError("pearson: need at least two values");
    }
    const double n = static_cast<double>(a.size());
    double ma = 0.0;
    double mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) {
        throw NumericError("pearson: correlation undefined for a constant input");
    }
    const double r = sab / std::sqrt(saa * sbb);
    return std::clamp(r, -1.0, 1.0);
}

EvalReport compare_prediction(const Tensor& prediction, const Tensor& truth) {
    if (prediction.cols() != truth.cols()) {
        throw ContractError("evaluate: prediction has " + std::to_string(prediction.cols()) +
                            " features, truth has " + std::to_string(truth.cols()));
    }
    const DimStats pred = per_dim_stats(prediction);
    const DimStats real = per_dim_stats(truth);
    EvalReport report;
    report.r_mean = pearson(pred.mean, real.mean);
    report.r_var = pearson(pred.variance, real.variance);
    report.means_pred = pred.mean;
    report.means_true = real.mean;
    report.vars_pred = pred.variance;
    report.vars_true = real.variance;
    report.n_source = prediction.rows();
    report.n_target = truth.rows();
    return report;
}

Tensor predict_original_units(const FittedModel& model, const Tensor& x, int s_src, int s_tgt) {
    if (x.cols() != model.config.input_dim) {
        throw ContractError("predict: expected p=" + std::to_string(model.config.input_dim) + " features, got p=" +
                            std::to_string(x.cols()));
    }
    const Tensor z = model.scaler.apply(x);
    return model.scaler.invert(predict_transform(model.params, model.config, z, s_src, s_tgt));
}

EvalReport evaluate_transform(const FittedModel& model, const Dataset& source, const Dataset& truth, int s_src,
                              int s_tgt) {
    if (source.empty() || truth.empty()) {
        throw ContractError("evaluate_transform: source and truth must be non-empty");
    }
    for (int s : source.condition) {
        if (s != s_src) {
            throw ContractError("evaluate_transform: source rows must all have the source condition");
        }
    }
    for (int s : truth.condition) {
        if (s != s_tgt) {
            throw ContractError("evaluate_transform: truth rows must all have the target condition");
        }
    }
    if (source.cols() != truth.cols()) {
        throw ContractError("evaluate_transform: source has " + std::to_string(source.cols()) +
                            " features, truth has " + std::to_string(truth.cols()));
    }
    return compare_prediction(predict_original_units(model, source.x, s_src, s_tgt), truth.x);
}

double CompactnessReport::total(Layer layer) const {
    double acc = 0.0;
    for (const auto& p : layer == Layer::z ? z : y1) {
        acc += p.value;
    }
    return acc;
}

CompactnessReport compactness_report(const ModelParams& params, const ModelConfig& config, const Dataset& data) {
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t r = 0; r < data.rows(); ++r) {
        groups[data.condition[r]].push_back(r);
    }
    if (groups.size() < 2) {
        throw ContractError("compactness_report: dataset needs at least two conditions");
    }
    const Activations act = layer_activations(params, config, data.x, data.condition);
    CompactnessReport report;
    for (auto a = groups.begin(); a != groups.end(); ++a) {
        for (auto b = std::next(a); b != groups.end(); ++b) {
            report.z.push_back(
                {a->first, b->first, mmd(take_rows(act.z, a->second), take_rows(act.z, b->second), config.kernel)});
            report.y1.push_back(
                {a->first, b->first, mmd(take_rows(act.y1, a->second), take_rows(act.y1, b->second), config.kernel)});
        }
    }
    return report;
}

void export_embeddings(const ModelParams& params, const ModelConfig& config, const Dataset& data, Layer layer,
                       const std::filesystem::path& path) {
    const Activations act = layer_activations(params, config, data.x, data.condition);
    const Tensor& values = layer == Layer::z ? act.z : act.y1;
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FileError("cannot open '" + path.string() + "' for writing");
    }
    for (std::size_t c = 0; c < values.cols(); ++c) {
        out << "dim_" << c << ',';
    }
    out << "condition,domain\n";
    for (std::size_t r = 0; r < values.rows(); ++r) {
        for (std::size_t c = 0; c < values.cols(); ++c) {
            out << format_double(values(r, c)) << ',';
        }
        out << data.condition_names.at(data.condition[r]) << ',' << data.domain_names.at(data.domain[r]) << '\n';
    }
    if (!out) {
        throw FileError("write to '" + path.string() + "' failed");
    }
}

}  // namespace trvae
