#include "trvae/data.hpp"

#include "trvae/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace trvae {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else {
            field += c;
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

int intern(const std::string& name, std::vector<std::string>& names, std::map<std::string, int>& index) {
    auto [it, inserted] = index.emplace(name, static_cast<int>(names.size()));
    if (inserted) {
        names.push_back(name);
    }
    return it->second;
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Dataset Dataset::select(std::span<const std::size_t> rows) const {
    Dataset out;
    out.feature_names = feature_names;
    out.condition_names = condition_names;
    out.domain_names = domain_names;
    if (rows.empty()) {
        return out;
    }
    out.x = take_rows(x, rows);
    for (std::size_t r : rows) {
        out.condition.push_back(condition[r]);
        out.domain.push_back(domain[r]);
    }
    return out;
}

std::vector<std::size_t> Dataset::rows_with_condition(int c) const {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < rows(); ++r) {
        if (condition[r] == c) {
            out.push_back(r);
        }
    }
    return out;
}

void Dataset::validate() const {
    if (domain.size() != condition.size()) {
        throw ContractError("dataset: condition and domain label counts differ");
    }
    if (!empty()) {
        if (x.rank() != 2 || x.rows() != rows() || x.cols() != cols()) {
            throw DimensionError("dataset: feature matrix " + x.shape_string() + " does not match " +
                                 std::to_string(rows()) + " rows x " + std::to_string(cols()) + " features");
        }
    }
    for (std::size_t r = 0; r < rows(); ++r) {
        if (condition[r] < 0 || static_cast<std::size_t>(condition[r]) >= condition_names.size() || domain[r] < 0 ||
            static_cast<std::size_t>(domain[r]) >= domain_names.size()) {
            throw ContractError("dataset: row " + std::to_string(r) + " has a label outside the name tables");
        }
    }
}

Dataset parse_csv(std::istream& in, const CsvSchema& schema) {
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError("csv: missing header row");
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    const auto header = split_csv_line(line);
    const auto find_col = [&](const std::string& name) -> std::ptrdiff_t {
        if (name.empty()) {
            return -1;
        }
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw SchemaError("csv: column '" + name + "' not found in header");
        }
        return it - header.begin();
    };
    const std::ptrdiff_t cond_col = find_col(schema.condition_col);
    if (cond_col < 0) {
        throw SchemaError("csv: schema must name a condition column");
    }
    const std::ptrdiff_t dom_col = find_col(schema.domain_col);

    Dataset data;
    std::vector<std::size_t> feature_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (static_cast<std::ptrdiff_t>(c) != cond_col && static_cast<std::ptrdiff_t>(c) != dom_col) {
            feature_cols.push_back(c);
            data.feature_names.push_back(header[c]);
        }
    }
    if (feature_cols.empty()) {
        throw SchemaError("csv: no feature columns");
    }

    std::map<std::string, int> cond_index;
    std::map<std::string, int> dom_index;
    if (dom_col < 0) {
        data.domain_names = {"all"};
    }
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw ParseError("csv: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                             " fields, header has " + std::to_string(header.size()));
        }
        for (std::size_t k = 0; k < feature_cols.size(); ++k) {
            const std::string& cell = fields[feature_cols[k]];
            double v = 0.0;
            const char* begin = cell.data();
            const char* end = cell.data() + cell.size();
            while (begin < end && *begin == ' ') {
                ++begin;
            }
            if (begin < end && *begin == '+') {
                ++begin;
            }
            const auto res = std::from_chars(begin, end, v);
            if (res.ec != std::errc() || res.ptr != end || cell.empty()) {
                throw ParseError("csv: line " + std::to_string(line_no) + ", column '" + header[feature_cols[k]] +
                                 "': not a number: '" + cell + "'");
            }
            if (!std::isfinite(v)) {
                throw ParseError("csv: line " + std::to_string(line_no) + ", column '" + header[feature_cols[k]] +
                                 "': NaN/Inf not allowed");
            }
            values.push_back(v);
        }
        data.condition.push_back(intern(fields[cond_col], data.condition_names, cond_index));
        data.domain.push_back(dom_col < 0 ? 0 : intern(fields[dom_col], data.domain_names, dom_index));
    }
    if (!data.empty()) {
        data.x = Tensor::from_external({data.rows(), data.cols()}, std::move(values));
    }
    return data;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) {
        throw FileError("cannot open '" + path.string() + "' for reading");
    }
    return parse_csv(in, schema);
}

void write_csv(const Dataset& data, std::ostream& out, const CsvSchema& schema) {
    data.validate();
    for (const auto& name : data.feature_names) {
        out << quote_if_needed(name) << ',';
    }
    out << quote_if_needed(schema.condition_col);
    if (!schema.domain_col.empty()) {
        out << ',' << quote_if_needed(schema.domain_col);
    }
    out << '\n';
    for (std::size_t r = 0; r < data.rows(); ++r) {
        for (std::size_t c = 0; c < data.cols(); ++c) {
            out << format_double(data.x(r, c)) << ',';
        }
        out << quote_if_needed(data.condition_names[data.condition[r]]);
        if (!schema.domain_col.empty()) {
            out << ',' << quote_if_needed(data.domain_names[data.domain[r]]);
        }
        out << '\n';
    }
}

void write_csv(const Dataset& data, const std::filesystem::path& path, const CsvSchema& schema) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FileError("cannot open '" + path.string() + "' for writing");
    }
    write_csv(data, out, schema);
    if (!out) {
        throw FileError("write to '" + path.string() + "' failed");
    }
}

void SyntheticSpec::validate() const {
    if (domain_count < 1 || condition_count < 1 || dims < 1 || samples_per_cell < 1 || latent_rank < 1) {
        throw ConfigError("synthetic spec: counts must be >= 1");
    }
    if (!(response_sparsity > 0.0 && response_sparsity <= 1.0)) {
        throw ConfigError("synthetic spec: response_sparsity must lie in (0, 1]");
    }
    if (!(noise_sd > 0.0)) {
        throw ConfigError("synthetic spec: noise_sd must be positive");
    }
    if (!(domain_separation >= 0.0) || !(shift_magnitude >= 0.0)) {
        throw ConfigError("synthetic spec: domain_separation and shift_magnitude must be >= 0");
    }
}

const GroundTruth::Cell& GroundTruth::cell(int domain, int condition) const {
    for (const auto& c : cells) {
        if (c.domain == domain && c.condition == condition) {
            return c;
        }
    }
    throw ContractError("ground truth: no cell (" + std::to_string(domain) + ", " + std::to_string(condition) + ")");
}

std::pair<Dataset, GroundTruth> synth_shift(const SyntheticSpec& spec) {
    spec.validate();
    SplitMix64 rng(spec.seed);
    const std::size_t p = spec.dims;
    const std::size_t k = spec.latent_rank;

    // Population parameters first, so they do not depend on the sample counts.
    std::vector<std::vector<double>> means(spec.domain_count, std::vector<double>(p));
    std::vector<std::vector<double>> loadings(spec.domain_count, std::vector<double>(p * k));
    for (std::size_t d = 0; d < spec.domain_count; ++d) {
        for (double& m : means[d]) {
            m = spec.domain_separation * rng.normal();
        }
        for (double& w : loadings[d]) {
            w = rng.normal();
        }
    }
    GroundTruth truth;
    truth.shift.assign(spec.condition_count, std::vector<double>(p, 0.0));
    truth.scale.assign(spec.condition_count, std::vector<double>(p, 1.0));
    for (std::size_t s = 1; s < spec.condition_count; ++s) {
        for (std::size_t j = 0; j < p; ++j) {
            const bool responds = rng.uniform() < spec.response_sparsity;
            const double shift = spec.shift_magnitude * rng.normal();
            const double log_scale = 0.1 * spec.shift_magnitude * rng.uniform(-1.0, 1.0);
            if (responds) {
                truth.shift[s][j] = shift;
                truth.scale[s][j] = std::exp(log_scale);
            }
        }
    }

    Dataset data;
    for (std::size_t j = 0; j < p; ++j) {
        char name[32];
        std::snprintf(name, sizeof(name), "f%03zu", j);
        data.feature_names.emplace_back(name);
    }
    for (std::size_t s = 0; s < spec.condition_count; ++s) {
        data.condition_names.push_back("s" + std::to_string(s));
    }
    for (std::size_t d = 0; d < spec.domain_count; ++d) {
        data.domain_names.push_back("d" + std::to_string(d));
    }

    const double noise_var = spec.noise_sd * spec.noise_sd;
    std::vector<double> values;
    values.reserve(spec.domain_count * spec.condition_count * spec.samples_per_cell * p);
    std::vector<double> latent(k);
    for (std::size_t d = 0; d < spec.domain_count; ++d) {
        for (std::size_t s = 0; s < spec.condition_count; ++s) {
            GroundTruth::Cell cell{static_cast<int>(d), static_cast<int>(s), std::vector<double>(p),
                                   std::vector<double>(p)};
            for (std::size_t j = 0; j < p; ++j) {
                double loading2 = 0.0;
                for (std::size_t q = 0; q < k; ++q) {
                    loading2 += loadings[d][j * k + q] * loadings[d][j * k + q];
                }
                const double sc = truth.scale[s][j];
                cell.mean[j] = sc * means[d][j] + truth.shift[s][j];
                cell.variance[j] = sc * sc * loading2 + noise_var;
            }
            for (std::size_t n = 0; n < spec.samples_per_cell; ++n) {
                for (double& u : latent) {
                    u = rng.normal();
                }
                for (std::size_t j = 0; j < p; ++j) {
                    double base = means[d][j];
                    for (std::size_t q = 0; q < k; ++q) {
                        base += loadings[d][j * k + q] * latent[q];
                    }
                    values.push_back(truth.scale[s][j] * base + truth.shift[s][j] + spec.noise_sd * rng.normal());
                }
                data.condition.push_back(static_cast<int>(s));
                data.domain.push_back(static_cast<int>(d));
            }
            truth.cells.push_back(std::move(cell));
        }
    }
    data.x = Tensor::matrix(data.rows(), p, std::move(values));
    return {std::move(data), std::move(truth)};
}

bool HoldoutPlan::holds_out(int domain, int condition) const {
    return std::find(held_out.begin(), held_out.end(), std::make_pair(domain, condition)) != held_out.end();
}

void HoldoutPlan::validate(const Dataset& data) const {
    for (const auto& [d, s] : held_out) {
        if (d < 0 || static_cast<std::size_t>(d) >= data.domain_names.size() || s < 0 ||
            static_cast<std::size_t>(s) >= data.condition_names.size()) {
            throw ContractError("holdout plan: (" + std::to_string(d) + ", " + std::to_string(s) +
                                ") is not a valid (domain, condition) pair");
        }
        if (holds_out(d, 0)) {
            throw ContractError("holdout plan: domain " + data.domain_names[d] +
                                " would lose its control rows, nothing left to transform from");
        }
        bool has_control = false;
        for (std::size_t r = 0; r < data.rows() && !has_control; ++r) {
            has_control = data.domain[r] == d && data.condition[r] == 0;
        }
        if (!has_control) {
            throw ContractError("holdout plan: domain " + data.domain_names[d] + " has no control rows");
        }
    }
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& data, const HoldoutPlan& plan) {
    plan.validate(data);
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> held_rows;
    for (std::size_t r = 0; r < data.rows(); ++r) {
        (plan.holds_out(data.domain[r], data.condition[r]) ? held_rows : train_rows).push_back(r);
    }
    if (train_rows.empty()) {
        throw ContractError("holdout plan leaves no training rows");
    }
    return {data.select(train_rows), data.select(held_rows)};
}

Standardizer Standardizer::fit(const Tensor& x) {
    const std::size_t n = x.rows();
    const std::size_t p = x.cols();
    Standardizer s{std::vector<double>(p, 0.0), std::vector<double>(p, 1.0)};
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            s.mean[c] += x(r, c);
        }
    }
    for (double& m : s.mean) {
        m /= static_cast<double>(n);
    }
    if (n < 2) {
        return s;
    }
    std::vector<double> ss(p, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            const double d = x(r, c) - s.mean[c];
            ss[c] += d * d;
        }
    }
    for (std::size_t c = 0; c < p; ++c) {
        const double sd = std::sqrt(ss[c] / static_cast<double>(n - 1));
        s.scale[c] = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

Standardizer Standardizer::identity(std::size_t dims) {
    return Standardizer{std::vector<double>(dims, 0.0), std::vector<double>(dims, 1.0)};
}

Tensor Standardizer::apply(const Tensor& x) const {
    if (x.cols() != mean.size()) {
        throw DimensionError("standardizer: expected " + std::to_string(mean.size()) + " features, got " +
                             std::to_string(x.cols()));
    }
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out(r, c) = (x(r, c) - mean[c]) / scale[c];
        }
    }
    return out;
}

Tensor Standardizer::invert(const Tensor& x) const {
    if (x.cols() != mean.size()) {
        throw DimensionError("standardizer: expected " + std::to_string(mean.size()) + " features, got " +
                             std::to_string(x.cols()));
    }
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out(r, c) = x(r, c) * scale[c] + mean[c];
        }
    }
    return out;
}

Dataset Standardizer::apply(const Dataset& data) const {
    Dataset out = data;
    if (!data.empty()) {
        out.x = apply(data.x);
    }
    return out;
}

}  // namespace trvae
