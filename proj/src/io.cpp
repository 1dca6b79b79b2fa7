#include "trvae/io.hpp"

#include "trvae/error.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace trvae {

namespace {

// Reads keys from one JSON object and, on finish(), rejects any key that was not read.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError(path_ + ": expected a JSON object");
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <typename T>
    T get(const std::string& key, const T& fallback) {
        if (!j_.contains(key)) {
            seen_.insert(key);
            return fallback;
        }
        return require<T>(key);
    }

    template <typename T>
    T require(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) {
            throw ConfigError(path_ + "." + key + ": required key missing");
        }
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) {
            throw ConfigError(path_ + "." + key + ": required key missing");
        }
        return j_.at(key);
    }

    std::string key_path(const std::string& key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (seen_.count(item.key()) == 0) {
                throw ConfigError(path_ + "." + item.key() + ": unknown key");
            }
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

// Rethrow validation failures as config errors so the CLI reports them uniformly.
template <typename F>
void validate_as_config(const std::string& path, F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const ContractError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

int resolve_label(const json& value, const std::vector<std::string>& names, const std::string& path) {
    if (value.is_number_integer()) {
        const auto idx = value.get<long long>();
        if (idx < 0 || static_cast<std::size_t>(idx) >= names.size()) {
            throw ConfigError(path + ": index " + std::to_string(idx) + " out of range");
        }
        return static_cast<int>(idx);
    }
    if (value.is_string()) {
        const auto name = value.get<std::string>();
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) {
                return static_cast<int>(i);
            }
        }
        throw ConfigError(path + ": unknown label '" + name + "'");
    }
    throw ConfigError(path + ": expected a label name or index");
}

}  // namespace

json to_json(const KernelSpec& spec) { return json{{"gammas", spec.gammas}}; }

json to_json(const ModelConfig& c) {
    return json{{"input_dim", c.input_dim},
                {"condition_count", c.condition_count},
                {"encoder_hidden", c.encoder_hidden},
                {"z_dim", c.z_dim},
                {"g1_dim", c.g1_dim},
                {"g2_hidden", c.g2_hidden},
                {"activation_slope", c.activation_slope},
                {"alpha", c.alpha},
                {"eta", c.eta},
                {"beta", c.beta},
                {"mmd_layer", std::string(to_string(c.mmd_layer))},
                {"kernel", to_json(c.kernel)}};
}

json to_json(const TrainConfig& c) {
    json j{{"learning_rate", c.learning_rate},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"seed", c.seed},
           {"adam_betas", c.adam_betas},
           {"adam_epsilon", c.adam_epsilon},
           {"early_stop_patience", nullptr}};
    if (c.early_stop_patience) {
        j["early_stop_patience"] = *c.early_stop_patience;
    }
    return j;
}

json to_json(const SyntheticSpec& s) {
    return json{{"domain_count", s.domain_count},
                {"condition_count", s.condition_count},
                {"dims", s.dims},
                {"samples_per_cell", s.samples_per_cell},
                {"domain_separation", s.domain_separation},
                {"shift_magnitude", s.shift_magnitude},
                {"response_sparsity", s.response_sparsity},
                {"noise_sd", s.noise_sd},
                {"latent_rank", s.latent_rank},
                {"seed", s.seed}};
}

json to_json(const GroundTruth& truth) {
    json cells = json::array();
    for (const auto& c : truth.cells) {
        cells.push_back(json{{"domain", c.domain}, {"condition", c.condition}, {"mean", c.mean}, {"variance", c.variance}});
    }
    return json{{"cells", cells}, {"shift", truth.shift}, {"scale", truth.scale}};
}

json to_json(const EvalReport& r) {
    return json{{"r_mean", r.r_mean},         {"r_var", r.r_var},           {"n_source", r.n_source},
                {"n_target", r.n_target},     {"means_pred", r.means_pred}, {"means_true", r.means_true},
                {"vars_pred", r.vars_pred},   {"vars_true", r.vars_true}};
}

json to_json(const CompactnessReport& report, const std::vector<std::string>& names) {
    const auto layer = [&](const std::vector<PairMmd>& pairs) {
        json out = json::array();
        for (const auto& p : pairs) {
            out.push_back(json{{"condition_a", names.at(p.condition_a)},
                               {"condition_b", names.at(p.condition_b)},
                               {"mmd", p.value}});
        }
        return out;
    };
    return json{{"z", layer(report.z)}, {"y1", layer(report.y1)}};
}

ModelConfig model_config_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path);
    ModelConfig c;
    c.input_dim = r.get<std::size_t>("input_dim", c.input_dim);
    c.condition_count = r.get<std::size_t>("condition_count", c.condition_count);
    c.encoder_hidden = r.get<std::vector<std::size_t>>("encoder_hidden", c.encoder_hidden);
    c.z_dim = r.get<std::size_t>("z_dim", c.z_dim);
    c.g1_dim = r.get<std::size_t>("g1_dim", c.g1_dim);
    c.g2_hidden = r.get<std::vector<std::size_t>>("g2_hidden", c.g2_hidden);
    c.activation_slope = r.get<double>("activation_slope", c.activation_slope);
    c.alpha = r.get<double>("alpha", c.alpha);
    c.eta = r.get<double>("eta", c.eta);
    c.beta = r.get<double>("beta", c.beta);
    c.mmd_layer = mmd_layer_from_string(r.get<std::string>("mmd_layer", std::string(to_string(c.mmd_layer))));
    if (r.has("kernel")) {
        ObjectReader k(r.raw("kernel"), r.key_path("kernel"));
        c.kernel.gammas = k.require<std::vector<double>>("gammas");
        k.finish();
    }
    r.finish();
    return c;
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path);
    TrainConfig c;
    c.learning_rate = r.get<double>("learning_rate", c.learning_rate);
    c.epochs = r.get<std::size_t>("epochs", c.epochs);
    c.batch_size = r.get<std::size_t>("batch_size", c.batch_size);
    c.seed = r.get<std::uint64_t>("seed", c.seed);
    c.adam_betas = r.get<std::array<double, 2>>("adam_betas", c.adam_betas);
    c.adam_epsilon = r.get<double>("adam_epsilon", c.adam_epsilon);
    if (r.has("early_stop_patience") && !r.raw("early_stop_patience").is_null()) {
        c.early_stop_patience = r.require<std::size_t>("early_stop_patience");
    } else {
        r.get<json>("early_stop_patience", nullptr);
    }
    r.finish();
    validate_as_config(path, [&] { c.validate(); });
    return c;
}

SyntheticSpec synthetic_spec_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path);
    SyntheticSpec s;
    s.domain_count = r.get<std::size_t>("domain_count", s.domain_count);
    s.condition_count = r.get<std::size_t>("condition_count", s.condition_count);
    s.dims = r.get<std::size_t>("dims", s.dims);
    s.samples_per_cell = r.get<std::size_t>("samples_per_cell", s.samples_per_cell);
    s.domain_separation = r.get<double>("domain_separation", s.domain_separation);
    s.shift_magnitude = r.get<double>("shift_magnitude", s.shift_magnitude);
    s.response_sparsity = r.get<double>("response_sparsity", s.response_sparsity);
    s.noise_sd = r.get<double>("noise_sd", s.noise_sd);
    s.latent_rank = r.get<std::size_t>("latent_rank", s.latent_rank);
    s.seed = r.get<std::uint64_t>("seed", s.seed);
    r.finish();
    validate_as_config(path, [&] { s.validate(); });
    return s;
}

HoldoutPlan holdout_plan_from_json(const json& j, const Dataset& data, const std::string& path) {
    ObjectReader r(j, path);
    HoldoutPlan plan;
    const json entries = r.get<json>("held_out", json::array());
    if (!entries.is_array()) {
        throw ConfigError(r.key_path("held_out") + ": expected an array");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::string entry_path = r.key_path("held_out") + "[" + std::to_string(i) + "]";
        ObjectReader e(entries[i], entry_path);
        const int d = resolve_label(e.raw("domain"), data.domain_names, entry_path + ".domain");
        const int s = resolve_label(e.raw("condition"), data.condition_names, entry_path + ".condition");
        e.finish();
        plan.held_out.emplace_back(d, s);
    }
    r.finish();
    return plan;
}

RunConfig run_config_from_json(const json& j) {
    ObjectReader r(j, "config");
    RunConfig rc;
    if (r.has("model")) {
        const json& m = r.raw("model");
        rc.model = model_config_from_json(m, "config.model");
        rc.input_dim_given = m.contains("input_dim");
        rc.condition_count_given = m.contains("condition_count");
    }
    if (r.has("train")) {
        rc.train = train_config_from_json(r.raw("train"), "config.train");
    }
    ObjectReader data(r.raw("data"), "config.data");
    const bool has_csv = data.has("csv");
    const bool has_synth = data.has("synthetic");
    if (has_csv == has_synth) {
        throw ConfigError("config.data: exactly one of 'csv' or 'synthetic' is required");
    }
    if (has_csv) {
        ObjectReader csv(data.raw("csv"), "config.data.csv");
        CsvSource src;
        src.path = csv.require<std::string>("path");
        src.schema.condition_col = csv.get<std::string>("condition_col", src.schema.condition_col);
        src.schema.domain_col = csv.get<std::string>("domain_col", src.schema.domain_col);
        csv.finish();
        rc.data = src;
    } else {
        rc.data = synthetic_spec_from_json(data.raw("synthetic"), "config.data.synthetic");
    }
    data.finish();
    rc.holdout = r.get<json>("holdout", json::object());
    rc.output_dir = r.get<std::string>("output_dir", rc.output_dir);
    r.finish();
    return rc;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FileError("cannot open '" + path.string() + "' for reading");
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FileError("cannot open '" + path.string() + "' for writing");
    }
    out << text;
    if (!out) {
        throw FileError("write to '" + path.string() + "' failed");
    }
}

json to_json(const Checkpoint& ck) {
    json tensors = json::array();
    const auto names = ck.params.tensor_names();
    const auto values = ck.params.tensors();
    for (std::size_t i = 0; i < values.size(); ++i) {
        tensors.push_back(json{{"name", names[i]},
                               {"shape", values[i]->shape()},
                               {"values", std::vector<double>(values[i]->values().begin(), values[i]->values().end())}});
    }
    return json{{"format_version", ck.format_version},
                {"model_config", to_json(ck.model_config)},
                {"tensors", tensors},
                {"standardizer", json{{"mean", ck.standardizer.mean}, {"scale", ck.standardizer.scale}}},
                {"feature_names", ck.feature_names},
                {"condition_names", ck.condition_names},
                {"domain_names", ck.domain_names},
                {"seed", ck.seed},
                {"final_epoch", ck.final_epoch}};
}

Checkpoint checkpoint_from_json(const json& j) {
    ObjectReader r(j, "checkpoint");
    Checkpoint ck;
    ck.format_version = r.require<int>("format_version");
    if (ck.format_version != kCheckpointVersion) {
        throw ConfigError("checkpoint: unsupported format_version " + std::to_string(ck.format_version));
    }
    ck.model_config = model_config_from_json(r.raw("model_config"), "checkpoint.model_config");
    validate_as_config("checkpoint.model_config", [&] { ck.model_config.validate(); });
    ck.params = ModelParams::zeros(ck.model_config);
    const auto expected_names = ck.params.tensor_names();
    auto slots = ck.params.tensors();
    const json& tensors = r.raw("tensors");
    if (!tensors.is_array() || tensors.size() != slots.size()) {
        throw ConfigError("checkpoint.tensors: expected " + std::to_string(slots.size()) + " tensors");
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const std::string path = "checkpoint.tensors[" + std::to_string(i) + "]";
        ObjectReader t(tensors[i], path);
        const auto name = t.require<std::string>("name");
        const auto shape = t.require<std::vector<std::size_t>>("shape");
        auto values = t.require<std::vector<double>>("values");
        t.finish();
        if (name != expected_names[i]) {
            throw ConfigError(path + ": expected tensor '" + expected_names[i] + "', found '" + name + "'");
        }
        try {
            Tensor loaded = Tensor::from_external(shape, std::move(values));
            if (!loaded.same_shape(*slots[i])) {
                throw ConfigError(path + ": shape " + loaded.shape_string() + " does not match config (" +
                                  slots[i]->shape_string() + ")");
            }
            *slots[i] = std::move(loaded);
        } catch (const DimensionError& e) {
            throw ConfigError(path + ": " + e.what());
        }
    }
    ObjectReader st(r.raw("standardizer"), "checkpoint.standardizer");
    ck.standardizer.mean = st.require<std::vector<double>>("mean");
    ck.standardizer.scale = st.require<std::vector<double>>("scale");
    st.finish();
    if (ck.standardizer.mean.size() != ck.model_config.input_dim ||
        ck.standardizer.scale.size() != ck.model_config.input_dim) {
        throw ConfigError("checkpoint.standardizer: length does not match input_dim");
    }
    ck.feature_names = r.require<std::vector<std::string>>("feature_names");
    ck.condition_names = r.require<std::vector<std::string>>("condition_names");
    ck.domain_names = r.require<std::vector<std::string>>("domain_names");
    if (ck.feature_names.size() != ck.model_config.input_dim ||
        ck.condition_names.size() != ck.model_config.condition_count) {
        throw ConfigError("checkpoint: feature/condition name tables do not match the model config");
    }
    ck.seed = r.require<std::uint64_t>("seed");
    ck.final_epoch = r.require<std::size_t>("final_epoch");
    r.finish();
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    write_text_file(path, to_json(checkpoint).dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json_file(path)); }

void write_loss_trace(const LossTrace& trace, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "epoch,step,total,recon,kl,mmd\n";
    for (const auto& rec : trace) {
        out << rec.epoch << ',' << rec.step << ',' << format_double(rec.total) << ',' << format_double(rec.recon)
            << ',' << format_double(rec.kl) << ',' << format_double(rec.mmd) << '\n';
    }
    write_text_file(path, out.str());
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace trvae
