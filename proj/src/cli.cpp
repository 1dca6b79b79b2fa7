#include "trvae/cli.hpp"

#include "trvae/error.hpp"
#include "trvae/eval.hpp"
#include "trvae/gradcheck.hpp"
#include "trvae/io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace trvae::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kVersion = "1.0.0";

int resolve_condition(const std::string& label, const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == label) {
            return static_cast<int>(i);
        }
    }
    char* end = nullptr;
    const long idx = std::strtol(label.c_str(), &end, 10);
    if (!label.empty() && end != nullptr && *end == '\0' && idx >= 0 && static_cast<std::size_t>(idx) < names.size()) {
        return static_cast<int>(idx);
    }
    throw ConfigError("unknown condition '" + label + "'");
}

/// Re-index a dataset's labels onto the checkpoint's condition table (files read on their
/// own number labels by first appearance).
Dataset align_conditions(const Dataset& data, const std::vector<std::string>& names) {
    Dataset out = data;
    for (std::size_t r = 0; r < data.rows(); ++r) {
        const std::string& label = data.condition_names[data.condition[r]];
        bool found = false;
        for (std::size_t i = 0; i < names.size() && !found; ++i) {
            if (names[i] == label) {
                out.condition[r] = static_cast<int>(i);
                found = true;
            }
        }
        if (!found) {
            throw ContractError("condition '" + label + "' is not known to the checkpoint");
        }
    }
    out.condition_names = names;
    return out;
}

Dataset filter_rows(const Dataset& data, int condition, const std::string& domain) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < data.rows(); ++r) {
        if (data.condition[r] != condition) {
            continue;
        }
        if (!domain.empty() && data.domain_names[data.domain[r]] != domain) {
            continue;
        }
        rows.push_back(r);
    }
    if (rows.empty()) {
        throw ContractError("no rows with condition '" + data.condition_names.at(condition) + "'" +
                            (domain.empty() ? std::string() : " in domain '" + domain + "'"));
    }
    return data.select(rows);
}

void check_feature_dims(const Dataset& data, const Checkpoint& ck) {
    if (data.cols() != ck.model_config.input_dim) {
        throw ContractError("input has p=" + std::to_string(data.cols()) + " features, checkpoint expects p=" +
                            std::to_string(ck.model_config.input_dim));
    }
}

std::optional<std::uint64_t> seed_from_env() {
    const char* env = std::getenv("TRVAE_SEED");
    if (env == nullptr || *env == '\0') {
        return std::nullopt;
    }
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == nullptr || *end != '\0') {
        throw ConfigError("TRVAE_SEED must be an unsigned integer, got '" + std::string(env) + "'");
    }
    return v;
}

Layer layer_from_string(const std::string& s) {
    if (s == "z") {
        return Layer::z;
    }
    if (s == "y1") {
        return Layer::y1;
    }
    throw ConfigError("layer must be 'z' or 'y1', got '" + s + "'");
}

struct SynthArgs {
    std::string spec;
    std::string out;
    std::string truth;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
    const SyntheticSpec spec = a.spec.empty() ? SyntheticSpec{} : synthetic_spec_from_json(read_json_file(a.spec), "spec");
    if (spec.condition_count < 2) {
        throw ConfigError("spec.condition_count: need at least 2 conditions (nothing to transform)");
    }
    auto [data, truth] = synth_shift(spec);
    write_csv(data, a.out);
    fs::path truth_path = a.truth;
    if (truth_path.empty()) {
        truth_path = fs::path(a.out).replace_extension(".truth.json");
    }
    write_text_file(truth_path, to_json(truth).dump(2) + "\n");
    out << "wrote " << data.rows() << " rows to " << a.out << " and ground truth to " << truth_path.string() << "\n";
}

struct TrainArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
    const json config_json = read_json_file(a.config);
    RunConfig rc = run_config_from_json(config_json);
    if (auto env = seed_from_env()) {
        rc.train.seed = *env;
    }
    if (a.seed) {
        rc.train.seed = *a.seed;
    }
    if (!a.out_dir.empty()) {
        rc.output_dir = a.out_dir;
    }

    const fs::path dir = rc.output_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw FileError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }

    Dataset data;
    CsvSchema schema;
    if (const auto* csv = std::get_if<CsvSource>(&rc.data)) {
        schema = csv->schema;
        data = load_csv(csv->path, schema);
    } else {
        const auto& spec = std::get<SyntheticSpec>(rc.data);
        if (spec.condition_count < 2) {
            throw ConfigError("config.data.synthetic.condition_count: need at least 2 conditions");
        }
        data = synth_shift(spec).first;
        write_csv(data, dir / "data.csv", schema);
    }

    const HoldoutPlan plan = holdout_plan_from_json(rc.holdout, data, "config.holdout");
    auto [train_set, heldout] = split_holdout(data, plan);

    ModelConfig mc = rc.model;
    if (rc.input_dim_given && mc.input_dim != data.cols()) {
        throw ConfigError("config.model.input_dim is " + std::to_string(mc.input_dim) + " but the data has " +
                          std::to_string(data.cols()) + " features");
    }
    if (rc.condition_count_given && mc.condition_count != data.condition_names.size()) {
        throw ConfigError("config.model.condition_count does not match the data's " +
                          std::to_string(data.condition_names.size()) + " conditions");
    }
    mc.input_dim = data.cols();
    mc.condition_count = data.condition_names.size();
    mc.validate();

    FitResult fitted = fit(train_set, mc, rc.train);

    Checkpoint ck;
    ck.model_config = mc;
    ck.params = fitted.model.params;
    ck.standardizer = fitted.model.scaler;
    ck.feature_names = data.feature_names;
    ck.condition_names = data.condition_names;
    ck.domain_names = data.domain_names;
    ck.seed = rc.train.seed;
    ck.final_epoch = fitted.epochs_run;
    save_checkpoint(ck, dir / "checkpoint.json");
    write_loss_trace(fitted.trace, dir / "loss.csv");
    if (!heldout.empty()) {
        write_csv(heldout, dir / "heldout.csv", schema);
    }

    json manifest{{"program", "trvae"},
                  {"version", kVersion},
                  {"checkpoint_format", kCheckpointVersion},
                  {"config_hash", "fnv1a64:" + fnv1a_hex(config_json.dump())},
                  {"seed", rc.train.seed},
                  {"epochs_run", fitted.epochs_run},
                  {"train_rows", train_set.rows()},
                  {"heldout_rows", heldout.rows()},
                  {"model", to_json(mc)},
                  {"train", to_json(rc.train)}};
    const std::set<int> train_conditions(train_set.condition.begin(), train_set.condition.end());
    if (train_conditions.size() >= 2) {
        const Dataset scaled = fitted.model.scaler.apply(train_set);
        SplitMix64 init_rng(rc.train.seed);
        const ModelParams init = ModelParams::initialize(mc, init_rng);
        manifest["compactness"] = {
            {"before", to_json(compactness_report(init, mc, scaled), data.condition_names)},
            {"after", to_json(compactness_report(fitted.model.params, mc, scaled), data.condition_names)}};
    }
    if (!fitted.trace.empty()) {
        const auto& last = fitted.trace.back();
        manifest["final_step"] = {{"epoch", last.epoch}, {"step", last.step}, {"total", last.total},
                                  {"recon", last.recon}, {"kl", last.kl},     {"mmd", last.mmd}};
    }
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    out << "trained " << fitted.epochs_run << " epochs on " << train_set.rows() << " rows; outputs in "
        << dir.string() << "\n";
}

struct DataArgs {
    std::string checkpoint;
    std::string input;
    std::string condition_col = "condition";
    std::string domain_col = "domain";
    std::string domain;
};

struct PredictArgs : DataArgs {
    std::string source;
    std::string target;
    std::string out;
};

void cmd_predict(const PredictArgs& a, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const CsvSchema schema{a.condition_col, a.domain_col};
    const Dataset input = align_conditions(load_csv(a.input, schema), ck.condition_names);
    check_feature_dims(input, ck);
    const int s_src = resolve_condition(a.source, ck.condition_names);
    const int s_tgt = resolve_condition(a.target, ck.condition_names);
    const Dataset source = filter_rows(input, s_src, a.domain);

    Dataset result = source;
    result.x = predict_original_units(ck.fitted(), source.x, s_src, s_tgt);
    result.feature_names = ck.feature_names;
    std::fill(result.condition.begin(), result.condition.end(), s_tgt);
    write_csv(result, a.out, schema);
    out << "wrote " << result.rows() << " transformed rows to " << a.out << "\n";
}

struct EvalArgs : DataArgs {
    std::string truth;
    std::string source;
    std::string target;
    std::string out;
    std::string prediction;
    std::string embed;
    std::string embed_out;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const CsvSchema schema{a.condition_col, a.domain_col};
    const int s_src = resolve_condition(a.source, ck.condition_names);
    const int s_tgt = resolve_condition(a.target, ck.condition_names);
    const Dataset heldout = align_conditions(load_csv(a.input, schema), ck.condition_names);
    const Dataset truth_all = align_conditions(load_csv(a.truth, schema), ck.condition_names);
    check_feature_dims(heldout, ck);
    check_feature_dims(truth_all, ck);
    const Dataset source = filter_rows(heldout, s_src, a.domain);
    const Dataset truth = filter_rows(truth_all, s_tgt, a.domain);

    EvalReport report;
    if (a.prediction.empty()) {
        report = evaluate_transform(ck.fitted(), source, truth, s_src, s_tgt);
    } else {
        const Dataset pred = align_conditions(load_csv(a.prediction, schema), ck.condition_names);
        check_feature_dims(pred, ck);
        report = compare_prediction(pred.x, truth.x);
    }
    write_text_file(a.out, to_json(report).dump(2) + "\n");

    if (!a.embed.empty()) {
        const Layer layer = layer_from_string(a.embed);
        fs::path embed_path = a.embed_out;
        if (embed_path.empty()) {
            embed_path = fs::path(a.out).replace_extension("." + a.embed + ".csv");
        }
        export_embeddings(ck.params, ck.model_config, ck.standardizer.apply(source), layer, embed_path);
    }
    out << std::setprecision(17) << "r_mean=" << report.r_mean << " r_var=" << report.r_var << "\n";
}

struct EmbedArgs : DataArgs {
    std::string layer = "y1";
    std::string out;
};

void cmd_embed(const EmbedArgs& a, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const CsvSchema schema{a.condition_col, a.domain_col};
    const Dataset input = align_conditions(load_csv(a.input, schema), ck.condition_names);
    check_feature_dims(input, ck);
    if (input.empty()) {
        throw ContractError("embed: input has no rows");
    }
    export_embeddings(ck.params, ck.model_config, ck.standardizer.apply(input), layer_from_string(a.layer), a.out);
    out << "wrote " << input.rows() << " embeddings to " << a.out << "\n";
}

struct GradcheckArgs {
    std::string size = "toy";
    std::string corrupt;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
    constexpr double kThreshold = 1e-5;
    std::optional<OpKind> corrupt;
    if (!a.corrupt.empty()) {
        corrupt = op_from_name(a.corrupt);
        if (!corrupt) {
            throw ConfigError("unknown op '" + a.corrupt + "'");
        }
    }
    const GradCheckProblem problem = make_gradcheck_problem(a.size);
    testing_hooks::corrupt_backward(corrupt);
    GradCheckReport report;
    try {
        report = run_gradcheck(problem);
    } catch (...) {
        testing_hooks::corrupt_backward(std::nullopt);
        throw;
    }
    testing_hooks::corrupt_backward(std::nullopt);
    const bool pass = report.max_rel_error < kThreshold;
    out << std::setprecision(6) << "gradcheck size=" << a.size << " coordinates=" << report.coordinates
        << " max_rel_error=" << std::scientific << report.max_rel_error << " threshold=" << kThreshold << " "
        << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? kOk : kGradcheckFailed;
}

void add_data_options(CLI::App* cmd, DataArgs& a, const std::string& input_flag) {
    cmd->add_option("--checkpoint", a.checkpoint, "checkpoint JSON written by train")->required();
    cmd->add_option(input_flag, a.input, "input CSV")->required();
    cmd->add_option("--condition-col", a.condition_col, "condition column name");
    cmd->add_option("--domain-col", a.domain_col, "domain column name (empty for none)");
    cmd->add_option("--domain", a.domain, "only use rows of this domain");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"trvae: MMD-regularized conditional VAE for out-of-sample transformation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic shift benchmark");
    synth_cmd->add_option("--spec", synth.spec, "synthetic spec JSON (defaults when omitted)");
    synth_cmd->add_option("--out", synth.out, "output CSV")->required();
    synth_cmd->add_option("--truth", synth.truth, "ground-truth JSON (default: <out>.truth.json)");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train from a run config");
    train_cmd->add_option("--config", train_args.config, "run config JSON")->required();
    train_cmd->add_option("--seed", train_args.seed, "override train.seed");
    train_cmd->add_option("--out", train_args.out_dir, "override output_dir");

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "transform rows from a source to a target condition");
    add_data_options(predict_cmd, predict, "--input");
    predict_cmd->add_option("--source-condition", predict.source)->required();
    predict_cmd->add_option("--target-condition", predict.target)->required();
    predict_cmd->add_option("--out", predict.out, "output CSV")->required();

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "score transformed rows against held-out truth");
    add_data_options(eval_cmd, eval, "--heldout");
    eval_cmd->add_option("--truth", eval.truth, "CSV with ground-truth target rows")->required();
    eval_cmd->add_option("--source-condition", eval.source)->required();
    eval_cmd->add_option("--target-condition", eval.target)->required();
    eval_cmd->add_option("--out", eval.out, "report JSON")->required();
    eval_cmd->add_option("--prediction", eval.prediction, "use this prediction CSV instead of predicting");
    eval_cmd->add_option("--embed", eval.embed, "also export source embeddings at layer z or y1");
    eval_cmd->add_option("--embed-out", eval.embed_out, "embedding CSV path");

    EmbedArgs embed;
    auto* embed_cmd = app.add_subcommand("embed", "export z or y1 activations");
    add_data_options(embed_cmd, embed, "--input");
    embed_cmd->add_option("--layer", embed.layer, "z or y1");
    embed_cmd->add_option("--out", embed.out, "output CSV")->required();

    GradcheckArgs gradcheck;
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full loss gradient");
    gradcheck_cmd->add_option("--size", gradcheck.size, "toy or small");
    gradcheck_cmd->add_option("--corrupt-backward", gradcheck.corrupt, "test hook: corrupt one op's backward rule")
        ->group("");

    std::vector<std::string> argv_storage{"trvae"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_storage) {
        argv.push_back(s.data());
    }

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    }

    std::string command = "trvae";
    try {
        if (*synth_cmd) {
            command = "synth";
            cmd_synth(synth, out);
        } else if (*train_cmd) {
            command = "train";
            cmd_train(train_args, out);
        } else if (*predict_cmd) {
            command = "predict";
            cmd_predict(predict, out);
        } else if (*eval_cmd) {
            command = "eval";
            cmd_eval(eval, out);
        } else if (*embed_cmd) {
            command = "embed";
            cmd_embed(embed, out);
        } else if (*gradcheck_cmd) {
            command = "gradcheck";
            return cmd_gradcheck(gradcheck, out);
        }
    } catch (const ConfigError& e) {
        err << command << ": config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const NumericError& e) {
        err << command << ": numeric error: " << e.what() << "\n";
        return kNumericError;
    } catch (const Error& e) {
        err << command << ": data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        err << command << ": error: " << e.what() << "\n";
        return kDataError;
    }
    return kOk;
}

}  // namespace trvae::cli
