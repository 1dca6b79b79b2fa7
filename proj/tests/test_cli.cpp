#include "helpers.hpp"

#include "trvae/cli.hpp"
#include "trvae/io.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

using namespace trvae;
using test_util::slurp;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

json small_config(const fs::path& dir, const std::string& layer = "y1") {
    return json{
        {"model",
         {{"encoder_hidden", {16}}, {"z_dim", 3}, {"g1_dim", 8}, {"g2_hidden", {16}}, {"mmd_layer", layer}}},
        {"train", {{"epochs", 2}, {"batch_size", 32}, {"seed", 3}}},
        {"data",
         {{"synthetic", {{"domain_count", 2}, {"dims", 6}, {"samples_per_cell", 30}, {"seed", 1}}}}},
        {"holdout", {{"held_out", {{{"domain", "d1"}, {"condition", "s1"}}}}}},
        {"output_dir", (dir / "run").string()}};
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
    const fs::path p = dir / name;
    write_text_file(p, j.dump(2));
    return p;
}

}  // namespace

TEST_CASE("synth command") {
    const auto dir = test_util::scratch_dir("cli-synth");
    const Result r = run({"synth", "--out", (dir / "a.csv").string()});
    REQUIRE(r.code == cli::kOk);
    const Dataset d = load_csv(dir / "a.csv");
    CHECK(d.rows() == 3 * 2 * 500);
    CHECK(fs::exists(dir / "a.truth.json"));
    const json truth = read_json_file(dir / "a.truth.json");
    CHECK(truth.at("cells").size() == 6);

    REQUIRE(run({"synth", "--out", (dir / "b.csv").string()}).code == cli::kOk);
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    CHECK(slurp(dir / "a.truth.json") == slurp(dir / "b.truth.json"));

    const auto one = write_config(dir, json{{"condition_count", 1}}, "one.json");
    CHECK(run({"synth", "--spec", one.string(), "--out", (dir / "c.csv").string()}).code == cli::kConfigError);

    const auto typo = write_config(dir, json{{"dimz", 4}}, "typo.json");
    const Result bad = run({"synth", "--spec", typo.string(), "--out", (dir / "c.csv").string()});
    CHECK(bad.code == cli::kConfigError);
    CHECK(bad.err.find("dimz") != std::string::npos);

    const auto wrong_type = write_config(dir, json{{"dims", "many"}}, "type.json");
    const Result typed = run({"synth", "--spec", wrong_type.string(), "--out", (dir / "c.csv").string()});
    CHECK(typed.code == cli::kConfigError);
    CHECK(typed.err.find("spec.dims") != std::string::npos);
}

TEST_CASE("train, predict and eval") {
    const auto dir = test_util::scratch_dir("cli-train");
    const auto config = write_config(dir, small_config(dir));
    REQUIRE(run({"train", "--config", config.string()}).code == cli::kOk);
    const fs::path run_dir = dir / "run";
    for (const char* f : {"checkpoint.json", "loss.csv", "manifest.json", "data.csv", "heldout.csv"}) {
        CAPTURE(f);
        CHECK(fs::exists(run_dir / f));
    }
    const json manifest = read_json_file(run_dir / "manifest.json");
    CHECK(manifest.at("seed") == 3);
    CHECK(manifest.at("epochs_run") == 2);
    CHECK(manifest.at("config_hash").get<std::string>().starts_with("fnv1a64:"));

    SUBCASE("determinism") {
        REQUIRE(run({"train", "--config", config.string(), "--out", (dir / "again").string()}).code == cli::kOk);
        CHECK(slurp(run_dir / "checkpoint.json") == slurp(dir / "again" / "checkpoint.json"));
        CHECK(slurp(run_dir / "loss.csv") == slurp(dir / "again" / "loss.csv"));
    }

    SUBCASE("checkpoint round trip") {
        const Checkpoint ck = load_checkpoint(run_dir / "checkpoint.json");
        save_checkpoint(ck, dir / "copy.json");
        CHECK(slurp(dir / "copy.json") == slurp(run_dir / "checkpoint.json"));
        CHECK(ck.final_epoch == 2);
        CHECK(ck.condition_names == std::vector<std::string>{"s0", "s1"});
    }

    SUBCASE("seed precedence") {
        ::setenv("TRVAE_SEED", "11", 1);
        REQUIRE(run({"train", "--config", config.string(), "--out", (dir / "env").string()}).code == cli::kOk);
        REQUIRE(run({"train", "--config", config.string(), "--out", (dir / "flag").string(), "--seed", "12"}).code ==
                cli::kOk);
        ::unsetenv("TRVAE_SEED");
        CHECK(load_checkpoint(dir / "env" / "checkpoint.json").seed == 11);
        CHECK(load_checkpoint(dir / "flag" / "checkpoint.json").seed == 12);
        CHECK(slurp(dir / "env" / "checkpoint.json") != slurp(run_dir / "checkpoint.json"));
    }

    SUBCASE("layer choice changes the result") {
        const auto none = write_config(dir, small_config(dir, "none"), "none.json");
        REQUIRE(run({"train", "--config", none.string(), "--out", (dir / "none").string()}).code == cli::kOk);
        CHECK(load_checkpoint(dir / "none" / "checkpoint.json").params !=
              load_checkpoint(run_dir / "checkpoint.json").params);
    }

    SUBCASE("prediction") {
        const std::string ck = (run_dir / "checkpoint.json").string();
        const std::string data = (run_dir / "data.csv").string();
        REQUIRE(run({"predict", "--checkpoint", ck, "--input", data, "--source-condition", "s0",
                     "--target-condition", "s0", "--out", (dir / "recon.csv").string()})
                    .code == cli::kOk);
        const Dataset recon = load_csv(dir / "recon.csv");
        const Dataset all = load_csv(data);
        const Dataset controls = all.select(all.rows_with_condition(0));
        CHECK(recon.rows() == controls.rows());
        CHECK(recon.feature_names == all.feature_names);
        const Checkpoint loaded = load_checkpoint(ck);
        const Tensor expected = predict_original_units(loaded.fitted(), controls.x, 0, 0);
        CHECK(recon.x == expected);

        const std::string pred = (dir / "pred.csv").string();
        REQUIRE(run({"predict", "--checkpoint", ck, "--input", data, "--source-condition", "s0",
                     "--target-condition", "s1", "--domain", "d1", "--out", pred})
                    .code == cli::kOk);
        const Dataset p = load_csv(pred);
        CHECK(p.rows() == 30);
        CHECK(p.condition_names == std::vector<std::string>{"s1"});

        // in-process evaluation and the piped prediction agree
        const std::string heldout = (run_dir / "heldout.csv").string();
        const std::string truth = heldout;
        REQUIRE(run({"eval", "--checkpoint", ck, "--heldout", data, "--truth", truth, "--source-condition", "s0",
                     "--target-condition", "s1", "--domain", "d1", "--out", (dir / "direct.json").string()})
                    .code == cli::kOk);
        REQUIRE(run({"eval", "--checkpoint", ck, "--heldout", data, "--truth", truth, "--source-condition", "s0",
                     "--target-condition", "s1", "--domain", "d1", "--prediction", pred, "--out",
                     (dir / "piped.json").string(), "--embed", "y1"})
                    .code == cli::kOk);
        const json direct = read_json_file(dir / "direct.json");
        const json piped = read_json_file(dir / "piped.json");
        CHECK(std::abs(direct.at("r_mean").get<double>() - piped.at("r_mean").get<double>()) <= 1e-12);
        std::vector<std::string> keys;
        for (const auto& [k, v] : direct.items()) {
            keys.push_back(k);
        }
        std::sort(keys.begin(), keys.end());
        CHECK(keys == std::vector<std::string>{"means_pred", "means_true", "n_source", "n_target", "r_mean", "r_var",
                                               "vars_pred", "vars_true"});
        CHECK(fs::exists(dir / "piped.y1.csv"));

        // a prediction scored against itself
        REQUIRE(run({"eval", "--checkpoint", ck, "--heldout", data, "--truth", pred, "--source-condition", "s0",
                     "--target-condition", "s1", "--prediction", pred, "--out", (dir / "self.json").string()})
                    .code == cli::kOk);
        CHECK(read_json_file(dir / "self.json").at("r_mean").get<double>() == doctest::Approx(1.0).epsilon(1e-15));

        REQUIRE(run({"embed", "--checkpoint", ck, "--input", data, "--layer", "z", "--out",
                     (dir / "z.csv").string()})
                    .code == cli::kOk);
        CHECK(load_csv(dir / "z.csv").cols() == 3);
    }

    SUBCASE("dimension mismatch") {
        SyntheticSpec s;
        s.dims = 4;
        s.samples_per_cell = 3;
        write_csv(synth_shift(s).first, dir / "narrow.csv");
        const Result r = run({"predict", "--checkpoint", (run_dir / "checkpoint.json").string(), "--input",
                              (dir / "narrow.csv").string(), "--source-condition", "s0", "--target-condition", "s1",
                              "--out", (dir / "x.csv").string()});
        CHECK(r.code == cli::kDataError);
        CHECK(r.err.find("p=4") != std::string::npos);
        CHECK(r.err.find("p=6") != std::string::npos);
    }
}

TEST_CASE("zero epochs writes the initialization") {
    const auto dir = test_util::scratch_dir("cli-init");
    json j = small_config(dir);
    j["train"]["epochs"] = 0;
    REQUIRE(run({"train", "--config", write_config(dir, j).string()}).code == cli::kOk);
    const Checkpoint ck = load_checkpoint(dir / "run" / "checkpoint.json");
    SplitMix64 rng(3);
    CHECK(ck.params == ModelParams::initialize(ck.model_config, rng));
    CHECK(ck.final_epoch == 0);
}

TEST_CASE("config errors") {
    const auto dir = test_util::scratch_dir("cli-config");
    json typo = small_config(dir);
    typo["train"]["epoch"] = 3;
    const Result r = run({"train", "--config", write_config(dir, typo).string()});
    CHECK(r.code == cli::kConfigError);
    CHECK(r.err.find("config.train.epoch") != std::string::npos);

    json both = small_config(dir);
    both["data"]["csv"] = {{"path", "x.csv"}};
    CHECK(run({"train", "--config", write_config(dir, both).string()}).code == cli::kConfigError);

    json gammas = small_config(dir);
    gammas["model"]["kernel"] = {{"gammas", {-1.0}}};
    CHECK(run({"train", "--config", write_config(dir, gammas).string()}).code == cli::kConfigError);

    json missing = small_config(dir);
    missing["data"] = {{"csv", {{"path", (dir / "nope.csv").string()}}}};
    CHECK(run({"train", "--config", write_config(dir, missing).string()}).code == cli::kDataError);

    CHECK(run({"train"}).code == cli::kConfigError);
    CHECK(run({"frobnicate"}).code == cli::kConfigError);
    CHECK(run({"train", "--config", (dir / "absent.json").string()}).code == cli::kDataError);
}

TEST_CASE("gradcheck command") {
    const Result r = run({"gradcheck"});
    CHECK(r.code == cli::kOk);
    CHECK(r.out.find("max_rel_error=") != std::string::npos);
    CHECK(run({"gradcheck"}).out == r.out);
    CHECK(run({"gradcheck", "--size", "small"}).code == cli::kOk);
    CHECK(run({"gradcheck", "--corrupt-backward", "leaky_relu"}).code == cli::kGradcheckFailed);
    CHECK(run({"gradcheck", "--corrupt-backward", "pairwise_sq_dist"}).code == cli::kGradcheckFailed);
    CHECK(run({"gradcheck"}).code == cli::kOk);
    CHECK(run({"gradcheck", "--size", "huge"}).code == cli::kConfigError);
}
