#pragma once

#include "trvae/data.hpp"
#include "trvae/eval.hpp"
#include "trvae/model.hpp"
#include "trvae/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>

namespace trvae {

using json = nlohmann::json;

// Strict JSON <-> struct conversions. Unknown keys are rejected; errors carry the key path.
json to_json(const KernelSpec& spec);
json to_json(const ModelConfig& config);
json to_json(const TrainConfig& config);
json to_json(const SyntheticSpec& spec);
json to_json(const GroundTruth& truth);
json to_json(const EvalReport& report);
json to_json(const CompactnessReport& report, const std::vector<std::string>& condition_names);

ModelConfig model_config_from_json(const json& j, const std::string& path = "model");
TrainConfig train_config_from_json(const json& j, const std::string& path = "train");
SyntheticSpec synthetic_spec_from_json(const json& j, const std::string& path = "synthetic");
/// Entries are {"domain": ..., "condition": ...} with either label names or indices.
HoldoutPlan holdout_plan_from_json(const json& j, const Dataset& data, const std::string& path = "holdout");

json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

struct CsvSource {
    std::string path;
    CsvSchema schema;
};

struct RunConfig {
    ModelConfig model;
    bool input_dim_given = false;
    bool condition_count_given = false;
    TrainConfig train;
    std::variant<CsvSource, SyntheticSpec> data;
    json holdout = json::object();
    std::string output_dir = "trvae-run";
};

RunConfig run_config_from_json(const json& j);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int format_version = kCheckpointVersion;
    ModelConfig model_config;
    ModelParams params;
    Standardizer standardizer;
    std::vector<std::string> feature_names;
    std::vector<std::string> condition_names;
    std::vector<std::string> domain_names;
    std::uint64_t seed = 0;
    std::size_t final_epoch = 0;

    FittedModel fitted() const { return FittedModel{model_config, params, standardizer}; }
};

json to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const json& j);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_loss_trace(const LossTrace& trace, const std::filesystem::path& path);

/// 64-bit FNV-1a of the bytes, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace trvae
