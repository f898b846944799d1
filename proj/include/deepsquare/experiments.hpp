#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "deepsquare/data.hpp"
#include "deepsquare/model_spec.hpp"
#include "deepsquare/network.hpp"
#include "deepsquare/train.hpp"

namespace deepsquare {

// Outcome of one command. ok is false when the work completed but a check failed
// (a gradient above tolerance); configuration and I/O problems throw instead.
struct CommandOutcome {
    bool ok = true;
    nlohmann::json summary;
    std::filesystem::path summary_path;  // empty when nothing was written
};

std::string version_string();

// Commands. Options are JSON objects; unknown keys are rejected. Every command that is
// given an "out" directory writes its artifacts and a manifest.json there.
//
// gradcheck: {"ops": [...], "seeds": 5, "tolerance": 1e-4, "inject_fault": [...], "out": dir}
// spiral:    {"task": "reg"|"cls", "activation": "both"|"relu"|"relu_square", "seeds": [...],
//             "epochs", "hidden", "lr0", "noise_sd", "n_train", "n_test", "grid_resolution", "jobs", "out"}
// boundary:  {"weights": [w11, w12, w21, w22, b1, b2] | "weights_file": path | "model_file": path,
//             "bounds": [x_min, x_max, y_min, y_max], "resolution": [nx, ny], "out"}
// train:     {"config": path, "out", "progress": bool}
// ablate:    {"suite": "table2"|"table3"|"table4-mini", "seeds": [...], "config": path, "data_dir": path,
//             "jobs", "out", "progress": bool}
CommandOutcome run_command(std::string_view command, const nlohmann::json& options);

CommandOutcome cmd_gradcheck(const nlohmann::json& options);
CommandOutcome cmd_spiral(const nlohmann::json& options);
CommandOutcome cmd_boundary(const nlohmann::json& options);
CommandOutcome cmd_train(const nlohmann::json& options);
CommandOutcome cmd_ablate(const nlohmann::json& options);

// --- Experiment configuration: {"model": {...}, "data": {...}, "train": {...}}.

struct ModelConfig {
    std::string builder = "vanilla_cnn";  // vanilla_cnn | mini_resnet | spec
    std::string variant = "original";     // vanilla variant code, or mini resnet flags ("sp+sex")
    std::size_t num_blocks = 3;
    std::size_t num_classes = 10;
    bool shared_alpha = false;
    nlohmann::json spec;  // builder == spec: a model spec document
};

struct DataConfig {
    std::string cifar10_dir;
    std::string train_file, test_file;  // whole-record CIFAR-10 files
    std::size_t synthetic_train = 0, synthetic_test = 0;
    std::uint64_t synthetic_seed = 1;
    std::size_t train_limit = 0, test_limit = 0;  // 0 keeps everything
};

struct ExperimentConfig {
    ModelConfig model;
    DataConfig data;
    TrainConfig train;
};

ModelConfig model_config_from_json(const nlohmann::json& doc);
DataConfig data_config_from_json(const nlohmann::json& doc);
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const DataConfig& config);
nlohmann::json to_json(const ExperimentConfig& config);

// Errors name the offending field, e.g. "model.variant: ...".
ModelSpec build_model(const ModelConfig& model, const TrainConfig& train);
CifarSplit load_data(const DataConfig& data);

// Rows of an ablation suite; the first is the baseline.
std::vector<std::string> ablation_rows(std::string_view suite);

// Network parameters plus spec, for handing trained models between commands.
nlohmann::json network_to_json(const Network& net);
Network network_from_json(const nlohmann::json& doc);

nlohmann::json read_json_file(const std::filesystem::path& path);
std::vector<std::uint64_t> parse_seed_list(std::string_view text);  // "1..5" or "1,2,3"

}  // namespace deepsquare
