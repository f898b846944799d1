#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "deepsquare/data.hpp"
#include "deepsquare/model_spec.hpp"
#include "deepsquare/network.hpp"

namespace deepsquare {

struct TrainConfig {
    double lr0 = 0.1;
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 5e-4;
    std::size_t batch_size = 128;
    std::size_t epochs = 100;
    std::size_t warmup_epochs = 5;
    std::uint64_t seed = 1;
    double dropout_rate = 0.2;
    Augmentation augmentation = Augmentation::crop_flip;
    bool shared_softmin_scale = true;

    // Throws Error naming the offending field.
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& doc);

// Linear warmup to lr0 over warmup_steps, then half-cosine decay to 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double lr0);

// g <- g + wd p; v <- m v + g; p <- p - lr (g + m v), or p <- p - lr v without nesterov.
void sgd_nesterov_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                       double lr, double momentum, double weight_decay, bool nesterov = true);

// Velocity buffers for every parameter of a network.
class SgdOptimizer {
public:
    SgdOptimizer(const Network& net, double momentum, double weight_decay, bool nesterov);
    void step(Network& net, double lr);

private:
    std::vector<std::vector<double>> velocity_;
    double momentum_, weight_decay_;
    bool nesterov_;
};

// Sample order for one epoch; depends only on (n, seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
};

struct ExperimentResult {
    EpochRecord initial;              // epoch 0: metrics at initialization
    std::vector<EpochRecord> epochs;  // one per completed epoch
    bool diverged = false;
    std::optional<std::size_t> diverged_epoch;
    double wall_seconds = 0.0;
    std::size_t parameter_count = 0;

    double last_test_acc() const { return epochs.empty() ? initial.test_acc : epochs.back().test_acc; }
    double best_test_acc() const;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

// Trains `net` in place. Shuffling, augmentation and dropout streams derive from config.seed.
ExperimentResult run_training(Network& net, const ImageDataset& train, const ImageDataset& test,
                              const TrainConfig& config, const ProgressFn& progress = {});

// Builds the network from spec with init seed derived from config.seed, then trains it.
ExperimentResult run_training(const ModelSpec& spec, const ImageDataset& train, const ImageDataset& test,
                              const TrainConfig& config, const ProgressFn& progress = {});

std::uint64_t init_seed_for(std::uint64_t seed);

// Mean loss and accuracy in inference mode.
std::pair<double, double> evaluate(Network& net, const ImageDataset& data, std::size_t batch_size = 250);

// "%.6g" formatting used by every CSV writer.
std::string format_g6(double v);

std::string metrics_csv(const ExperimentResult& result);
nlohmann::json result_summary(const ExperimentResult& result);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace deepsquare
