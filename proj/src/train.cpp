#include "deepsquare/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "deepsquare/model_json.hpp"

namespace deepsquare {

using nlohmann::json;

namespace {
constexpr std::uint64_t kShuffleTag = 0x5f1e;
constexpr std::uint64_t kAugmentTag = 0xa06;
constexpr std::uint64_t kDropoutTag = 0xd0;
constexpr std::uint64_t kInitTag = 0x1417;
}  // namespace

void TrainConfig::validate() const {
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw Error("train.lr0 must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("train.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw Error("train.weight_decay must be >= 0");
    if (batch_size == 0) throw Error("train.batch_size must be positive");
    if (epochs > 0 && warmup_epochs >= epochs) throw Error("train.warmup_epochs must be smaller than train.epochs");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("train.dropout_rate must lie in [0, 1)");
}

json to_json(const TrainConfig& c) {
    return {{"lr0", c.lr0},
            {"momentum", c.momentum},
            {"nesterov", c.nesterov},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"warmup_epochs", c.warmup_epochs},
            {"seed", c.seed},
            {"dropout_rate", c.dropout_rate},
            {"augmentation", c.augmentation == Augmentation::none ? "none" : "crop-flip"},
            {"shared_softmin_scale", c.shared_softmin_scale}};
}

TrainConfig train_config_from_json(const json& doc) {
    require_known_keys(doc,
                       {"lr0", "momentum", "nesterov", "weight_decay", "batch_size", "epochs", "warmup_epochs", "seed",
                        "dropout_rate", "augmentation", "shared_softmin_scale"},
                       "train");
    TrainConfig c;
    auto read = [&](const char* key, auto& field) {
        if (!doc.contains(key)) return;
        try {
            field = doc.at(key).get<std::decay_t<decltype(field)>>();
        } catch (const json::exception&) {
            throw Error(std::string("train.") + key + " has the wrong type");
        }
    };
    read("lr0", c.lr0);
    read("momentum", c.momentum);
    read("nesterov", c.nesterov);
    read("weight_decay", c.weight_decay);
    read("batch_size", c.batch_size);
    read("epochs", c.epochs);
    read("warmup_epochs", c.warmup_epochs);
    read("seed", c.seed);
    read("dropout_rate", c.dropout_rate);
    read("shared_softmin_scale", c.shared_softmin_scale);
    if (doc.contains("augmentation")) {
        std::string aug;
        read("augmentation", aug);
        if (aug == "none") c.augmentation = Augmentation::none;
        else if (aug == "crop-flip") c.augmentation = Augmentation::crop_flip;
        else throw Error("train.augmentation: unknown value '" + aug + "' (expected none or crop-flip)");
    }
    c.validate();
    return c;
}

double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double lr0) {
    if (total_steps <= warmup_steps) throw Error("lr_at: total_steps must exceed warmup_steps");
    if (step > total_steps) throw Error("lr_at: step beyond total_steps");
    if (step < warmup_steps) return lr0 * double(step + 1) / double(warmup_steps);
    const double progress = double(step - warmup_steps) / double(total_steps - warmup_steps);
    return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * progress));
}

void sgd_nesterov_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                       double lr, double momentum, double weight_decay, bool nesterov) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw Error("sgd_nesterov_step: parameter, gradient and velocity sizes differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i] + weight_decay * params[i];
        velocity[i] = momentum * velocity[i] + g;
        params[i] -= nesterov ? lr * (g + momentum * velocity[i]) : lr * velocity[i];
    }
}

SgdOptimizer::SgdOptimizer(const Network& net, double momentum, double weight_decay, bool nesterov)
    : momentum_(momentum), weight_decay_(weight_decay), nesterov_(nesterov) {
    for (const auto& p : net.parameters()) velocity_.emplace_back(p.value.size(), 0.0);
}

void SgdOptimizer::step(Network& net, double lr) {
    auto& params = net.parameters();
    if (params.size() != velocity_.size()) throw Error("optimizer: network parameter list changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.value.has_grad()) continue;
        std::span<const double> g = std::as_const(p.value).grad();
        sgd_nesterov_step(p.value.data(), g, velocity_[i], lr, momentum_, p.decay ? weight_decay_ : 0.0, nesterov_);
    }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, {kShuffleTag, epoch});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

double ExperimentResult::best_test_acc() const {
    double best = initial.test_acc;
    for (const auto& e : epochs) best = std::max(best, e.test_acc);
    return best;
}

std::uint64_t init_seed_for(std::uint64_t seed) { return derive_seed(seed, {kInitTag}); }

namespace {

std::size_t count_correct(const Tensor& logits, std::span<const std::size_t> labels) {
    const std::size_t classes = logits.dim(1);
    auto d = logits.data();
    std::size_t correct = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < classes; ++k)
            if (d[n * classes + k] > d[n * classes + best]) best = k;
        correct += best == labels[n];
    }
    return correct;
}

void require_classifier(const Network& net) {
    if (net.spec().head != Head::softmax_ce) throw Error("image training requires a softmax_ce head");
    if (net.spec().input != Shape{kCifarSide, kCifarSide, kCifarChannels})
        throw Error("image training requires 32x32x3 input, got " + shape_string(net.spec().input));
}

}  // namespace

std::pair<double, double> evaluate(Network& net, const ImageDataset& data, std::size_t batch_size) {
    if (data.size() == 0) return {0.0, 0.0};
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t end = std::min(data.size(), start + batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        Tape tape;
        Var logits = net.forward(tape, data.batch(idx), Mode::inference);
        const auto labels = data.batch_labels(idx);
        Var loss = softmax_ce(logits, labels);
        loss_sum += loss.value().item() * double(idx.size());
        correct += count_correct(logits.value(), labels);
    }
    return {loss_sum / double(data.size()), double(correct) / double(data.size())};
}

ExperimentResult run_training(Network& net, const ImageDataset& train, const ImageDataset& test,
                              const TrainConfig& config, const ProgressFn& progress) {
    config.validate();
    require_classifier(net);
    if (train.size() == 0) throw Error("training set is empty");
    const auto t0 = std::chrono::steady_clock::now();

    ExperimentResult result;
    result.parameter_count = net.parameter_count();
    {
        auto [trl, tra] = evaluate(net, train);
        auto [tel, tea] = evaluate(net, test);
        result.initial = {0, 0.0, trl, tra, tel, tea};
    }

    const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = steps_per_epoch * config.epochs;
    const std::size_t warmup_steps = steps_per_epoch * config.warmup_epochs;
    SgdOptimizer opt(net, config.momentum, config.weight_decay, config.nesterov);

    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs && !result.diverged; ++epoch) {
        const auto order = epoch_order(train.size(), config.seed, epoch);
        const double epoch_lr = lr_at(step, total_steps, warmup_steps, config.lr0);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
            const std::size_t start = b * config.batch_size;
            const std::size_t end = std::min(train.size(), start + config.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            Rng aug_rng(config.seed, {kAugmentTag, epoch, b});
            Rng drop_rng(config.seed, {kDropoutTag, epoch, b});
            const auto labels = train.batch_labels(idx);

            Tape tape;
            Var logits = net.forward(tape, train.batch(idx, config.augmentation, &aug_rng), Mode::training, &drop_rng);
            Var loss = softmax_ce(logits, labels);
            const double l = loss.value().item();
            if (!std::isfinite(l)) {
                result.diverged = true;
                result.diverged_epoch = epoch;
                break;
            }
            net.zero_grad();
            tape.backward(loss);
            opt.step(net, lr_at(step, total_steps, warmup_steps, config.lr0));
            loss_sum += l * double(idx.size());
            correct += count_correct(logits.value(), labels);
        }
        if (result.diverged) break;
        auto [tel, tea] = evaluate(net, test);
        EpochRecord rec{epoch, epoch_lr, loss_sum / double(train.size()), double(correct) / double(train.size()), tel,
                        tea};
        result.epochs.push_back(rec);
        if (progress) progress(rec);
    }
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

ExperimentResult run_training(const ModelSpec& spec, const ImageDataset& train, const ImageDataset& test,
                              const TrainConfig& config, const ProgressFn& progress) {
    config.validate();
    Network net(spec, init_seed_for(config.seed));
    return run_training(net, train, test, config, progress);
}

std::string format_g6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string metrics_csv(const ExperimentResult& result) {
    std::string out = "epoch,lr,train_loss,train_acc,test_loss,test_acc\n";
    auto row = [&](const EpochRecord& r) {
        out += std::to_string(r.epoch) + ',' + format_g6(r.lr) + ',' + format_g6(r.train_loss) + ',' +
               format_g6(r.train_acc) + ',' + format_g6(r.test_loss) + ',' + format_g6(r.test_acc) + '\n';
    };
    row(result.initial);
    for (const auto& r : result.epochs) row(r);
    return out;
}

json result_summary(const ExperimentResult& result) {
    json j = {{"epochs_completed", result.epochs.size()},
              {"diverged", result.diverged},
              {"parameter_count", result.parameter_count},
              {"initial_test_acc", result.initial.test_acc},
              {"last_test_acc", result.last_test_acc()},
              {"best_test_acc", result.best_test_acc()}};
    j["diverged_epoch"] = result.diverged_epoch ? json(*result.diverged_epoch) : json(nullptr);
    const auto& last = result.epochs.empty() ? result.initial : result.epochs.back();
    j["last_train_loss"] = std::isfinite(last.train_loss) ? json(last.train_loss) : json(nullptr);
    j["last_test_loss"] = std::isfinite(last.test_loss) ? json(last.test_loss) : json(nullptr);
    return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace deepsquare
