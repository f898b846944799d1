#include "deepsquare/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <type_traits>

#include "deepsquare/gradcheck.hpp"
#include "deepsquare/model_json.hpp"
#include "deepsquare/spiral.hpp"

#ifndef DEEPSQUARE_VERSION
#define DEEPSQUARE_VERSION "unknown"
#endif

namespace deepsquare {

using nlohmann::json;
namespace fs = std::filesystem;

std::string version_string() { return DEEPSQUARE_VERSION; }

namespace {

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

template <class T>
T option(const json& o, const char* key, T fallback) {
    if (!o.contains(key)) return fallback;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        const auto& v = o.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw Error(std::string(key) + ": expected a non-negative integer");
    }
    try {
        return o.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(std::string(key) + ": wrong type");
    }
}

std::vector<std::uint64_t> seed_option(const json& o, std::vector<std::uint64_t> fallback) {
    if (!o.contains("seeds")) return fallback;
    const auto& s = o.at("seeds");
    if (s.is_string()) return parse_seed_list(s.get<std::string>());
    auto non_negative = [](const json& v) { return v.is_number_integer() && v.get<long long>() >= 0; };
    if (non_negative(s)) return {s.get<std::uint64_t>()};
    if (s.is_array()) {
        std::vector<std::uint64_t> out;
        for (const auto& v : s) {
            if (!non_negative(v)) throw Error("seeds: expected non-negative integers");
            out.push_back(v.get<std::uint64_t>());
        }
        if (out.empty()) throw Error("seeds: empty list");
        return out;
    }
    throw Error("seeds: expected a list such as 1..5 or 1,2,3");
}

struct Manifest {
    explicit Manifest(std::string cmd, json path = nullptr) : command(std::move(cmd)), config_path(std::move(path)) {}

    std::string command;
    json config_path;
    json resolved;
    fs::path out;
    std::string started = utc_timestamp();

    void write() const {
        json m = {{"command", command},
                  {"config_path", config_path},
                  {"resolved_config", resolved},
                  {"out_dir", out.string()},
                  {"version", version_string()},
                  {"started_at", started},
                  {"finished_at", utc_timestamp()}};
        write_text_file(out / "manifest.json", m.dump(2) + "\n");
    }
};

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first exception is rethrown.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

void progress_line(bool enabled, const std::string& line) {
    if (!enabled) return;
    std::lock_guard lock(log_mutex());
    std::cerr << line << std::endl;
}

std::optional<fs::path> out_option(const json& o) {
    if (!o.contains("out") || o.at("out").is_null()) return std::nullopt;
    auto dir = fs::path(option<std::string>(o, "out", ""));
    if (dir.empty()) throw Error("out: empty path");
    fs::create_directories(dir);
    return dir;
}

fs::path resolve_relative(const fs::path& base_dir, const std::string& p) {
    fs::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
}

class FaultScope {
public:
    explicit FaultScope(std::vector<std::string> ops) : previous_(testing::corrupted_ops()) {
        testing::set_corrupted_ops(std::move(ops));
    }
    ~FaultScope() { testing::set_corrupted_ops(previous_); }

private:
    std::vector<std::string> previous_;
};

}  // namespace

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
    auto to_u64 = [&](std::string_view s) -> std::uint64_t {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string_view::npos)
            throw Error("seeds: cannot parse '" + std::string(text) + "'");
        return std::stoull(std::string(s));
    };
    std::vector<std::uint64_t> out;
    if (auto dots = text.find(".."); dots != std::string_view::npos) {
        auto lo = to_u64(text.substr(0, dots)), hi = to_u64(text.substr(dots + 2));
        if (hi < lo || hi - lo > 10000) throw Error("seeds: bad range '" + std::string(text) + "'");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
        return out;
    }
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find(',', pos);
        if (end == std::string_view::npos) end = text.size();
        out.push_back(to_u64(text.substr(pos, end - pos)));
        pos = end + 1;
    }
    return out;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(path.string() + ": malformed JSON: " + e.what());
    }
}

// --- configuration

ModelConfig model_config_from_json(const json& doc) {
    require_known_keys(doc, {"builder", "variant", "flags", "num_blocks", "num_classes", "shared_alpha", "spec"}, "model");
    ModelConfig m;
    auto read = [&](const char* key, auto& field) {
        if (!doc.contains(key)) return;
        try {
            field = doc.at(key).get<std::decay_t<decltype(field)>>();
        } catch (const json::exception&) {
            throw Error(std::string("model.") + key + " has the wrong type");
        }
    };
    read("builder", m.builder);
    read("variant", m.variant);
    if (doc.contains("flags")) {
        if (doc.contains("variant")) throw Error("model.flags: give either variant or flags, not both");
        read("flags", m.variant);
    }
    read("num_blocks", m.num_blocks);
    read("num_classes", m.num_classes);
    read("shared_alpha", m.shared_alpha);
    if (doc.contains("spec")) m.spec = doc.at("spec");
    if (m.builder != "vanilla_cnn" && m.builder != "mini_resnet" && m.builder != "spec")
        throw Error("model.builder: unknown builder '" + m.builder + "' (expected vanilla_cnn, mini_resnet or spec)");
    if (m.builder == "spec" && m.spec.is_null()) throw Error("model.spec: required when builder is spec");
    if (m.builder == "mini_resnet" && !doc.contains("variant") && !doc.contains("flags")) m.variant = "plain";
    return m;
}

DataConfig data_config_from_json(const json& doc) {
    require_known_keys(doc, {"cifar10_dir", "train_file", "test_file", "synthetic", "train_limit", "test_limit"}, "data");
    DataConfig d;
    auto str = [&](const char* key) {
        if (!doc.contains(key)) return std::string();
        if (!doc.at(key).is_string()) throw Error(std::string("data.") + key + " must be a string");
        return doc.at(key).get<std::string>();
    };
    d.cifar10_dir = str("cifar10_dir");
    d.train_file = str("train_file");
    d.test_file = str("test_file");
    if (doc.contains("synthetic")) {
        const auto& s = doc.at("synthetic");
        require_known_keys(s, {"train", "test", "seed"}, "data.synthetic");
        try {
            d.synthetic_train = s.value("train", std::size_t{64});
            d.synthetic_test = s.value("test", std::size_t{64});
            d.synthetic_seed = s.value("seed", std::uint64_t{1});
        } catch (const json::exception&) {
            throw Error("data.synthetic: expected non-negative integers");
        }
        if (d.synthetic_train == 0) throw Error("data.synthetic.train must be positive");
    }
    try {
        d.train_limit = doc.value("train_limit", std::size_t{0});
        d.test_limit = doc.value("test_limit", std::size_t{0});
    } catch (const json::exception&) {
        throw Error("data.train_limit/test_limit: expected non-negative integers");
    }
    const int sources = int(!d.cifar10_dir.empty()) + int(!d.train_file.empty() || !d.test_file.empty()) +
                        int(d.synthetic_train > 0);
    if (sources != 1) throw Error("data: specify exactly one of cifar10_dir, train_file/test_file or synthetic");
    if (!d.train_file.empty() && d.test_file.empty()) throw Error("data.test_file: required with train_file");
    if (d.train_file.empty() && !d.test_file.empty()) throw Error("data.train_file: required with test_file");
    return d;
}

json to_json(const ModelConfig& m) {
    json j = {{"builder", m.builder}, {"variant", m.variant}, {"num_classes", m.num_classes}};
    if (m.builder == "mini_resnet") {
        j["num_blocks"] = m.num_blocks;
        j["shared_alpha"] = m.shared_alpha;
    }
    if (m.builder == "spec") j["spec"] = m.spec;
    return j;
}

json to_json(const DataConfig& d) {
    json j = json::object();
    if (!d.cifar10_dir.empty()) j["cifar10_dir"] = d.cifar10_dir;
    if (!d.train_file.empty()) j["train_file"] = d.train_file;
    if (!d.test_file.empty()) j["test_file"] = d.test_file;
    if (d.synthetic_train > 0)
        j["synthetic"] = {{"train", d.synthetic_train}, {"test", d.synthetic_test}, {"seed", d.synthetic_seed}};
    j["train_limit"] = d.train_limit;
    j["test_limit"] = d.test_limit;
    return j;
}

json to_json(const ExperimentConfig& c) {
    return {{"model", to_json(c.model)}, {"data", to_json(c.data)}, {"train", to_json(c.train)}};
}

ExperimentConfig experiment_config_from_json(const json& doc) {
    require_known_keys(doc, {"model", "data", "train"}, "config");
    ExperimentConfig c;
    if (!doc.contains("model")) throw Error("config: missing 'model'");
    if (!doc.contains("data")) throw Error("config: missing 'data'");
    c.model = model_config_from_json(doc.at("model"));
    c.data = data_config_from_json(doc.at("data"));
    if (doc.contains("train")) c.train = train_config_from_json(doc.at("train"));
    return c;
}

ModelSpec build_model(const ModelConfig& m, const TrainConfig& train) {
    if (m.num_classes < 2) throw Error("model.num_classes must be at least 2");
    if (m.builder == "vanilla_cnn") {
        if (!is_vanilla_variant(m.variant)) {
            std::string known;
            for (const auto& v : vanilla_variant_codes()) known += (known.empty() ? "" : ", ") + v;
            throw Error("model.variant: unknown variant '" + m.variant + "' (expected one of " + known + ")");
        }
        return build_vanilla_cnn(m.variant, m.num_classes, train.dropout_rate);
    }
    if (m.builder == "mini_resnet") {
        MiniResnetOptions o;
        try {
            o.flags = ModuleFlags::parse(m.variant);
        } catch (const Error& e) {
            throw Error(std::string("model.variant: ") + e.what());
        }
        if (m.num_blocks == 0) throw Error("model.num_blocks must be positive");
        o.num_blocks = m.num_blocks;
        o.num_classes = m.num_classes;
        o.shared_alpha = m.shared_alpha;
        o.shared_softmin = train.shared_softmin_scale;
        o.dropout_rate = train.dropout_rate;
        return build_mini_resnet(o);
    }
    try {
        return model_spec_from_json(m.spec);
    } catch (const Error& e) {
        throw Error(std::string("model.spec: ") + e.what());
    }
}

CifarSplit load_data(const DataConfig& d) {
    CifarSplit split;
    if (!d.cifar10_dir.empty()) {
        split = load_cifar10(d.cifar10_dir);
    } else if (!d.train_file.empty()) {
        split.train = load_cifar_records(d.train_file);
        split.test = load_cifar_records(d.test_file);
    } else {
        split.train = make_synthetic_images(d.synthetic_train, 10, d.synthetic_seed);
        split.test = d.synthetic_test > 0 ? make_synthetic_images(d.synthetic_test, 10, d.synthetic_seed + 0x9e37)
                                          : ImageDataset{};
    }
    if (d.train_limit > 0) split.train = split.train.head(d.train_limit);
    if (d.test_limit > 0) split.test = split.test.head(d.test_limit);
    return split;
}

std::vector<std::string> ablation_rows(std::string_view suite) {
    if (suite == "table2")
        return {"original", "ds1", "ds2", "ds3", "ds4", "ds5plus", "ds5minus", "ds5splus", "ds5sminus", "ds6", "ds7", "ds8"};
    if (suite == "table3") return {"original", "gem2", "sp", "moment3", "moment4", "moment5", "moment6"};
    if (suite == "table4-mini") return {"plain", "sp", "ss", "sex", "sen", "sp+sex", "sp+sen", "sp+sex+sen"};
    throw Error("suite: unknown suite '" + std::string(suite) + "' (expected table2, table3 or table4-mini)");
}

json network_to_json(const Network& net) {
    json params = json::object();
    for (const auto& p : net.parameters())
        params[p.name] = std::vector<double>(p.value.data().begin(), p.value.data().end());
    json bn = json::array();
    for (const auto& st : net.batchnorm_states())
        bn.push_back({{"running_mean", st.running_mean}, {"running_var", st.running_var}});
    return {{"spec", to_json(net.spec())}, {"parameters", params}, {"batchnorm", bn}};
}

Network network_from_json(const json& doc) {
    require_known_keys(doc, {"spec", "parameters", "batchnorm"}, "model file");
    if (!doc.contains("spec") || !doc.contains("parameters")) throw Error("model file: needs spec and parameters");
    Network net(model_spec_from_json(doc.at("spec")), 0);
    const auto& params = doc.at("parameters");
    if (!params.is_object() || params.size() != net.parameters().size())
        throw Error("model file: parameter list does not match the spec");
    for (auto& p : net.parameters()) {
        if (!params.contains(p.name)) throw Error("model file: missing parameter '" + p.name + "'");
        std::vector<double> values;
        try {
            values = params.at(p.name).get<std::vector<double>>();
        } catch (const json::exception&) {
            throw Error("model file: parameter '" + p.name + "' is not a number list");
        }
        if (values.size() != p.value.size()) throw Error("model file: parameter '" + p.name + "' has the wrong size");
        std::copy(values.begin(), values.end(), p.value.data().begin());
    }
    auto& states = net.batchnorm_states();
    if (doc.contains("batchnorm")) {
        const auto& bn = doc.at("batchnorm");
        if (!bn.is_array() || bn.size() != states.size()) throw Error("model file: batchnorm list does not match the spec");
        for (std::size_t i = 0; i < states.size(); ++i) {
            try {
                auto mean = bn[i].at("running_mean").get<std::vector<double>>();
                auto var = bn[i].at("running_var").get<std::vector<double>>();
                if (mean.size() != states[i].running_mean.size() || var.size() != states[i].running_var.size())
                    throw Error("model file: batchnorm state " + std::to_string(i) + " has the wrong size");
                states[i].running_mean = std::move(mean);
                states[i].running_var = std::move(var);
            } catch (const json::exception&) {
                throw Error("model file: batchnorm state " + std::to_string(i) + " is malformed");
            }
        }
    } else if (!states.empty()) {
        throw Error("model file: missing batchnorm statistics");
    }
    return net;
}

// --- commands

CommandOutcome cmd_gradcheck(const json& o) {
    require_known_keys(o, {"ops", "seeds", "tolerance", "inject_fault", "out"}, "gradcheck");
    const auto ops = option<std::vector<std::string>>(o, "ops", {});
    const int seeds = option<int>(o, "seeds", 5);
    const double tol = option<double>(o, "tolerance", kGradCheckTolerance);
    const auto faults = option<std::vector<std::string>>(o, "inject_fault", {});
    if (seeds < 1) throw Error("seeds: must be at least 1");
    auto out = out_option(o);
    Manifest manifest{"gradcheck"};

    std::vector<OpCheckReport> reports;
    {
        std::optional<FaultScope> scope;
        if (!faults.empty()) scope.emplace(faults);
        reports = run_gradcheck_suite(ops, seeds, tol);
    }
    CommandOutcome result;
    json rows = json::array(), failed = json::array();
    for (const auto& r : reports) {
        rows.push_back({{"op", r.op}, {"max_error", r.max_error}, {"passed", r.passed}});
        if (!r.passed) failed.push_back(r.op);
    }
    result.ok = failed.empty();
    result.summary = {{"command", "gradcheck"}, {"seeds", seeds},  {"tolerance", tol},
                      {"ops", rows},            {"failed", failed}, {"passed", result.ok}};
    if (out) {
        manifest.out = *out;
        manifest.resolved = {{"ops", ops}, {"seeds", seeds}, {"tolerance", tol}, {"inject_fault", faults}};
        result.summary_path = *out / "gradcheck.json";
        write_json(result.summary_path, result.summary);
        manifest.write();
    }
    return result;
}

CommandOutcome cmd_spiral(const json& o) {
    require_known_keys(o,
                       {"task", "activation", "seeds", "epochs", "hidden", "lr0", "noise_sd", "n_train", "n_test",
                        "grid_resolution", "jobs", "out", "progress"},
                       "spiral");
    const auto task_name = option<std::string>(o, "task", "reg");
    if (task_name != "reg" && task_name != "cls") throw Error("task: expected reg or cls, got '" + task_name + "'");
    const bool reg = task_name == "reg";
    const auto act_name = option<std::string>(o, "activation", "both");
    std::vector<Ewise> acts;
    if (act_name == "both") acts = {Ewise::relu, Ewise::relu_square};
    else if (act_name == "relu") acts = {Ewise::relu};
    else if (act_name == "relu_square") acts = {Ewise::relu_square};
    else throw Error("activation: expected relu, relu_square or both, got '" + act_name + "'");
    const auto seeds = seed_option(o, {1, 2, 3, 4, 5});
    SpiralTrainConfig base;
    base.epochs = option<std::size_t>(o, "epochs", base.epochs);
    base.lr0 = option<double>(o, "lr0", base.lr0);
    const auto hidden = option<std::size_t>(o, "hidden", 32);
    const auto noise = option<double>(o, "noise_sd", kSpiralNoise);
    const auto n_train = option<std::size_t>(o, "n_train", kSpiralTrain);
    const auto n_test = option<std::size_t>(o, "n_test", kSpiralTest);
    const auto grid = option<std::size_t>(o, "grid_resolution", 200);
    const auto jobs = option<std::size_t>(o, "jobs", 1);
    const bool progress = option<bool>(o, "progress", false);
    if (hidden == 0) throw Error("hidden: must be positive");
    if (!(base.lr0 > 0.0)) throw Error("lr0: must be positive");
    if (grid < 2) throw Error("grid_resolution: must be at least 2");
    auto out = out_option(o);
    Manifest manifest{"spiral"};

    struct Run {
        std::uint64_t seed;
        Ewise act;
        ExperimentResult result;
    };
    std::vector<Run> runs;
    for (auto s : seeds)
        for (auto a : acts) runs.push_back({s, a, {}});

    auto make = [&](std::uint64_t s, Split split) {
        const std::size_t n = split == Split::train ? n_train : n_test;
        return reg ? gen_one_arm(n, noise, s, split) : gen_three_arm(std::max<std::size_t>(2, n / 3), noise, s, split);
    };
    parallel_for(runs.size(), jobs, [&](std::size_t i) {
        auto& run = runs[i];
        auto train = make(run.seed, Split::train);
        auto test = make(run.seed, Split::test);
        SpiralTrainConfig cfg = base;
        cfg.seed = run.seed;
        auto fit = fit_two_layer(train, test, hidden, run.act, cfg);
        run.result = fit.result;
        const std::string tag = "seed" + std::to_string(run.seed) + "_" + std::string(to_string(run.act));
        if (out) {
            write_json(*out / ("model_" + tag + ".json"), network_to_json(fit.net));
            if (reg) {
                Tensor ts(Shape{grid, 1});
                std::string csv = "t,x,y\n";
                for (std::size_t k = 0; k < grid; ++k) ts[k] = -1.0 + 2.0 * double(k) / double(grid - 1);
                Tensor pred = predict(fit.net, ts);
                for (std::size_t k = 0; k < grid; ++k)
                    csv += format_g6((ts[k] + 1.0) * 0.5 * spiral_t_max()) + ',' + format_g6(pred[2 * k]) + ',' +
                           format_g6(pred[2 * k + 1]) + '\n';
                write_text_file(*out / ("trajectory_" + tag + ".csv"), csv);
            } else {
                auto report = count_decision_regions(logit_model(fit.net), Bounds{-1.2, 1.2, -1.2, 1.2}, grid, grid);
                write_text_file(*out / ("grid_" + tag + ".csv"), region_grid_csv(report));
            }
            if (run.act == acts.front())
                write_text_file(*out / ("data_seed" + std::to_string(run.seed) + "_train.csv"), spiral_dataset_csv(train));
        }
        const auto& last = fit.result.epochs.empty() ? fit.result.initial : fit.result.epochs.back();
        progress_line(progress, "spiral " + task_name + " " + tag + ": test_loss " + format_g6(last.test_loss) +
                                    (reg ? "" : " test_acc " + format_g6(last.test_acc)));
    });

    if (out) {
        // One metrics file per seed; rows carry the activation.
        for (auto s : seeds) {
            std::string csv;
            for (const auto& r : runs) {
                if (r.seed != s) continue;
                std::istringstream lines(metrics_csv(r.result));
                std::string line;
                std::getline(lines, line);
                if (csv.empty()) csv = "activation," + line + '\n';
                while (std::getline(lines, line)) csv += std::string(to_string(r.act)) + ',' + line + '\n';
            }
            write_text_file(*out / ("metrics_seed" + std::to_string(s) + ".csv"), csv);
        }
    }
    json rows = json::array();
    for (const auto& r : runs) {
        const auto& last = r.result.epochs.empty() ? r.result.initial : r.result.epochs.back();
        json row = {{"seed", r.seed}, {"activation", to_string(r.act)}, {"diverged", r.result.diverged}};
        row["test_loss"] = std::isfinite(last.test_loss) ? json(last.test_loss) : json(nullptr);
        if (!reg) row["test_acc"] = last.test_acc;
        rows.push_back(row);
    }
    CommandOutcome result;
    result.summary = {{"command", "spiral"}, {"task", task_name}, {"seeds", seeds}, {"runs", rows}};
    if (acts.size() == 2) {
        std::size_t wins = 0;
        for (std::size_t i = 0; i < runs.size(); i += 2) {
            const auto& relu = runs[i].result;
            const auto& rsq = runs[i + 1].result;
            if (rsq.diverged) continue;
            const auto& a = relu.epochs.empty() ? relu.initial : relu.epochs.back();
            const auto& b = rsq.epochs.empty() ? rsq.initial : rsq.epochs.back();
            const bool win = relu.diverged || (reg ? b.test_loss < a.test_loss : b.test_acc >= a.test_acc);
            wins += win;
        }
        result.summary["comparison"] = {{"metric", reg ? "test_mse (lower wins)" : "test_acc (ties go to relu_square)"},
                                        {"relu_square_wins", wins},
                                        {"seeds", seeds.size()}};
    }
    if (out) {
        manifest.out = *out;
        manifest.resolved = {{"task", task_name}, {"activation", act_name}, {"seeds", seeds},   {"epochs", base.epochs},
                             {"hidden", hidden},  {"lr0", base.lr0},        {"noise_sd", noise}, {"n_train", n_train},
                             {"n_test", n_test},  {"grid_resolution", grid}};
        result.summary_path = *out / "summary.json";
        write_json(result.summary_path, result.summary);
        manifest.write();
    }
    return result;
}

CommandOutcome cmd_boundary(const json& o) {
    require_known_keys(o, {"weights", "weights_file", "model_file", "bounds", "resolution", "out"}, "boundary");
    const int sources = int(o.contains("weights")) + int(o.contains("weights_file")) + int(o.contains("model_file"));
    if (sources > 1) throw Error("boundary: give only one of weights, weights_file or model_file");

    Bounds bounds;
    if (o.contains("bounds")) {
        auto b = option<std::vector<double>>(o, "bounds", {});
        if (b.size() == 1) b = {-b[0], b[0], -b[0], b[0]};
        if (b.size() != 4) throw Error("bounds: expected x_min,x_max,y_min,y_max or one half-width");
        bounds = {b[0], b[1], b[2], b[3]};
    }
    std::size_t nx = 400, ny = 400;
    if (o.contains("resolution")) {
        const auto& r = o.at("resolution");
        if (r.is_number_integer()) {
            if (r.get<long long>() < 0) throw Error("resolution: must be at least 2 per axis");
            nx = ny = r.get<std::size_t>();
        } else {
            auto v = option<std::vector<std::size_t>>(o, "resolution", {});
            if (v.size() != 2) throw Error("resolution: expected n or [nx, ny]");
            nx = v[0];
            ny = v[1];
        }
    }
    if (nx < 2 || ny < 2) throw Error("resolution: must be at least 2 per axis");

    auto out = out_option(o);
    Manifest manifest{"boundary"};
    json resolved = {{"bounds", {bounds.x_min, bounds.x_max, bounds.y_min, bounds.y_max}}, {"resolution", {nx, ny}}};
    RegionReport report;
    if (o.contains("model_file")) {
        const auto path = option<std::string>(o, "model_file", "");
        manifest.config_path = path;
        Network net = network_from_json(read_json_file(path));
        report = count_decision_regions(logit_model(net), bounds, nx, ny);
        resolved["model_file"] = path;
    } else {
        json weights = json::array({1.0, 0.0, 0.0, 1.0, 0.0, 1.0});
        if (o.contains("weights")) weights = o.at("weights");
        if (o.contains("weights_file")) {
            const auto path = option<std::string>(o, "weights_file", "");
            manifest.config_path = path;
            weights = read_json_file(path);
            if (weights.is_object()) {
                require_known_keys(weights, {"w", "b"}, "weights file");
                if (!weights.contains("w") || !weights.contains("b")) throw Error("weights file: needs w and b");
                json flat = weights.at("w");
                if (!flat.is_array()) throw Error("weights: w must be a list");
                if (!weights.at("b").is_array()) throw Error("weights: b must be a list");
                for (const auto& v : weights.at("b")) flat.push_back(v);
                weights = flat;
            }
        }
        std::vector<double> w;
        try {
            w = weights.get<std::vector<double>>();
        } catch (const json::exception&) {
            throw Error("weights: expected six numbers w11,w12,w21,w22,b1,b2");
        }
        if (w.size() != 6) throw Error("weights: expected six numbers w11,w12,w21,w22,b1,b2, got " + std::to_string(w.size()));
        for (double v : w)
            if (!std::isfinite(v)) throw Error("weights: non-finite value");
        BoundaryProblem p{{w[0], w[1], w[2], w[3]}, {w[4], w[5]}, Ewise::square};
        report = count_decision_regions(logit_model(p), bounds, nx, ny);
        report.analytic = boundary_coefficients(p);
        resolved["weights"] = w;
    }
    CommandOutcome result;
    result.summary = region_report_json(report);
    result.summary["command"] = "boundary";
    if (out) {
        manifest.out = *out;
        manifest.resolved = resolved;
        write_text_file(*out / "grid.csv", region_grid_csv(report));
        result.summary_path = *out / "boundary.json";
        write_json(result.summary_path, result.summary);
        manifest.write();
    }
    return result;
}

CommandOutcome cmd_train(const json& o) {
    require_known_keys(o, {"config", "out", "progress"}, "train");
    if (!o.contains("config")) throw Error("train: a config file is required");
    const fs::path config_path = option<std::string>(o, "config", "");
    auto cfg = experiment_config_from_json(read_json_file(config_path));
    const fs::path base = config_path.parent_path();
    auto& d = cfg.data;
    if (!d.cifar10_dir.empty()) d.cifar10_dir = resolve_relative(base, d.cifar10_dir).string();
    if (!d.train_file.empty()) d.train_file = resolve_relative(base, d.train_file).string();
    if (!d.test_file.empty()) d.test_file = resolve_relative(base, d.test_file).string();
    const bool progress = option<bool>(o, "progress", false);

    ModelSpec spec = build_model(cfg.model, cfg.train);
    auto data = load_data(cfg.data);
    auto out = out_option(o);
    Manifest manifest{"train", config_path.string()};

    auto result = run_training(spec, data.train, data.test, cfg.train, [&](const EpochRecord& r) {
        progress_line(progress, "train epoch " + std::to_string(r.epoch) + "/" + std::to_string(cfg.train.epochs) +
                                    ": loss " + format_g6(r.train_loss) + " test_acc " + format_g6(r.test_acc));
    });
    CommandOutcome outcome;
    outcome.summary = {{"command", "train"},
                       {"model", {{"builder", cfg.model.builder}, {"variant", spec.variant}, {"parameter_count", result.parameter_count}}},
                       {"config", to_json(cfg)},
                       {"result", result_summary(result)}};
    if (out) {
        manifest.out = *out;
        manifest.resolved = to_json(cfg);
        write_text_file(*out / "metrics.csv", metrics_csv(result));
        write_json(*out / "model.json", to_json(spec));
        outcome.summary_path = *out / "summary.json";
        write_json(outcome.summary_path, outcome.summary);
        manifest.write();
    }
    return outcome;
}

CommandOutcome cmd_ablate(const json& o) {
    require_known_keys(o, {"suite", "seeds", "config", "data_dir", "jobs", "out", "progress"}, "ablate");
    const auto suite = option<std::string>(o, "suite", "table2");
    const auto rows = ablation_rows(suite);
    const auto seeds = seed_option(o, {1, 2, 3});
    const auto jobs = option<std::size_t>(o, "jobs", 1);
    const bool progress = option<bool>(o, "progress", false);

    DataConfig data_cfg;
    TrainConfig train_cfg;
    json config_path = nullptr;
    bool have_data = false;
    if (o.contains("config")) {
        const fs::path path = option<std::string>(o, "config", "");
        config_path = path.string();
        json doc = read_json_file(path);
        require_known_keys(doc, {"data", "train"}, "ablate config");
        if (doc.contains("train")) train_cfg = train_config_from_json(doc.at("train"));
        if (doc.contains("data")) {
            data_cfg = data_config_from_json(doc.at("data"));
            const fs::path base = path.parent_path();
            if (!data_cfg.cifar10_dir.empty()) data_cfg.cifar10_dir = resolve_relative(base, data_cfg.cifar10_dir).string();
            if (!data_cfg.train_file.empty()) data_cfg.train_file = resolve_relative(base, data_cfg.train_file).string();
            if (!data_cfg.test_file.empty()) data_cfg.test_file = resolve_relative(base, data_cfg.test_file).string();
            have_data = true;
        }
    }
    if (o.contains("data_dir")) {
        data_cfg = DataConfig{};
        data_cfg.cifar10_dir = option<std::string>(o, "data_dir", "");
        have_data = true;
    }
    if (!have_data) throw Error("ablate: CIFAR-10 data required (give a data directory or a config with a data section)");

    const bool mini = suite == "table4-mini";
    std::vector<ModelSpec> specs;
    for (const auto& row : rows) {
        ModelConfig m;
        m.builder = mini ? "mini_resnet" : "vanilla_cnn";
        m.variant = row;
        specs.push_back(build_model(m, train_cfg));
    }
    auto data = load_data(data_cfg);
    auto out = out_option(o);
    Manifest manifest{"ablate", config_path};

    struct Run {
        std::size_t row;
        std::uint64_t seed;
        ExperimentResult result;
    };
    std::vector<Run> runs;
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (auto s : seeds) runs.push_back({r, s, {}});
    std::atomic<std::size_t> done{0};
    parallel_for(runs.size(), jobs, [&](std::size_t i) {
        auto& run = runs[i];
        TrainConfig cfg = train_cfg;
        cfg.seed = run.seed;
        run.result = run_training(specs[run.row], data.train, data.test, cfg);
        if (out) {
            const fs::path dir = *out / rows[run.row] / ("seed" + std::to_string(run.seed));
            write_text_file(dir / "metrics.csv", metrics_csv(run.result));
            write_json(dir / "summary.json",
                       json{{"variant", rows[run.row]}, {"seed", run.seed}, {"result", result_summary(run.result)}});
        }
        progress_line(progress, "ablate " + suite + " [" + std::to_string(++done) + "/" + std::to_string(runs.size()) +
                                    "] " + rows[run.row] + " seed " + std::to_string(run.seed) + ": " +
                                    (run.result.diverged ? std::string("diverged")
                                                         : "test_acc " + format_g6(run.result.last_test_acc())));
    });

    // Final-epoch test accuracy in percent, averaged over the runs that did not diverge.
    std::vector<double> mean(rows.size(), 0.0);
    std::vector<std::size_t> completed(rows.size(), 0), diverged(rows.size(), 0);
    for (const auto& run : runs) {
        if (run.result.diverged) {
            ++diverged[run.row];
        } else {
            mean[run.row] += 100.0 * run.result.last_test_acc();
            ++completed[run.row];
        }
    }
    for (std::size_t r = 0; r < rows.size(); ++r)
        if (completed[r] > 0) mean[r] /= double(completed[r]);

    std::string csv = "variant,mean_acc,improvement,runs,diverged_runs\n";
    json table = json::array();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const bool has_mean = completed[r] > 0;
        const bool has_improvement = has_mean && completed[0] > 0;
        const double improvement = r == 0 ? 0.0 : mean[r] - mean[0];
        csv += rows[r] + ',' + (has_mean ? format_g6(mean[r]) : std::string("divergence")) + ',' +
               (has_improvement ? format_g6(improvement) : std::string()) + ',' + std::to_string(seeds.size()) + ',' +
               std::to_string(diverged[r]) + '\n';
        json row = {{"variant", rows[r]}, {"parameter_count", Network(specs[r], 0).parameter_count()},
                    {"runs", seeds.size()}, {"diverged_runs", diverged[r]}};
        row["mean_acc"] = has_mean ? json(mean[r]) : json(nullptr);
        row["improvement"] = has_improvement ? json(improvement) : json(nullptr);
        table.push_back(row);
    }
    CommandOutcome outcome;
    outcome.summary = {{"command", "ablate"}, {"suite", suite}, {"seeds", seeds}, {"rows", table}};
    if (out) {
        manifest.out = *out;
        manifest.resolved = {{"suite", suite}, {"seeds", seeds}, {"data", to_json(data_cfg)}, {"train", to_json(train_cfg)}};
        write_text_file(*out / (suite + ".csv"), csv);
        outcome.summary_path = *out / "summary.json";
        write_json(outcome.summary_path, outcome.summary);
        manifest.write();
    }
    return outcome;
}

CommandOutcome run_command(std::string_view command, const json& options) {
    const json& o = options.is_null() ? json::object() : options;
    if (command == "gradcheck") return cmd_gradcheck(o);
    if (command == "spiral") return cmd_spiral(o);
    if (command == "boundary") return cmd_boundary(o);
    if (command == "train") return cmd_train(o);
    if (command == "ablate") return cmd_ablate(o);
    throw Error("unknown command '" + std::string(command) + "'");
}

}  // namespace deepsquare
