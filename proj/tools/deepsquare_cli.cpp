#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "deepsquare/deepsquare.h"

using nlohmann::json;

namespace {

struct Globals {
    std::string out;
    std::string seeds;
    int jobs = 1;
};

std::vector<double> parse_numbers(const std::string& text, const char* what) {
    std::vector<double> values;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw CLI::ValidationError(what, "cannot parse '" + item + "' as a number");
        }
    }
    return values;
}

int run(const std::string& command, const json& options, bool print_table = false) {
    char* summary = nullptr;
    char* path = nullptr;
    const ds_status status = ds_run_command(command.c_str(), options.dump().c_str(), &summary, &path);
    if (status != DS_OK && status != DS_ERR_CHECK_FAILED) {
        std::cerr << command << ": error: " << ds_last_error() << "\n";
        return 2;
    }
    json s = json::parse(summary);
    if (print_table) {
        std::printf("%-30s %-12s %s\n", "op", "max_error", "status");
        for (const auto& row : s["ops"])
            std::printf("%-30s %-12.3e %s\n", row["op"].get<std::string>().c_str(), row["max_error"].get<double>(),
                        row["passed"].get<bool>() ? "ok" : "FAIL");
    }
    if (status == DS_ERR_CHECK_FAILED && s.contains("failed")) {
        std::string names;
        for (const auto& op : s["failed"]) names += (names.empty() ? "" : ", ") + op.get<std::string>();
        std::cerr << command << ": failed: " << names << "\n";
    }
    if (path && *path) std::cout << path << "\n";
    ds_string_free(summary);
    ds_string_free(path);
    return status == DS_OK ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DeepSquare experiments: gradient checks, spiral fits, decision boundaries, CIFAR-10 training"};
    app.set_version_flag("--version", std::string(ds_version()));
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--out", g.out, "Output directory (default: runs/<command>)");
    app.add_option("--seeds,--seed", g.seeds, "Seed list: 1..5 or 1,2,3 (gradcheck: number of seeds)");
    app.add_option("--jobs", g.jobs, "Parallel runs for spiral and ablate")->check(CLI::PositiveNumber);

    auto out_dir = [&](const std::string& command) { return g.out.empty() ? "runs/" + command : g.out; };

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
    std::vector<std::string> gc_ops, gc_faults;
    double gc_tol = 1e-4;
    gc->add_option("--op", gc_ops, "Check only these ops (repeatable)");
    gc->add_option("--tolerance", gc_tol, "Maximum relative error");
    gc->add_option("--inject-fault", gc_faults, "Corrupt the backward rule of these ops")->group("");

    // spiral
    auto* sp = app.add_subcommand("spiral", "Two-layer relu vs relu_square fits on spiral data");
    std::string sp_task = "reg", sp_act = "both";
    std::optional<int> sp_epochs, sp_hidden, sp_train, sp_test, sp_grid;
    std::optional<double> sp_lr, sp_noise;
    sp->add_option("--task", sp_task, "reg (one-arm regression) or cls (three-arm classification)")
        ->check(CLI::IsMember({"reg", "cls"}));
    sp->add_option("--activation", sp_act)->check(CLI::IsMember({"both", "relu", "relu_square"}));
    sp->add_option("--epochs", sp_epochs);
    sp->add_option("--hidden", sp_hidden);
    sp->add_option("--lr0", sp_lr);
    sp->add_option("--noise-sd", sp_noise);
    sp->add_option("--n-train", sp_train);
    sp->add_option("--n-test", sp_test);
    sp->add_option("--grid-resolution", sp_grid);

    // boundary
    auto* bd = app.add_subcommand("boundary", "Decision regions of a two-class EleSquare network");
    std::string bd_weights, bd_weights_file, bd_model, bd_bounds;
    std::vector<int> bd_res;
    bd->add_option("--weights", bd_weights, "w11,w12,w21,w22,b1,b2 (default 1,0,0,1,0,1)");
    bd->add_option("--weights-file", bd_weights_file, "JSON list of six numbers or {\"w\": [...], \"b\": [...]}");
    bd->add_option("--model", bd_model, "Trained model JSON with 2-D input (e.g. from spiral --task cls)");
    bd->add_option("--bounds", bd_bounds, "x_min,x_max,y_min,y_max or a half-width (default 3)");
    bd->add_option("--resolution", bd_res, "n or nx ny (default 400)")->expected(1, 2);

    // train
    auto* tr = app.add_subcommand("train", "Train one model from a config file");
    std::string tr_config;
    bool tr_quiet = false;
    tr->add_option("config,--config", tr_config, "Experiment config JSON")->required();
    tr->add_flag("--quiet", tr_quiet, "No per-epoch progress on stderr");

    // ablate
    auto* ab = app.add_subcommand("ablate", "Variant sweep on CIFAR-10 with a consolidated table");
    std::string ab_suite = "table2", ab_config, ab_data;
    bool ab_quiet = false;
    ab->add_option("--suite", ab_suite)->check(CLI::IsMember({"table2", "table3", "table4-mini"}));
    ab->add_option("--config", ab_config, "Config with data and train sections");
    ab->add_option("--data", ab_data, "CIFAR-10 binary directory (default: $DEEPSQUARE_CIFAR10_DIR)");
    ab->add_flag("--quiet", ab_quiet, "No per-run progress on stderr");

    try {
        app.parse(argc, argv);

        if (*gc) {
            json o = {{"out", out_dir("gradcheck")}, {"tolerance", gc_tol}};
            if (!gc_ops.empty()) o["ops"] = gc_ops;
            if (!gc_faults.empty()) o["inject_fault"] = gc_faults;
            if (!g.seeds.empty()) o["seeds"] = std::stoi(g.seeds);
            return run("gradcheck", o, true);
        }
        if (*sp) {
            json o = {{"task", sp_task}, {"activation", sp_act}, {"out", out_dir("spiral-" + sp_task)}, {"jobs", g.jobs}};
            if (!g.seeds.empty()) o["seeds"] = g.seeds;
            if (sp_epochs) o["epochs"] = *sp_epochs;
            if (sp_hidden) o["hidden"] = *sp_hidden;
            if (sp_lr) o["lr0"] = *sp_lr;
            if (sp_noise) o["noise_sd"] = *sp_noise;
            if (sp_train) o["n_train"] = *sp_train;
            if (sp_test) o["n_test"] = *sp_test;
            if (sp_grid) o["grid_resolution"] = *sp_grid;
            return run("spiral", o);
        }
        if (*bd) {
            json o = {{"out", out_dir("boundary")}};
            if (!bd_weights.empty()) o["weights"] = parse_numbers(bd_weights, "--weights");
            if (!bd_weights_file.empty()) o["weights_file"] = bd_weights_file;
            if (!bd_model.empty()) o["model_file"] = bd_model;
            if (!bd_bounds.empty()) o["bounds"] = parse_numbers(bd_bounds, "--bounds");
            if (bd_res.size() == 1) o["resolution"] = bd_res[0];
            if (bd_res.size() == 2) o["resolution"] = bd_res;
            return run("boundary", o);
        }
        if (*tr) {
            json o = {{"config", tr_config}, {"out", out_dir("train")}, {"progress", !tr_quiet}};
            return run("train", o);
        }
        if (*ab) {
            json o = {{"suite", ab_suite}, {"out", out_dir("ablate-" + ab_suite)}, {"jobs", g.jobs}, {"progress", !ab_quiet}};
            if (!g.seeds.empty()) o["seeds"] = g.seeds;
            if (!ab_config.empty()) o["config"] = ab_config;
            if (ab_data.empty())
                if (const char* env = std::getenv("DEEPSQUARE_CIFAR10_DIR")) ab_data = env;
            if (!ab_data.empty()) o["data_dir"] = ab_data;
            return run("ablate", o);
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
