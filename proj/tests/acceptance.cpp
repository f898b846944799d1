// Acceptance suite. One line per criterion: [PASS], [FAIL] or [SKIP].
//
//   acceptance core    criteria 1-4 and 10 (seconds)
//   acceptance spiral  criterion 5 (minutes)
//   acceptance cifar   criteria 6-9 and 11 (hours; needs DEEPSQUARE_CIFAR10_DIR)
//
// Exit status: 0 if every criterion run passed, 1 if any failed, 77 if all were skipped.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "deepsquare/experiments.hpp"
#include "deepsquare/gradcheck.hpp"
#include "deepsquare/spiral.hpp"
#include "deepsquare/square_modules.hpp"

using namespace deepsquare;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradTol = 1e-4;
constexpr int kGradSeeds = 5;
constexpr double kDecompositionTol = 1e-9;
constexpr int kRandomCases = 100;
constexpr std::size_t kWitnessResolution = 400;
constexpr int kReluNets = 20;
constexpr std::size_t kReluResolution = 800;
constexpr std::size_t kSpiralSeeds = 5;
constexpr std::size_t kSpiralMinWins = 4;
constexpr double kSpiralBudgetSeconds = 300.0;
constexpr double kBaselineLo = 79.0, kBaselineHi = 84.5;
constexpr double kSquarePoolGain = 0.4;
constexpr double kEleSquareDrop = 2.0;
const std::vector<std::uint64_t> kCifarSeeds{1, 2, 3};

struct Tally {
    int pass = 0, fail = 0, skip = 0;

    void report(bool ok, const std::string& id, const std::string& detail) {
        std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", id.c_str(), detail.c_str());
        std::fflush(stdout);
        (ok ? pass : fail)++;
    }
    void skipped(const std::string& id, const std::string& why) {
        std::printf("[SKIP] %s: %s\n", id.c_str(), why.c_str());
        std::fflush(stdout);
        ++skip;
    }
    int status() const { return fail > 0 ? 1 : (pass == 0 && skip > 0 ? 77 : 0); }
};

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

std::size_t jobs_from_env() {
    if (const char* j = std::getenv("DEEPSQUARE_JOBS")) return std::max(1, std::atoi(j));
    return 1;
}

// ---------------------------------------------------------------- criterion 1

void gradient_certification(Tally& t) {
    const std::vector<std::string> required{"square",       "relu_square",  "square_pool",  "gem_pool2",
                                            "moment_pool3", "moment_pool4", "moment_pool5", "moment_pool6",
                                            "square_softmin", "scale_proportion", "square_excitation"};
    auto reports = run_gradcheck_suite({}, kGradSeeds, kGradTol);
    double worst = 0.0;
    std::string failing, missing;
    for (const auto& r : reports) {
        worst = std::max(worst, r.max_error);
        if (!r.passed || r.seeds != kGradSeeds) failing += " " + r.op;
    }
    for (const auto& name : required)
        if (std::none_of(reports.begin(), reports.end(), [&](const auto& r) { return r.op == name; }))
            missing += " " + name;
    std::string detail = std::to_string(reports.size()) + " ops x " + std::to_string(kGradSeeds) +
                         " seeds, max rel err " + fmt("%.3g", worst) + " (tol " + fmt("%g", kGradTol) + ")";
    if (!failing.empty()) detail += "; failing:" + failing;
    if (!missing.empty()) detail += "; missing:" + missing;
    t.report(failing.empty() && missing.empty(), "C1 gradient certification", detail);
}

// ---------------------------------------------------------------- criterion 2

void square_pool_decomposition(Tally& t) {
    std::mt19937_64 gen(2024);
    double worst = 0.0;
    for (int c = 0; c < kRandomCases; ++c) {
        const std::size_t n = 1 + gen() % 3, h = 1 + gen() % 7, w = 1 + gen() % 7, ch = 1 + gen() % 6;
        const double scale = std::exp(std::uniform_real_distribution<double>(-2.0, 2.5)(gen));
        const double shift = std::uniform_real_distribution<double>(-3.0, 3.0)(gen);
        std::normal_distribution<double> normal(shift, scale);
        Tensor x(Shape{n, h, w, ch});
        for (auto& v : x.data()) v = normal(gen);
        Tape tape;
        const Tensor g = tape.value(square_pool(tape.constant(x)));
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k < ch; ++k) {
                double mean = 0.0;
                for (std::size_t p = 0; p < h * w; ++p) mean += x[(b * h * w + p) * ch + k];
                mean /= double(h * w);
                double var = 0.0;
                for (std::size_t p = 0; p < h * w; ++p) {
                    const double d = x[(b * h * w + p) * ch + k] - mean;
                    var += d * d;
                }
                var /= double(h * w);
                worst = std::max(worst, std::abs(g[b * ch + k] - (mean * mean + var)));
            }
    }
    t.report(worst < kDecompositionTol, "C2 square-pool = gap^2 + spatial variance",
             std::to_string(kRandomCases) + " tensors, max |diff| " + fmt("%.3g", worst) + " (tol " +
                 fmt("%g", kDecompositionTol) + ")");
}

// ---------------------------------------------------------------- criterion 3

void softmin_symmetry(Tally& t) {
    std::mt19937_64 gen(77);
    std::normal_distribution<double> normal(0.0, 2.0);
    std::size_t flips = 0, mismatches = 0, positive = 0;
    auto logits = [](const Tensor& x, const Tensor& raw) {
        Tape tape;
        return tape.value(square_softmin(tape.constant(x), tape.constant(raw)));
    };
    for (int c = 0; c < kRandomCases; ++c) {
        const std::size_t n = 1 + gen() % 4, k = 2 + gen() % 9;
        const bool shared = gen() % 2 == 0;
        Tensor x(Shape{n, k}), raw(Shape{shared ? std::size_t{1} : k});
        for (auto& v : x.data()) v = normal(gen);
        for (auto& v : raw.data()) v = normal(gen);
        const Tensor base = logits(x, raw);
        for (double v : base.data()) positive += !(v <= 0.0);
        for (Tensor* target : {&x, &raw})
            for (std::size_t i = 0; i < target->size(); ++i) {
                (*target)[i] = -(*target)[i];
                const Tensor flipped = logits(x, raw);
                (*target)[i] = -(*target)[i];
                ++flips;
                mismatches += !bitwise_equal(base, flipped);
                for (double v : flipped.data()) positive += !(v <= 0.0);
            }
    }
    t.report(mismatches == 0 && positive == 0, "C3 softmin sign symmetry",
             std::to_string(kRandomCases) + " cases, " + std::to_string(flips) + " single-coordinate flips, " +
                 std::to_string(mismatches) + " non-bitwise-equal, " + std::to_string(positive) +
                 " positive logits");
}

// ---------------------------------------------------------------- criterion 4

void disconnected_regions(Tally& t) {
    auto witness = cmd_boundary(json{{"resolution", kWitnessResolution}});
    const auto& comps = witness.summary["components_per_class"];
    std::vector<int> counts{comps["0"].get<int>(), comps["1"].get<int>()};
    std::sort(counts.begin(), counts.end());
    const bool witness_ok = counts == std::vector<int>{1, 2} && witness.summary["A"] == 1.0 &&
                            witness.summary["B"] == -1.0 && witness.summary["C"] == 1.0;

    // Box covers every crossing of the relu arrangement.
    int relu_bad = 0, relu_max = 0;
    for (int s = 1; s <= kReluNets; ++s) {
        Network net(build_two_layer(2, 2, 2, Ewise::relu), std::uint64_t(s));
        Rng rng(std::uint64_t(s), {99});
        for (auto& p : net.parameters())
            for (auto& v : p.value.data()) v = rng.normal();
        const double half = std::max(3.0, 2.0 * relu_arrangement_extent(net));
        auto report = count_decision_regions(logit_model(net), Bounds{-half, half, -half, half}, kReluResolution,
                                             kReluResolution);
        for (const auto& [cls, n] : report.components) {
            relu_max = std::max(relu_max, int(n));
            relu_bad += n > 1;
        }
    }
    t.report(witness_ok && relu_bad == 0, "C4 disconnected decision regions",
             "witness (A,B,C)=(1,-1,1) components " + comps.dump() + " on " + std::to_string(kWitnessResolution) +
                 "^2 over [-3,3]^2; " + std::to_string(kReluNets) + " width-2 relu nets max " +
                 std::to_string(relu_max) + " component(s) per class");
}

// ---------------------------------------------------------------- criterion 10

void zero_parameter_claim(Tally& t) {
    auto count = [](const std::string& builder, const std::string& variant) {
        ModelConfig m;
        m.builder = builder;
        m.variant = variant;
        return Network(build_model(m, TrainConfig{}), 0).parameter_count();
    };
    const auto original = count("vanilla_cnn", "original"), ds3 = count("vanilla_cnn", "ds3"),
               sp = count("vanilla_cnn", "sp");
    const auto plain = count("mini_resnet", "plain"), sen = count("mini_resnet", "sen");
    t.report(original == ds3 && original == sp && plain == sen, "C10 zero-parameter modules",
             "vanilla original/ds3/sp " + std::to_string(original) + "/" + std::to_string(ds3) + "/" +
                 std::to_string(sp) + ", mini-resnet plain/sen " + std::to_string(plain) + "/" + std::to_string(sen));
}

// ---------------------------------------------------------------- criterion 5

void spiral_ordering(Tally& t) {
    const auto start = std::chrono::steady_clock::now();
    json opts = {{"seeds", "1.." + std::to_string(kSpiralSeeds)}, {"jobs", jobs_from_env()}};
    opts["task"] = "reg";
    auto reg = cmd_spiral(opts);
    opts["task"] = "cls";
    auto cls = cmd_spiral(opts);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto reg_wins = reg.summary["comparison"]["relu_square_wins"].get<std::size_t>();
    const auto cls_wins = cls.summary["comparison"]["relu_square_wins"].get<std::size_t>();
    t.report(reg_wins >= kSpiralMinWins && cls_wins >= kSpiralMinWins && seconds < kSpiralBudgetSeconds,
             "C5 spiral ordering",
             "relu_square wins " + std::to_string(reg_wins) + "/" + std::to_string(kSpiralSeeds) +
                 " on test MSE, " + std::to_string(cls_wins) + "/" + std::to_string(kSpiralSeeds) +
                 " on test accuracy (need " + std::to_string(kSpiralMinWins) + " each), " + fmt("%.0f", seconds) +
                 " s (budget " + fmt("%.0f", kSpiralBudgetSeconds) + " s)");
    for (const auto* s : {&reg, &cls})
        for (const auto& run : s->summary["runs"]) std::printf("       %s %s\n", (*s).summary["task"].get<std::string>().c_str(), run.dump().c_str());
}

// ---------------------------------------------------------------- criteria 6-9, 11

struct CifarRuns {
    // variant -> final-epoch test accuracy in percent per seed; NaN when the run diverged.
    std::map<std::string, std::vector<double>> acc;

    double mean(const std::string& v) const {
        double sum = 0.0;
        for (double a : acc.at(v)) {
            if (std::isnan(a)) return -INFINITY;
            sum += a;
        }
        return sum / double(acc.at(v).size());
    }
    bool all_diverged(const std::string& v) const {
        const auto& a = acc.at(v);
        return std::all_of(a.begin(), a.end(), [](double x) { return std::isnan(x); });
    }
};

CifarRuns run_cifar(const CifarSplit& data, const fs::path& out) {
    struct Job {
        std::string builder, variant;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const char* v : {"original", "ds3", "ds5plus", "ds5minus", "ds6", "sp", "moment4", "moment6"})
        for (auto s : kCifarSeeds) jobs.push_back({"vanilla_cnn", v, s});
    for (const char* v : {"plain", "sp", "sp+sex"})
        for (auto s : kCifarSeeds) jobs.push_back({"mini_resnet", v, s});

    CifarRuns runs;
    std::mutex mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            const auto& job = jobs[i];
            ModelConfig m;
            m.builder = job.builder;
            m.variant = job.variant;
            TrainConfig cfg;
            cfg.seed = job.seed;
            auto result = run_training(build_model(m, cfg), data.train, data.test, cfg);
            const std::string key = (job.builder == "mini_resnet" ? "mini:" : "") + job.variant;
            write_text_file(out / key / ("seed" + std::to_string(job.seed)) / "metrics.csv", metrics_csv(result));
            std::lock_guard lock(mutex);
            auto& slot = runs.acc[key];
            slot.resize(kCifarSeeds.size(), NAN);
            const auto pos = std::size_t(std::find(kCifarSeeds.begin(), kCifarSeeds.end(), job.seed) - kCifarSeeds.begin());
            slot[pos] = result.diverged ? NAN : 100.0 * result.last_test_acc();
            std::fprintf(stderr, "acceptance cifar: %s seed %llu -> %s\n", key.c_str(),
                         static_cast<unsigned long long>(job.seed),
                         result.diverged ? "diverged" : fmt("%.2f", slot[pos]).c_str());
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < std::min(jobs_from_env(), jobs.size()); ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    return runs;
}

void cifar_criteria(Tally& t) {
    const std::vector<std::string> ids{"C6 CIFAR-10 baseline accuracy", "C7 square-pool improvement",
                                       "C8 EleSquare placement", "C9 moment-order ordering",
                                       "C11 mini-resnet module ordering"};
    const char* dir = std::getenv("DEEPSQUARE_CIFAR10_DIR");
    if (!dir || !fs::is_directory(dir)) {
        for (const auto& id : ids) t.skipped(id, "DEEPSQUARE_CIFAR10_DIR not set or not a directory");
        return;
    }
    const fs::path out = std::getenv("DEEPSQUARE_ACCEPTANCE_OUT") ? fs::path(std::getenv("DEEPSQUARE_ACCEPTANCE_OUT"))
                                                                  : fs::current_path() / "acceptance_cifar";
    const auto runs = run_cifar(load_cifar10(dir), out);
    const double original = runs.mean("original");

    t.report(original >= kBaselineLo && original <= kBaselineHi, ids[0],
             "original mean top-1 " + fmt("%.2f", original) + " over 3 seeds (band [" + fmt("%.1f", kBaselineLo) +
                 ", " + fmt("%.1f", kBaselineHi) + "])");

    const double ds3 = runs.mean("ds3");
    t.report(ds3 - original >= kSquarePoolGain, ids[1],
             "ds3 " + fmt("%.2f", ds3) + " - original " + fmt("%.2f", original) + " = " + fmt("%+.2f", ds3 - original) +
                 " (need >= +" + fmt("%.1f", kSquarePoolGain) + ")");

    const double ds6 = runs.mean("ds6"), plus = runs.mean("ds5plus"), minus = runs.mean("ds5minus");
    const bool ds6_ok = runs.all_diverged("ds6") || ds6 <= original - kEleSquareDrop;
    t.report(ds6_ok && minus >= plus, ids[2],
             "ds6 " + (runs.all_diverged("ds6") ? std::string("diverged") : fmt("%.2f", ds6)) + " vs original " +
                 fmt("%.2f", original) + " (need divergence or <= -" + fmt("%.0f", kEleSquareDrop) +
                 "); ds5minus " + fmt("%.2f", minus) + " vs ds5plus " + fmt("%.2f", plus));

    const double sp = runs.mean("sp"), m4 = runs.mean("moment4"), m6 = runs.mean("moment6");
    t.report(sp >= m4 && sp >= m6, ids[3],
             "sp " + fmt("%.2f", sp) + ", moment4 " + fmt("%.2f", m4) + ", moment6 " + fmt("%.2f", m6));

    const double plain = runs.mean("mini:plain"), msp = runs.mean("mini:sp");
    int sex_wins = 0;
    for (std::size_t i = 0; i < kCifarSeeds.size(); ++i) {
        const double a = runs.acc.at("mini:sp+sex")[i], b = runs.acc.at("mini:sp")[i];
        sex_wins += !std::isnan(a) && (std::isnan(b) || a >= b);
    }
    t.report(msp >= plain && sex_wins >= 2, ids[4],
             "sp " + fmt("%.2f", msp) + " vs plain " + fmt("%.2f", plain) + "; sp+sex >= sp in " +
                 std::to_string(sex_wins) + "/3 seeds (need 2)");
}

}  // namespace

int main(int argc, char** argv) {
    const std::string part = argc > 1 ? argv[1] : "core";
    Tally t;
    try {
        if (part == "core") {
            gradient_certification(t);
            square_pool_decomposition(t);
            softmin_symmetry(t);
            disconnected_regions(t);
            zero_parameter_claim(t);
        } else if (part == "spiral") {
            spiral_ordering(t);
        } else if (part == "cifar") {
            cifar_criteria(t);
        } else {
            std::fprintf(stderr, "usage: acceptance [core|spiral|cifar]\n");
            return 2;
        }
    } catch (const std::exception& e) {
        std::printf("[FAIL] %s: error: %s\n", part.c_str(), e.what());
        return 1;
    }
    std::printf("summary: %d passed, %d failed, %d skipped\n", t.pass, t.fail, t.skip);
    return t.status();
}
