#include "deepsquare/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "deepsquare/ops.hpp"
#include "deepsquare/rng.hpp"
#include "deepsquare/square_modules.hpp"

namespace deepsquare {

namespace {

double evaluate(const TapeFunction& f, std::span<Tensor* const> inputs, const Tensor* projection) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (auto* t : inputs) vars.push_back(tape.constant(*t));
    const Tensor& y = f(tape, vars).value();
    if (!projection) return y.item();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * (*projection)[i];
    return s;
}

}  // namespace

double grad_check(const TapeFunction& f, std::span<Tensor* const> inputs, double h, std::uint64_t projection_seed) {
    std::optional<Tensor> projection;
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (auto* t : inputs) {
            t->zero_grad();
            vars.push_back(tape.leaf(*t));
        }
        Var y = f(tape, vars);
        Var loss = y;
        if (y.value().size() != 1) {
            Rng rng(projection_seed);
            Tensor w(y.shape());
            for (auto& v : w.data()) v = rng.normal();
            projection = w;
            loss = weighted_sum(y, w);
        }
        tape.backward(loss);
        for (auto* t : inputs) analytic.emplace_back(t->grad().begin(), t->grad().end());
    }

    const Tensor* proj = projection ? &*projection : nullptr;
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor& t = *inputs[k];
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            t[i] = saved + h;
            double up = evaluate(f, inputs, proj);
            t[i] = saved - h;
            double down = evaluate(f, inputs, proj);
            t[i] = saved;
            double numeric = (up - down) / (2.0 * h);
            double a = analytic[k][i];
            double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (!(err <= worst)) worst = std::isnan(err) ? INFINITY : err;
        }
    }
    return worst;
}

double grad_check(const std::function<Var(Var)>& f, Tensor x, double h) {
    Tensor* in[] = {&x};
    return grad_check([&f](Tape&, std::span<const Var> v) { return f(v[0]); }, in, h);
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
}

// Normal draws kept at least `gap` away from zero so that kinks at 0 stay outside
// the finite-difference stencil.
Tensor away_from_zero(Rng& rng, Shape shape, double gap = 0.05) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) {
        double s = rng.normal();
        v = s >= 0.0 ? s + gap : s - gap;
    }
    return t;
}

Tensor positive_tensor(Rng& rng, Shape shape, double lo = 0.1, double hi = 2.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

using Case = std::function<double(std::uint64_t seed)>;

struct NamedCase {
    std::string name;
    Case run;
};

double check_inputs(std::vector<Tensor> tensors, const TapeFunction& f) {
    std::vector<Tensor*> ptrs;
    for (auto& t : tensors) ptrs.push_back(&t);
    return grad_check(f, ptrs);
}

Case ewise_case(Ewise kind) {
    return [kind](std::uint64_t seed) {
        Rng rng(seed, {101});
        return check_inputs({away_from_zero(rng, {2, 3, 4})},
                            [kind](Tape&, std::span<const Var> v) { return ewise_apply(kind, v[0]); });
    };
}

std::vector<NamedCase> all_cases() {
    std::vector<NamedCase> cases;
    cases.push_back({"relu", ewise_case(Ewise::relu)});
    cases.push_back({"square", ewise_case(Ewise::square)});
    cases.push_back({"relu_square", ewise_case(Ewise::relu_square)});
    cases.push_back({"negate", ewise_case(Ewise::negate)});
    cases.push_back({"add", [](std::uint64_t seed) {
                         Rng rng(seed, {102});
                         return check_inputs({random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})},
                                             [](Tape&, std::span<const Var> v) { return add(v[0], v[1]); });
                     }});
    cases.push_back({"affine", [](std::uint64_t seed) {
                         Rng rng(seed, {103});
                         return check_inputs(
                             {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 5}), random_tensor(rng, {5})},
                             [](Tape&, std::span<const Var> v) { return affine(v[0], v[1], v[2]); });
                     }});
    cases.push_back({"conv2d", [](std::uint64_t seed) {
                         Rng rng(seed, {104});
                         return check_inputs({random_tensor(rng, {1, 5, 5, 2}), random_tensor(rng, {3, 3, 2, 3})},
                                             [](Tape&, std::span<const Var> v) { return conv2d(v[0], v[1], 2, 1); });
                     }});
    cases.push_back({"batchnorm2d", [](std::uint64_t seed) {
                         Rng rng(seed, {105});
                         return check_inputs(
                             {random_tensor(rng, {2, 3, 3, 2}), positive_tensor(rng, {2}), random_tensor(rng, {2})},
                             [](Tape&, std::span<const Var> v) {
                                 BatchNormState state(2);
                                 return batchnorm2d(v[0], v[1], v[2], state, Mode::training);
                             });
                     }});
    cases.push_back({"batchnorm2d_inference", [](std::uint64_t seed) {
                         Rng rng(seed, {106});
                         return check_inputs(
                             {random_tensor(rng, {2, 3, 3, 2}), positive_tensor(rng, {2}), random_tensor(rng, {2})},
                             [](Tape&, std::span<const Var> v) {
                                 BatchNormState state(2);
                                 state.running_mean = {0.3, -0.2};
                                 state.running_var = {1.5, 0.7};
                                 return batchnorm2d(v[0], v[1], v[2], state, Mode::inference);
                             });
                     }});
    cases.push_back({"gap", [](std::uint64_t seed) {
                         Rng rng(seed, {107});
                         return check_inputs({random_tensor(rng, {2, 3, 3, 4})},
                                             [](Tape&, std::span<const Var> v) { return gap(v[0]); });
                     }});
    cases.push_back({"channel_scale", [](std::uint64_t seed) {
                         Rng rng(seed, {108});
                         return check_inputs({random_tensor(rng, {2, 3, 3, 4}), random_tensor(rng, {2, 4})},
                                             [](Tape&, std::span<const Var> v) { return channel_scale(v[0], v[1]); });
                     }});
    cases.push_back({"dropout", [](std::uint64_t seed) {
                         Rng rng(seed, {109});
                         return check_inputs({random_tensor(rng, {4, 6})}, [seed](Tape&, std::span<const Var> v) {
                             Rng mask(seed, {110});
                             return dropout(v[0], 0.2, mask, Mode::training);
                         });
                     }});
    cases.push_back({"softmax_ce", [](std::uint64_t seed) {
                         Rng rng(seed, {111});
                         std::vector<std::size_t> targets(4);
                         for (auto& t : targets) t = rng.below(10);
                         return check_inputs({random_tensor(rng, {4, 10}, 2.0)},
                                             [targets](Tape&, std::span<const Var> v) { return softmax_ce(v[0], targets); });
                     }});
    cases.push_back({"mse", [](std::uint64_t seed) {
                         Rng rng(seed, {112});
                         Tensor target = random_tensor(rng, {5, 2});
                         return check_inputs({random_tensor(rng, {5, 2})},
                                             [target](Tape&, std::span<const Var> v) { return mse(v[0], target); });
                     }});
    cases.push_back({"square_pool", [](std::uint64_t seed) {
                         Rng rng(seed, {113});
                         return check_inputs({random_tensor(rng, {2, 3, 3, 4})},
                                             [](Tape&, std::span<const Var> v) { return square_pool(v[0]); });
                     }});
    for (int order = 3; order <= kMaxMomentOrder; ++order)
        cases.push_back({"moment_pool" + std::to_string(order), [order](std::uint64_t seed) {
                             Rng rng(seed, {114, static_cast<std::uint64_t>(order)});
                             return check_inputs({positive_tensor(rng, {2, 3, 3, 3}, 0.0, 1.5)},
                                                 [order](Tape&, std::span<const Var> v) { return moment_pool(v[0], order); });
                         }});
    cases.push_back({"gem_pool2", [](std::uint64_t seed) {
                         Rng rng(seed, {115});
                         return check_inputs({positive_tensor(rng, {2, 3, 3, 4}, 0.0, 2.0)},
                                             [](Tape&, std::span<const Var> v) { return gem_pool(v[0], 2.0); });
                     }});
    cases.push_back({"square_softmin", [](std::uint64_t seed) {
                         Rng rng(seed, {116});
                         return check_inputs({random_tensor(rng, {3, 5}), random_tensor(rng, {5})},
                                             [](Tape&, std::span<const Var> v) { return square_softmin(v[0], v[1]); });
                     }});
    cases.push_back({"square_softmin_shared", [](std::uint64_t seed) {
                         Rng rng(seed, {117});
                         return check_inputs({random_tensor(rng, {3, 5}), random_tensor(rng, {1})},
                                             [](Tape&, std::span<const Var> v) { return square_softmin(v[0], v[1]); });
                     }});
    cases.push_back({"scale_proportion", [](std::uint64_t seed) {
                         Rng rng(seed, {118});
                         return check_inputs({positive_tensor(rng, {2, 4}, 0.0, 3.0), away_from_zero(rng, {1}, 0.3)},
                                             [](Tape&, std::span<const Var> v) { return scale_proportion(v[0], v[1]); });
                     }});
    cases.push_back({"square_excitation", [](std::uint64_t seed) {
                         Rng rng(seed, {119});
                         return check_inputs({random_tensor(rng, {1, 3, 3, 4}), away_from_zero(rng, {1}, 0.3)},
                                             [](Tape&, std::span<const Var> v) { return square_excitation(v[0], v[1]); });
                     }});
    cases.push_back({"scale_proportion_square_pool", [](std::uint64_t seed) {
                         Rng rng(seed, {120});
                         return check_inputs({random_tensor(rng, {2, 3, 3, 4}), away_from_zero(rng, {1}, 0.3)},
                                             [](Tape&, std::span<const Var> v) {
                                                 return scale_proportion(square_pool(v[0]), v[1]);
                                             });
                     }});
    cases.push_back({"learnable_scale", [](std::uint64_t seed) {
                         Rng rng(seed, {121});
                         return check_inputs({random_tensor(rng, {3, 4}), away_from_zero(rng, {1}, 0.3)},
                                             [](Tape&, std::span<const Var> v) { return learnable_scale(v[0], v[1]); });
                     }});
    return cases;
}

}  // namespace

std::vector<std::string> gradcheck_op_names() {
    std::vector<std::string> names;
    for (const auto& c : all_cases()) names.push_back(c.name);
    return names;
}

std::vector<OpCheckReport> run_gradcheck_suite(std::span<const std::string> only, int seeds, double tolerance) {
    auto cases = all_cases();
    for (const auto& name : only)
        if (std::none_of(cases.begin(), cases.end(), [&](const NamedCase& c) { return c.name == name; }))
            throw Error("gradcheck: unknown op '" + name + "'");
    std::vector<OpCheckReport> reports;
    for (const auto& c : cases) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
        OpCheckReport r{c.name, 0.0, seeds, true};
        for (int s = 0; s < seeds; ++s) {
            double e = c.run(static_cast<std::uint64_t>(s + 1));
            if (!(e <= r.max_error)) r.max_error = std::isnan(e) ? INFINITY : e;
        }
        r.passed = r.max_error < tolerance;
        reports.push_back(r);
    }
    return reports;
}

}  // namespace deepsquare
