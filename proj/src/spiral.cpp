#include "deepsquare/spiral.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

namespace deepsquare {

using nlohmann::json;

namespace {
constexpr std::uint64_t kSpiralTag = 0x5b1a;
constexpr std::uint64_t kThreeArmTag = 0x3a;
constexpr std::uint64_t kHiddenBiasTag = 0xb1a5;

std::uint64_t split_tag(Split split) { return split == Split::train ? 1 : 2; }

double act(Ewise kind, double v) {
    switch (kind) {
        case Ewise::relu: return v > 0.0 ? v : 0.0;
        case Ewise::square: return v * v;
        case Ewise::relu_square: return v > 0.0 ? v * v : 0.0;
        case Ewise::negate: return -v * v;
    }
    return v;
}
}  // namespace

double spiral_t_max() { return kSpiralTurns * 2.0 * std::numbers::pi; }

std::array<double, 2> spiral_point(double t, double rotation) {
    const double r = t / spiral_t_max();
    return {r * std::cos(t + rotation), r * std::sin(t + rotation)};
}

SpiralDataset gen_one_arm(std::size_t n, double noise_sd, std::uint64_t seed, Split split) {
    if (n < 2) throw Error("gen_one_arm: n must be at least 2");
    if (!(noise_sd >= 0.0)) throw Error("gen_one_arm: noise_sd must be >= 0");
    Rng rng(seed, {kSpiralTag, split_tag(split)});
    SpiralDataset d;
    d.task = SpiralTask::regression;
    d.split = split;
    d.seed = seed;
    d.inputs = Tensor(Shape{n, 1});
    d.targets = Tensor(Shape{n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        const double t = rng.uniform(0.0, spiral_t_max());
        auto p = spiral_point(t);
        d.times.push_back(t);
        d.inputs[i] = 2.0 * t / spiral_t_max() - 1.0;
        d.targets[2 * i] = p[0] + rng.normal(0.0, noise_sd);
        d.targets[2 * i + 1] = p[1] + rng.normal(0.0, noise_sd);
    }
    return d;
}

SpiralDataset gen_three_arm(std::size_t n_per_arm, double noise_sd, std::uint64_t seed, Split split) {
    if (n_per_arm < 2) throw Error("gen_three_arm: n_per_arm must be at least 2");
    if (!(noise_sd >= 0.0)) throw Error("gen_three_arm: noise_sd must be >= 0");
    Rng rng(seed, {kSpiralTag, kThreeArmTag, split_tag(split)});
    const std::size_t n = 3 * n_per_arm;
    SpiralDataset d;
    d.task = SpiralTask::classification;
    d.split = split;
    d.seed = seed;
    d.inputs = Tensor(Shape{n, 2});
    d.targets = Tensor(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t arm = i % 3;
        const double t = rng.uniform(0.0, spiral_t_max());
        auto p = spiral_point(t, 2.0 * std::numbers::pi * double(arm) / 3.0);
        d.times.push_back(t);
        d.labels.push_back(arm);
        d.targets[i] = double(arm);
        d.inputs[2 * i] = p[0] + rng.normal(0.0, noise_sd);
        d.inputs[2 * i + 1] = p[1] + rng.normal(0.0, noise_sd);
    }
    return d;
}

Tensor predict(Network& net, const Tensor& inputs) {
    Tape tape;
    return net.forward(tape, inputs, Mode::inference).value();
}

namespace {

struct Metrics {
    double loss = 0.0, acc = 0.0;
};

double accuracy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    const std::size_t k = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (logits[n * k + c] > logits[n * k + best]) best = c;
        correct += best == labels[n];
    }
    return double(correct) / double(labels.size());
}

Var spiral_loss(Var out, const SpiralDataset& data) {
    return data.task == SpiralTask::regression ? mse(out, data.targets) : softmax_ce(out, data.labels);
}

Metrics evaluate_spiral(Network& net, const SpiralDataset& data) {
    Tape tape;
    Var out = net.forward(tape, data.inputs, Mode::inference);
    Metrics m{spiral_loss(out, data).value().item(), 0.0};
    if (data.task == SpiralTask::classification) m.acc = accuracy(out.value(), data.labels);
    return m;
}

}  // namespace

SpiralFit fit_two_layer(const SpiralDataset& train, const SpiralDataset& test, std::size_t hidden, Ewise activation,
                        const SpiralTrainConfig& config) {
    if (train.task != test.task) throw Error("fit_two_layer: train and test tasks differ");
    if (activation != Ewise::relu && activation != Ewise::relu_square)
        throw Error("fit_two_layer: activation must be relu or relu_square");
    if (!(config.lr0 > 0.0)) throw Error("spiral.lr0 must be positive");
    if (!(config.momentum >= 0.0 && config.momentum < 1.0)) throw Error("spiral.momentum must lie in [0, 1)");
    const bool reg = train.task == SpiralTask::regression;
    const auto t0 = std::chrono::steady_clock::now();
    ModelSpec spec = reg ? build_two_layer(1, hidden, 2, activation, Head::mse)
                         : build_two_layer(2, hidden, 3, activation, Head::softmax_ce);
    SpiralFit fit{Network(spec, init_seed_for(config.seed)), {}};
    {
        // Spread the hidden units' kinks over the input range instead of stacking them at 0.
        Rng bias_rng(config.seed, {kHiddenBiasTag});
        for (auto& v : fit.net.parameters()[1].value.data()) v = bias_rng.uniform(-1.0, 1.0);
    }
    auto& r = fit.result;
    r.parameter_count = fit.net.parameter_count();
    {
        auto tr = evaluate_spiral(fit.net, train);
        auto te = evaluate_spiral(fit.net, test);
        r.initial = {0, 0.0, tr.loss, tr.acc, te.loss, te.acc};
    }
    SgdOptimizer opt(fit.net, config.momentum, config.weight_decay, true);
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const double lr = lr_at(epoch - 1, config.epochs, 0, config.lr0);
        Tape tape;
        Var out = fit.net.forward(tape, train.inputs, Mode::training);
        Var loss = spiral_loss(out, train);
        const double l = loss.value().item();
        if (!std::isfinite(l)) {
            r.diverged = true;
            r.diverged_epoch = epoch;
            break;
        }
        const double acc = reg ? 0.0 : accuracy(out.value(), train.labels);
        fit.net.zero_grad();
        tape.backward(loss);
        opt.step(fit.net, lr);
        auto te = evaluate_spiral(fit.net, test);
        r.epochs.push_back({epoch, lr, l, acc, te.loss, te.acc});
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return fit;
}

std::string_view to_string(BoundaryType type) {
    switch (type) {
        case BoundaryType::hyperbola: return "hyperbola";
        case BoundaryType::ellipse: return "ellipse";
        case BoundaryType::parallel_lines: return "parallel-lines";
        case BoundaryType::degenerate: return "degenerate";
        case BoundaryType::empty: return "empty";
    }
    return "unknown";
}

BoundaryType classify_boundary(double a, double b, double c) {
    if (c == 0.0) return BoundaryType::degenerate;
    if (a * b < 0.0) return BoundaryType::hyperbola;
    if (a * b > 0.0) return c * a > 0.0 ? BoundaryType::ellipse : BoundaryType::empty;
    if (a == 0.0 && b == 0.0) return BoundaryType::empty;
    const double nonzero = a != 0.0 ? a : b;
    return nonzero * c > 0.0 ? BoundaryType::parallel_lines : BoundaryType::empty;
}

BoundaryCoefficients boundary_coefficients(const BoundaryProblem& p) {
    if (p.activation != Ewise::square) throw Error("boundary_coefficients: activation must be square");
    BoundaryCoefficients k;
    k.a = p.w[0] - p.w[1];
    k.b = p.w[2] - p.w[3];
    k.c = p.b[1] - p.b[0];
    k.type = classify_boundary(k.a, k.b, k.c);
    return k;
}

LogitModel logit_model(const BoundaryProblem& problem) {
    return [problem](const Tensor& points) {
        const std::size_t m = points.dim(0);
        Tensor out(Shape{m, 2});
        for (std::size_t n = 0; n < m; ++n) {
            const double s1 = act(problem.activation, points[2 * n]);
            const double s2 = act(problem.activation, points[2 * n + 1]);
            out[2 * n] = problem.w[0] * s1 + problem.w[2] * s2 + problem.b[0];
            out[2 * n + 1] = problem.w[1] * s1 + problem.w[3] * s2 + problem.b[1];
        }
        return out;
    };
}

LogitModel logit_model(Network& net) {
    if (net.spec().input != Shape{2}) throw Error("decision regions need a model with 2-D input");
    return [&net](const Tensor& points) { return predict(net, points); };
}

Network boundary_network(const BoundaryProblem& problem) {
    Network net(build_two_layer(2, 2, 2, problem.activation), 0);
    auto& ps = net.parameters();
    ps[0].value = Tensor(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
    ps[1].value = Tensor(Shape{2}, 0.0);
    ps[2].value = Tensor(Shape{2, 2}, {problem.w.begin(), problem.w.end()});
    ps[3].value = Tensor(Shape{2}, {problem.b.begin(), problem.b.end()});
    return net;
}

std::size_t count_components(const std::vector<std::size_t>& grid, std::size_t nx, std::size_t ny, std::size_t cls) {
    std::vector<char> seen(grid.size(), 0);
    std::vector<std::size_t> stack;
    std::size_t count = 0;
    for (std::size_t start = 0; start < grid.size(); ++start) {
        if (seen[start] || grid[start] != cls) continue;
        ++count;
        seen[start] = 1;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t cell = stack.back();
            stack.pop_back();
            const std::size_t i = cell % nx, j = cell / nx;
            auto visit = [&](std::size_t other) {
                if (!seen[other] && grid[other] == cls) {
                    seen[other] = 1;
                    stack.push_back(other);
                }
            };
            if (i > 0) visit(cell - 1);
            if (i + 1 < nx) visit(cell + 1);
            if (j > 0) visit(cell - nx);
            if (j + 1 < ny) visit(cell + nx);
        }
    }
    return count;
}

RegionReport count_decision_regions(const LogitModel& model, const Bounds& bounds, std::size_t nx, std::size_t ny) {
    if (nx < 2 || ny < 2) throw Error("count_decision_regions: resolution must be at least 2 per axis");
    if (!(bounds.x_max > bounds.x_min) || !(bounds.y_max > bounds.y_min))
        throw Error("count_decision_regions: empty bounding box");
    RegionReport r;
    r.bounds = bounds;
    r.nx = nx;
    r.ny = ny;
    Tensor points(Shape{nx * ny, 2});
    for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) {
            points[2 * (j * nx + i)] = r.cell_x(i);
            points[2 * (j * nx + i) + 1] = r.cell_y(j);
        }
    Tensor logits = model(points);
    if (logits.rank() != 2 || logits.dim(0) != nx * ny) throw Error("count_decision_regions: model output shape");
    r.num_classes = logits.dim(1);
    r.grid.resize(nx * ny);
    for (std::size_t n = 0; n < nx * ny; ++n) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < r.num_classes; ++c)
            if (logits[n * r.num_classes + c] > logits[n * r.num_classes + best]) best = c;
        r.grid[n] = best;
    }
    for (std::size_t c = 0; c < r.num_classes; ++c) r.components[c] = count_components(r.grid, nx, ny, c);
    return r;
}

double relu_arrangement_extent(const Network& net) {
    const auto& spec = net.spec();
    if (spec.builder != "two_layer" || spec.input != Shape{2} || spec.variant != "relu" || net.output_shape() != Shape{2})
        throw Error("relu_arrangement_extent: needs a two-layer relu network with 2 inputs and 2 classes");
    const auto& ps = net.parameters();
    const auto& w1 = ps[0].value;  // [2 x k]
    const auto& b1 = ps[1].value;
    const auto& w2 = ps[2].value;  // [k x 2]
    const auto& b2 = ps[3].value;
    const std::size_t k = b1.size();
    if (k > 16) throw Error("relu_arrangement_extent: hidden width too large");

    struct Line {
        double a, b, c;  // a x + b y + c = 0
    };
    std::vector<Line> lines;
    for (std::size_t i = 0; i < k; ++i) lines.push_back({w1[i], w1[k + i], b1[i]});
    // y2 - y1 = sum_i d_i relu(h_i) + e; within a pattern it is linear in x.
    for (std::size_t mask = 1; mask < (std::size_t{1} << k); ++mask) {
        Line l{0.0, 0.0, b2[1] - b2[0]};
        for (std::size_t i = 0; i < k; ++i) {
            if (!(mask >> i & 1)) continue;
            const double d = w2[2 * i + 1] - w2[2 * i];
            l.a += d * w1[i];
            l.b += d * w1[k + i];
            l.c += d * b1[i];
        }
        lines.push_back(l);
    }
    double extent = 0.0;
    for (std::size_t p = 0; p < lines.size(); ++p)
        for (std::size_t q = p + 1; q < lines.size(); ++q) {
            const double det = lines[p].a * lines[q].b - lines[q].a * lines[p].b;
            if (std::abs(det) < 1e-12) continue;
            const double x = (lines[p].b * lines[q].c - lines[q].b * lines[p].c) / det;
            const double y = (lines[q].a * lines[p].c - lines[p].a * lines[q].c) / det;
            extent = std::max({extent, std::abs(x), std::abs(y)});
        }
    return extent;
}

double max_second_difference(Network& net, const std::vector<double>& x0, const std::vector<double>& d, double s0,
                             double s1, std::size_t samples, double h) {
    const std::size_t dim = x0.size();
    if (d.size() != dim || net.spec().input != Shape{dim}) throw Error("max_second_difference: dimension mismatch");
    if (samples < 1 || !(h > 0.0)) throw Error("max_second_difference: need samples >= 1 and h > 0");
    Tensor pts(Shape{3 * samples, dim});
    for (std::size_t k = 0; k < samples; ++k) {
        const double s = samples == 1 ? s0 : s0 + (s1 - s0) * double(k) / double(samples - 1);
        for (int o = -1; o <= 1; ++o)
            for (std::size_t a = 0; a < dim; ++a) pts[(3 * k + std::size_t(o + 1)) * dim + a] = x0[a] + (s + o * h) * d[a];
    }
    Tensor y = predict(net, pts);
    const std::size_t out = y.dim(1);
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k)
        for (std::size_t c = 0; c < out; ++c) {
            const double sd = y[(3 * k) * out + c] - 2.0 * y[(3 * k + 1) * out + c] + y[(3 * k + 2) * out + c];
            worst = std::max(worst, std::abs(sd) / (h * h));
        }
    return worst;
}

std::string region_grid_csv(const RegionReport& r) {
    std::string out = "x,y,class\n";
    for (std::size_t j = 0; j < r.ny; ++j)
        for (std::size_t i = 0; i < r.nx; ++i)
            out += format_g6(r.cell_x(i)) + ',' + format_g6(r.cell_y(j)) + ',' + std::to_string(r.label(i, j)) + '\n';
    return out;
}

json region_report_json(const RegionReport& r) {
    json comps = json::object();
    std::vector<std::size_t> cells(r.num_classes, 0);
    for (auto c : r.grid) ++cells[c];
    json cell_counts = json::object();
    for (const auto& [cls, n] : r.components) {
        comps[std::to_string(cls)] = n;
        cell_counts[std::to_string(cls)] = cells[cls];
    }
    json j = {{"bounds", {r.bounds.x_min, r.bounds.x_max, r.bounds.y_min, r.bounds.y_max}},
              {"resolution", {r.nx, r.ny}},
              {"num_classes", r.num_classes},
              {"components_per_class", comps},
              {"cells_per_class", cell_counts}};
    if (r.analytic) {
        j["A"] = r.analytic->a;
        j["B"] = r.analytic->b;
        j["C"] = r.analytic->c;
        j["boundary_type"] = to_string(r.analytic->type);
    }
    return j;
}

std::string spiral_dataset_csv(const SpiralDataset& d) {
    std::string out;
    if (d.task == SpiralTask::regression) {
        out = "t,x,y\n";
        for (std::size_t i = 0; i < d.size(); ++i)
            out += format_g6(d.times[i]) + ',' + format_g6(d.targets[2 * i]) + ',' + format_g6(d.targets[2 * i + 1]) + '\n';
    } else {
        out = "x,y,class\n";
        for (std::size_t i = 0; i < d.size(); ++i)
            out += format_g6(d.inputs[2 * i]) + ',' + format_g6(d.inputs[2 * i + 1]) + ',' + std::to_string(d.labels[i]) + '\n';
    }
    return out;
}

}  // namespace deepsquare
