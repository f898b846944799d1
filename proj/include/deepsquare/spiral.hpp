#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "deepsquare/network.hpp"
#include "deepsquare/train.hpp"

namespace deepsquare {

enum class SpiralTask { regression, classification };
enum class Split { train, test };

inline constexpr double kSpiralTurns = 3.0;
inline constexpr double kSpiralNoise = 0.02;
inline constexpr std::size_t kSpiralTrain = 1000;
inline constexpr std::size_t kSpiralTest = 500;

// End time of the spiral, 3 turns.
double spiral_t_max();
// Noise-free point at time t: radius t / t_max, angle t, then rotated by `rotation`.
std::array<double, 2> spiral_point(double t, double rotation = 0.0);

struct SpiralDataset {
    SpiralTask task = SpiralTask::regression;
    Split split = Split::train;
    std::uint64_t seed = 0;
    std::vector<double> times;        // raw time of every sample
    Tensor inputs;                    // regression: [n x 1] 2 t / t_max - 1; classification: [n x 2] points
    Tensor targets;                   // regression: [n x 2] points; classification: [n] arm index
    std::vector<std::size_t> labels;  // classification only

    std::size_t size() const noexcept { return times.size(); }
};

// Time uniform on [0, t_max], target spiral_point(t) plus N(0, noise_sd^2) on each coordinate.
SpiralDataset gen_one_arm(std::size_t n, double noise_sd, std::uint64_t seed, Split split = Split::train);
// Arm j is the one-arm spiral rotated by 2 pi j / 3; n_per_arm samples each, noise on the points.
SpiralDataset gen_three_arm(std::size_t n_per_arm, double noise_sd, std::uint64_t seed, Split split = Split::train);

struct SpiralTrainConfig {
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::size_t epochs = 2000;
    std::uint64_t seed = 1;
};

struct SpiralFit {
    Network net;
    ExperimentResult result;  // accuracy columns are 0 for regression
};

// Hidden biases start uniform on [-1, 1]; all other parameters follow Network init.
// Full-batch SGD with Nesterov momentum and cosine decay (no warmup). Regression uses
// mse, classification softmax_ce. A non-finite loss ends the run with diverged set.
SpiralFit fit_two_layer(const SpiralDataset& train, const SpiralDataset& test, std::size_t hidden, Ewise activation,
                        const SpiralTrainConfig& config);

// Network outputs for the given input rows.
Tensor predict(Network& net, const Tensor& inputs);

// --- Decision boundaries of the two-layer square network with identity first layer.

enum class BoundaryType { hyperbola, ellipse, parallel_lines, degenerate, empty };
std::string_view to_string(BoundaryType type);

// y_j = sum_i w_ij act(h_i) + b_j with h = x.
struct BoundaryProblem {
    std::array<double, 4> w{1.0, 0.0, 0.0, 1.0};  // w11, w12, w21, w22
    std::array<double, 2> b{0.0, 1.0};
    Ewise activation = Ewise::square;
};

struct BoundaryCoefficients {
    double a = 0.0;  // w11 - w12
    double b = 0.0;  // w21 - w22
    double c = 0.0;  // b2 - b1
    BoundaryType type = BoundaryType::degenerate;
};

// The boundary y1 = y2 is a h1^2 + b h2^2 = c. Requires square activation.
BoundaryCoefficients boundary_coefficients(const BoundaryProblem& problem);
BoundaryType classify_boundary(double a, double b, double c);

// Maps a batch of 2-D points [M x 2] to class logits [M x K].
using LogitModel = std::function<Tensor(const Tensor&)>;
LogitModel logit_model(const BoundaryProblem& problem);
LogitModel logit_model(Network& net);

// Two-layer network whose parameters reproduce `problem` (first layer is the identity).
Network boundary_network(const BoundaryProblem& problem);

struct Bounds {
    double x_min = -3.0, x_max = 3.0, y_min = -3.0, y_max = 3.0;
};

struct RegionReport {
    Bounds bounds;
    std::size_t nx = 0, ny = 0;
    std::size_t num_classes = 0;
    std::vector<std::size_t> grid;                  // row-major, row = y index
    std::map<std::size_t, std::size_t> components;  // class -> 4-connected component count
    std::optional<BoundaryCoefficients> analytic;

    double cell_x(std::size_t i) const { return bounds.x_min + (double(i) + 0.5) * (bounds.x_max - bounds.x_min) / double(nx); }
    double cell_y(std::size_t j) const { return bounds.y_min + (double(j) + 0.5) * (bounds.y_max - bounds.y_min) / double(ny); }
    std::size_t label(std::size_t i, std::size_t j) const { return grid[j * nx + i]; }
};

// Labels every cell centre by argmax (ties to the lower class) and counts components.
RegionReport count_decision_regions(const LogitModel& model, const Bounds& bounds, std::size_t nx, std::size_t ny);

// Number of 4-connected components of cells equal to `cls`.
std::size_t count_components(const std::vector<std::size_t>& grid, std::size_t nx, std::size_t ny, std::size_t cls);

// Largest coordinate magnitude over every vertex of the piecewise-linear arrangement of a
// two-class, 2-D input, one-hidden-layer relu network: pairwise intersections of the hidden
// lines h_i = 0 and of the class-boundary line within each activation pattern. A box that
// contains all vertices sees the same region connectivity as the whole plane.
double relu_arrangement_extent(const Network& net);

// Largest |f(s+h) - 2 f(s) + f(s-h)| / h^2 over `samples` evenly spaced s in [s0, s1]
// along the ray x0 + s d, taken over every output coordinate.
double max_second_difference(Network& net, const std::vector<double>& x0, const std::vector<double>& d, double s0,
                             double s1, std::size_t samples, double h);

// --- Serialization for plotting.
std::string region_grid_csv(const RegionReport& report);  // x,y,class
nlohmann::json region_report_json(const RegionReport& report);
std::string spiral_dataset_csv(const SpiralDataset& data);  // t,x,y or x,y,class

}  // namespace deepsquare
