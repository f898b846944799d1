#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "deepsquare/tape.hpp"
#include "deepsquare/tensor.hpp"

namespace deepsquare {

inline constexpr double kDefaultFdStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

// f records a computation on the tape from one Var per input and returns its
// (tensor-valued) output. f must be deterministic.
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

// Max over all input coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|),
// where numeric is the central difference with step h. Tensor outputs are reduced to
// a scalar by a fixed random projection drawn from projection_seed.
double grad_check(const TapeFunction& f, std::span<Tensor* const> inputs, double h = kDefaultFdStep,
                  std::uint64_t projection_seed = 0x5eed);

double grad_check(const std::function<Var(Var)>& f, Tensor x, double h = kDefaultFdStep);

struct OpCheckReport {
    std::string op;
    double max_error = 0.0;
    int seeds = 0;
    bool passed = false;
};

// Names of every operation certified by run_gradcheck_suite, in run order.
std::vector<std::string> gradcheck_op_names();

// Checks each op (or only `only`, when non-empty) at `seeds` seeded random inputs.
// Unknown names in `only` raise Error.
std::vector<OpCheckReport> run_gradcheck_suite(std::span<const std::string> only = {}, int seeds = 5,
                                               double tolerance = kGradCheckTolerance);

}  // namespace deepsquare
