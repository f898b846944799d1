#pragma once

#include <cstddef>

#include "deepsquare/tape.hpp"
#include "deepsquare/tensor.hpp"

namespace deepsquare {

// Learnable per-channel (or shared) Softmin scales. The effective scale is
// s_k = raw_k^2, so nonnegativity holds for any raw value.
struct SoftminParams {
    Tensor raw;
    bool shared = true;

    static SoftminParams make(std::size_t channels, bool shared, double init = 1.0);
};

// Scale-Proportion alpha, one scalar shared by all channels of a block.
struct ExcitationParams {
    Tensor alpha;

    static ExcitationParams make(double init = 1.0);
};

inline constexpr int kMinMomentOrder = 1;
inline constexpr int kMaxMomentOrder = 6;
inline constexpr double kGemRootEpsilon = 1e-12;

// G_k = mean over (h, w) of F^2. Bitwise equal to gap(square(F)).
Var square_pool(Var feature);

// Spatial mean of F^order, order in [1, 6]. No absolute value or root is taken.
Var moment_pool(Var feature, int order);

// ((mean F^p) + eps)^(1/p) for p != 1; plain gap for p == 1. F must be >= 0.
Var gem_pool(Var feature, double p);

// y_k = -raw_k^2 * x_k^2. raw has length K, or length 1 broadcast over K.
Var square_softmin(Var x, Var raw);
Var square_softmin(Var x, SoftminParams& params);

// s_k = G_k / (G_k + alpha^2); defined as 0 (with zero gradient) when both vanish.
Var scale_proportion(Var energy, Var alpha);

// F rescaled per channel by scale_proportion(square_pool(F)).
Var square_excitation(Var feature, Var alpha);
Var square_excitation(Var feature, ExcitationParams& params);

// y = raw^2 * x with a single learnable scalar raw.
Var learnable_scale(Var x, Var raw);

}  // namespace deepsquare
