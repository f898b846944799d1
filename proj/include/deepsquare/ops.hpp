#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "deepsquare/rng.hpp"
#include "deepsquare/tape.hpp"
#include "deepsquare/tensor.hpp"

namespace deepsquare {

enum class Mode { training, inference };

enum class Ewise { relu, square, relu_square, negate };

std::string_view to_string(Ewise kind);
Ewise ewise_from_string(std::string_view name);

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Elementwise maps. The relu subgradient at 0 is 0.
Var ewise_apply(Ewise kind, Var x);
inline Var relu(Var x) { return ewise_apply(Ewise::relu, x); }
inline Var square(Var x) { return ewise_apply(Ewise::square, x); }
inline Var relu_square(Var x) { return ewise_apply(Ewise::relu_square, x); }
inline Var negate(Var x) { return ewise_apply(Ewise::negate, x); }

Var add(Var a, Var b);

// y = x W + b for x: [B x D_in], W: [D_in x D_out], b: [D_out].
Var affine(Var x, Var weight, Var bias);

// Cross-correlation with zero padding. x: [N x H x W x C_in], kernel: [k x k x C_in x C_out].
Var conv2d(Var x, Var kernel, std::size_t stride, std::size_t pad);

// Per-channel normalization over N, H, W. Training mode updates state's running stats.
Var batchnorm2d(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode);

// Per-channel spatial mean: [N x H x W x C] -> [N x C].
Var gap(Var x);

// Broadcast multiply of a feature map by per-sample, per-channel factors:
// out[n,h,w,c] = x[n,h,w,c] * scale[n,c].
Var channel_scale(Var x, Var scale);

// Inverted dropout. Identity in inference mode or when rate == 0.
Var dropout(Var x, double rate, Rng& rng, Mode mode);

// Mean over the batch of -log softmax(logits)[target].
Var softmax_ce(Var logits, std::span<const std::size_t> targets);

// Mean over all elements of (pred - target)^2.
Var mse(Var pred, const Tensor& target);

// sum_i y_i * weights_i; reduces a tensor-valued output to a scalar.
Var weighted_sum(Var y, const Tensor& weights);

namespace detail {
// C[MxN] += A[MxK] * B[KxN]
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C);
// C[KxN] += A[MxK]^T * B[MxN]
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C);
// C[MxK] += A[MxN] * B[KxN]^T
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C);
}  // namespace detail

}  // namespace deepsquare
