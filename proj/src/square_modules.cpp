#include "deepsquare/square_modules.hpp"

#include <cmath>
#include <memory>

#include "deepsquare/ops.hpp"
#include "spatial.hpp"

namespace deepsquare {

SoftminParams SoftminParams::make(std::size_t channels, bool shared, double init) {
    if (channels == 0) throw Error("softmin: channel count must be positive");
    return SoftminParams{Tensor(Shape{shared ? std::size_t{1} : channels}, init), shared};
}

ExcitationParams ExcitationParams::make(double init) {
    return ExcitationParams{Tensor(Shape{1}, init)};
}

namespace {

double int_pow(double t, int order) {
    double r = t;
    for (int i = 1; i < order; ++i) r *= t;
    return r;
}

bool is_integer(double p) {
    return std::floor(p) == p && p >= 1.0 && p <= 64.0;
}

double real_pow(double t, double p) {
    return is_integer(p) ? int_pow(t, static_cast<int>(p)) : std::pow(t, p);
}

}  // namespace

Var square_pool(Var feature) {
    const Tensor& F = feature.value();
    auto d = detail::feature_dims(F, "square_pool");
    Tensor out = detail::spatial_mean(F, d, [](double t) { return t * t; });
    return feature.tape()->record("square_pool", {feature}, std::move(out), [d](const BackwardContext& ctx) {
        detail::spatial_mean_backward(*ctx.inputs[0], d, ctx.grad_out, ctx.grad_in[0],
                                      [](double t) { return 2.0 * t; });
    });
}

Var moment_pool(Var feature, int order) {
    if (order < kMinMomentOrder || order > kMaxMomentOrder)
        throw Error("moment_pool: order must lie in [1, 6], got " + std::to_string(order));
    const Tensor& F = feature.value();
    auto d = detail::feature_dims(F, "moment_pool");
    Tensor out = detail::spatial_mean(F, d, [order](double t) { return int_pow(t, order); });
    return feature.tape()->record(
        "moment_pool" + std::to_string(order), {feature}, std::move(out), [d, order](const BackwardContext& ctx) {
            detail::spatial_mean_backward(*ctx.inputs[0], d, ctx.grad_out, ctx.grad_in[0], [order](double t) {
                return order == 1 ? 1.0 : static_cast<double>(order) * int_pow(t, order - 1);
            });
        });
}

Var gem_pool(Var feature, double p) {
    if (!(p > 0.0) || !std::isfinite(p)) throw Error("gem_pool: exponent must be positive, got " + std::to_string(p));
    const Tensor& F = feature.value();
    auto d = detail::feature_dims(F, "gem_pool");
    for (double v : F.data())
        if (v < 0.0) throw Error("gem_pool: input must be nonnegative, found " + std::to_string(v));
    if (p == 1.0) return gap(feature);

    Tensor mean = detail::spatial_mean(F, d, [p](double t) { return real_pow(t, p); });
    auto shifted = std::make_shared<std::vector<double>>(mean.size());
    Tensor out(mean.shape());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        (*shifted)[i] = mean[i] + kGemRootEpsilon;
        out[i] = p == 2.0 ? std::sqrt((*shifted)[i]) : std::pow((*shifted)[i], 1.0 / p);
    }
    auto root = std::make_shared<std::vector<double>>(out.data().begin(), out.data().end());
    return feature.tape()->record("gem_pool", {feature}, std::move(out), [d, p, shifted, root](const BackwardContext& ctx) {
        // d/dF = y / (m + eps) * F^(p-1) / HW
        std::vector<double> g(ctx.grad_out.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = ctx.grad_out[i] * (*root)[i] / (*shifted)[i];
        detail::spatial_mean_backward(*ctx.inputs[0], d, g, ctx.grad_in[0],
                                      [p](double t) { return p == 2.0 ? t : real_pow(t, p - 1.0); });
    });
}

Var square_softmin(Var x, Var raw) {
    const Tensor& X = x.value();
    const Tensor& R = raw.value();
    if (X.rank() != 2) throw Error("square_softmin: input must be B x K, got " + shape_string(X.shape()));
    const std::size_t B = X.dim(0), K = X.dim(1);
    if (R.size() != 1 && R.size() != K)
        throw Error("square_softmin: expected 1 or " + std::to_string(K) + " scales, got " + std::to_string(R.size()));
    const bool shared = R.size() == 1;
    Tensor out(X.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k) {
            double r = R[shared ? 0 : k];
            double t = X[b * K + k];
            out[b * K + k] = -(r * r) * (t * t);
        }
    return x.tape()->record("square_softmin", {x, raw}, std::move(out), [B, K, shared](const BackwardContext& ctx) {
        const Tensor& X = *ctx.inputs[0];
        const Tensor& R = *ctx.inputs[1];
        auto gx = ctx.grad_in[0];
        auto gr = ctx.grad_in[1];
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < K; ++k) {
                std::size_t j = shared ? 0 : k;
                double r = R[j];
                double t = X[b * K + k];
                double g = ctx.grad_out[b * K + k];
                if (!gx.empty()) gx[b * K + k] += -2.0 * r * r * t * g;
                if (!gr.empty()) gr[j] += -2.0 * r * t * t * g;
            }
    });
}

Var square_softmin(Var x, SoftminParams& params) {
    return square_softmin(x, x.tape()->leaf(params.raw));
}

Var scale_proportion(Var energy, Var alpha) {
    const Tensor& G = energy.value();
    const Tensor& A = alpha.value();
    if (A.size() != 1) throw Error("scale_proportion: alpha must be a scalar");
    const double a2 = A[0] * A[0];
    Tensor out(G.shape());
    for (std::size_t i = 0; i < G.size(); ++i) {
        if (G[i] < 0.0) throw Error("scale_proportion: channel energy must be nonnegative");
        double denom = G[i] + a2;
        out[i] = denom > 0.0 ? G[i] / denom : 0.0;
    }
    return energy.tape()->record("scale_proportion", {energy, alpha}, std::move(out), [](const BackwardContext& ctx) {
        const Tensor& G = *ctx.inputs[0];
        const double a = (*ctx.inputs[1])[0];
        const double a2 = a * a;
        auto gg = ctx.grad_in[0];
        auto ga = ctx.grad_in[1];
        double acc_a = 0.0;
        for (std::size_t i = 0; i < G.size(); ++i) {
            double denom = G[i] + a2;
            if (!(denom > 0.0)) continue;
            double inv2 = 1.0 / (denom * denom);
            if (!gg.empty()) gg[i] += ctx.grad_out[i] * a2 * inv2;
            acc_a += ctx.grad_out[i] * (-2.0 * a * G[i] * inv2);
        }
        if (!ga.empty()) ga[0] += acc_a;
    });
}

Var square_excitation(Var feature, Var alpha) {
    return channel_scale(feature, scale_proportion(square_pool(feature), alpha));
}

Var square_excitation(Var feature, ExcitationParams& params) {
    return square_excitation(feature, feature.tape()->leaf(params.alpha));
}

Var learnable_scale(Var x, Var raw) {
    const Tensor& R = raw.value();
    if (R.size() != 1) throw Error("learnable_scale: expects a single scalar");
    const Tensor& X = x.value();
    const double s = R[0] * R[0];
    Tensor out(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) out[i] = s * X[i];
    return x.tape()->record("learnable_scale", {x, raw}, std::move(out), [](const BackwardContext& ctx) {
        const Tensor& X = *ctx.inputs[0];
        const double r = (*ctx.inputs[1])[0];
        auto gx = ctx.grad_in[0];
        double acc = 0.0;
        for (std::size_t i = 0; i < X.size(); ++i) {
            if (!gx.empty()) gx[i] += r * r * ctx.grad_out[i];
            acc += 2.0 * r * X[i] * ctx.grad_out[i];
        }
        if (auto gr = ctx.grad_in[1]; !gr.empty()) gr[0] += acc;
    });
}

}  // namespace deepsquare
