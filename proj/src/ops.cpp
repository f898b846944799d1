#include "deepsquare/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "spatial.hpp"

namespace deepsquare {

std::string_view to_string(Ewise kind) {
    switch (kind) {
        case Ewise::relu: return "relu";
        case Ewise::square: return "square";
        case Ewise::relu_square: return "relu_square";
        case Ewise::negate: return "negate";
    }
    return "?";
}

Ewise ewise_from_string(std::string_view name) {
    if (name == "relu") return Ewise::relu;
    if (name == "square") return Ewise::square;
    if (name == "relu_square") return Ewise::relu_square;
    if (name == "negate") return Ewise::negate;
    throw Error("unknown elementwise kind '" + std::string(name) + "'");
}

Var ewise_apply(Ewise kind, Var x) {
    const Tensor& in = x.value();
    Tensor out(in.shape());
    auto src = in.data();
    auto dst = out.data();
    switch (kind) {
        case Ewise::relu:
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
            break;
        case Ewise::square:
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * src[i];
            break;
        case Ewise::relu_square:
            for (std::size_t i = 0; i < src.size(); ++i) {
                double r = src[i] > 0.0 ? src[i] : 0.0;
                dst[i] = r * r;
            }
            break;
        case Ewise::negate:
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = -src[i];
            break;
    }
    return x.tape()->record(to_string(kind), {x}, std::move(out), [kind](const BackwardContext& ctx) {
        auto gx = ctx.grad_in[0];
        auto g = ctx.grad_out;
        auto t = ctx.inputs[0]->data();
        switch (kind) {
            case Ewise::relu:
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += t[i] > 0.0 ? g[i] : 0.0;
                break;
            case Ewise::square:
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * t[i] * g[i];
                break;
            case Ewise::relu_square:
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += t[i] > 0.0 ? 2.0 * t[i] * g[i] : 0.0;
                break;
            case Ewise::negate:
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= g[i];
                break;
        }
    });
}

Var add(Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.shape() != y.shape())
        throw Error("add: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return a.tape()->record("add", {a, b}, std::move(out), [](const BackwardContext& ctx) {
        for (auto gx : ctx.grad_in)
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.grad_out[i];
    });
}

namespace detail {

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        double* c = C + i * N;
        const double* a = A + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = a[k];
            if (aik == 0.0) continue;
            const double* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        const double* b = B + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = a[k];
            if (aik == 0.0) continue;
            double* c = C + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const double* a = A + i * N;
        double* c = C + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double* b = B + k * N;
            double s = 0.0;
            for (std::size_t j = 0; j < N; ++j) s += a[j] * b[j];
            c[k] += s;
        }
    }
}

}  // namespace detail

Var affine(Var x, Var weight, Var bias) {
    const Tensor& X = x.value();
    const Tensor& W = weight.value();
    const Tensor& b = bias.value();
    if (X.rank() != 2 || W.rank() != 2 || b.rank() != 1 || X.dim(1) != W.dim(0) || W.dim(1) != b.dim(0))
        throw Error("affine: incompatible shapes x" + shape_string(X.shape()) + " W" + shape_string(W.shape()) +
                    " b" + shape_string(b.shape()));
    const std::size_t B = X.dim(0), Din = W.dim(0), Dout = W.dim(1);
    Tensor out(Shape{B, Dout});
    auto y = out.data();
    for (std::size_t r = 0; r < B; ++r)
        std::copy(b.data().begin(), b.data().end(), y.begin() + static_cast<std::ptrdiff_t>(r * Dout));
    detail::gemm_nn(B, Dout, Din, X.data().data(), W.data().data(), y.data());

    return x.tape()->record("affine", {x, weight, bias}, std::move(out), [B, Din, Dout](const BackwardContext& ctx) {
        const double* g = ctx.grad_out.data();
        if (!ctx.grad_in[0].empty())
            detail::gemm_nt(B, Dout, Din, g, ctx.inputs[1]->data().data(), ctx.grad_in[0].data());
        if (!ctx.grad_in[1].empty())
            detail::gemm_tn(B, Dout, Din, ctx.inputs[0]->data().data(), g, ctx.grad_in[1].data());
        if (auto gb = ctx.grad_in[2]; !gb.empty())
            for (std::size_t r = 0; r < B; ++r)
                for (std::size_t j = 0; j < Dout; ++j) gb[j] += g[r * Dout + j];
    });
}

namespace {

struct ConvGeometry {
    std::size_t n, h, w, cin, k, cout, stride, pad, oh, ow;
    std::size_t rows() const { return n * oh * ow; }
    std::size_t cols() const { return k * k * cin; }
};

// Rows are output positions (n, oh, ow); columns are taps ordered (kh, kw, cin),
// matching the kernel's [k x k x C_in x C_out] layout.
std::vector<double> im2col(const double* x, const ConvGeometry& g) {
    std::vector<double> cols(g.rows() * g.cols(), 0.0);
    std::size_t row = 0;
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t oy = 0; oy < g.oh; ++oy)
            for (std::size_t ox = 0; ox < g.ow; ++ox, ++row) {
                double* dst = cols.data() + row * g.cols();
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        const double* src = x + ((n * g.h + static_cast<std::size_t>(iy)) * g.w +
                                                 static_cast<std::size_t>(ix)) * g.cin;
                        std::copy(src, src + g.cin, dst + (ky * g.k + kx) * g.cin);
                    }
                }
            }
    return cols;
}

void col2im_add(const double* cols, const ConvGeometry& g, double* gx) {
    std::size_t row = 0;
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t oy = 0; oy < g.oh; ++oy)
            for (std::size_t ox = 0; ox < g.ow; ++ox, ++row) {
                const double* src = cols + row * g.cols();
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        double* dst = gx + ((n * g.h + static_cast<std::size_t>(iy)) * g.w +
                                            static_cast<std::size_t>(ix)) * g.cin;
                        const double* s = src + (ky * g.k + kx) * g.cin;
                        for (std::size_t c = 0; c < g.cin; ++c) dst[c] += s[c];
                    }
                }
            }
}

}  // namespace

Var conv2d(Var x, Var kernel, std::size_t stride, std::size_t pad) {
    const Tensor& X = x.value();
    const Tensor& K = kernel.value();
    if (X.rank() != 4) throw Error("conv2d: input must be N x H x W x C, got " + shape_string(X.shape()));
    if (K.rank() != 4 || K.dim(0) != K.dim(1))
        throw Error("conv2d: kernel must be k x k x C_in x C_out, got " + shape_string(K.shape()));
    if (K.dim(2) != X.dim(3))
        throw Error("conv2d: kernel expects " + std::to_string(K.dim(2)) + " input channels, input has " +
                    std::to_string(X.dim(3)));
    if (stride == 0) throw Error("conv2d: stride must be positive");
    ConvGeometry g{X.dim(0), X.dim(1), X.dim(2), X.dim(3), K.dim(0), K.dim(3), stride, pad, 0, 0};
    auto extent = [&](std::size_t len) -> std::size_t {
        auto span = static_cast<std::ptrdiff_t>(len + 2 * pad) - static_cast<std::ptrdiff_t>(g.k);
        if (span < 0) throw Error("conv2d: non-positive output extent for input " + shape_string(X.shape()));
        return static_cast<std::size_t>(span) / stride + 1;
    };
    g.oh = extent(g.h);
    g.ow = extent(g.w);

    auto cols = std::make_shared<std::vector<double>>(im2col(X.data().data(), g));
    Tensor out(Shape{g.n, g.oh, g.ow, g.cout});
    detail::gemm_nn(g.rows(), g.cout, g.cols(), cols->data(), K.data().data(), out.data().data());

    return x.tape()->record("conv2d", {x, kernel}, std::move(out), [g, cols](const BackwardContext& ctx) {
        const double* gy = ctx.grad_out.data();
        if (auto gk = ctx.grad_in[1]; !gk.empty())
            detail::gemm_tn(g.rows(), g.cout, g.cols(), cols->data(), gy, gk.data());
        if (auto gx = ctx.grad_in[0]; !gx.empty()) {
            std::vector<double> gcols(g.rows() * g.cols(), 0.0);
            detail::gemm_nt(g.rows(), g.cout, g.cols(), gy, ctx.inputs[1]->data().data(), gcols.data());
            col2im_add(gcols.data(), g, gx.data());
        }
    });
}

Var batchnorm2d(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode) {
    const Tensor& X = x.value();
    auto d = detail::feature_dims(X, "batchnorm2d");
    const Tensor& G = gamma.value();
    const Tensor& Bt = beta.value();
    if (G.size() != d.c || Bt.size() != d.c || state.running_mean.size() != d.c || state.running_var.size() != d.c)
        throw Error("batchnorm2d: channel count mismatch (input has " + std::to_string(d.c) + ")");
    const std::size_t count = d.n * d.hw();
    if (count == 0) throw Error("batchnorm2d: empty batch");

    std::vector<double> mean(d.c, 0.0), var(d.c, 0.0);
    auto src = X.data();
    if (mode == Mode::training) {
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t c = 0; c < d.c; ++c) mean[c] += src[i * d.c + c];
        for (auto& m : mean) m /= static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t c = 0; c < d.c; ++c) {
                double t = src[i * d.c + c] - mean[c];
                var[c] += t * t;
            }
        for (auto& v : var) v /= static_cast<double>(count);
        const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
        for (std::size_t c = 0; c < d.c; ++c) {
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * var[c] * unbias;
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    auto inv_std = std::make_shared<std::vector<double>>(d.c);
    for (std::size_t c = 0; c < d.c; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var[c] + state.epsilon);

    auto xhat = std::make_shared<std::vector<double>>(X.size());
    Tensor out(X.shape());
    auto y = out.data();
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t c = 0; c < d.c; ++c) {
            std::size_t k = i * d.c + c;
            (*xhat)[k] = (src[k] - mean[c]) * (*inv_std)[c];
            y[k] = G[c] * (*xhat)[k] + Bt[c];
        }

    return x.tape()->record(
        "batchnorm2d", {x, gamma, beta}, std::move(out), [d, count, mode, inv_std, xhat](const BackwardContext& ctx) {
            auto g = ctx.grad_out;
            const Tensor& G = *ctx.inputs[1];
            std::vector<double> sum_g(d.c, 0.0), sum_gx(d.c, 0.0);
            for (std::size_t i = 0; i < count; ++i)
                for (std::size_t c = 0; c < d.c; ++c) {
                    std::size_t k = i * d.c + c;
                    sum_g[c] += g[k];
                    sum_gx[c] += g[k] * (*xhat)[k];
                }
            if (auto gg = ctx.grad_in[1]; !gg.empty())
                for (std::size_t c = 0; c < d.c; ++c) gg[c] += sum_gx[c];
            if (auto gb = ctx.grad_in[2]; !gb.empty())
                for (std::size_t c = 0; c < d.c; ++c) gb[c] += sum_g[c];
            auto gx = ctx.grad_in[0];
            if (gx.empty()) return;
            if (mode == Mode::inference) {
                for (std::size_t i = 0; i < count; ++i)
                    for (std::size_t c = 0; c < d.c; ++c) gx[i * d.c + c] += g[i * d.c + c] * G[c] * (*inv_std)[c];
                return;
            }
            const double n = static_cast<double>(count);
            for (std::size_t i = 0; i < count; ++i)
                for (std::size_t c = 0; c < d.c; ++c) {
                    std::size_t k = i * d.c + c;
                    gx[k] += G[c] * (*inv_std)[c] / n * (n * g[k] - sum_g[c] - (*xhat)[k] * sum_gx[c]);
                }
        });
}

Var gap(Var x) {
    const Tensor& X = x.value();
    auto d = detail::feature_dims(X, "gap");
    Tensor out = detail::spatial_mean(X, d, [](double t) { return t; });
    return x.tape()->record("gap", {x}, std::move(out), [d](const BackwardContext& ctx) {
        detail::spatial_mean_backward(*ctx.inputs[0], d, ctx.grad_out, ctx.grad_in[0], [](double) { return 1.0; });
    });
}

Var channel_scale(Var x, Var scale) {
    const Tensor& X = x.value();
    const Tensor& S = scale.value();
    auto d = detail::feature_dims(X, "channel_scale");
    if (S.rank() != 2 || S.dim(0) != d.n || S.dim(1) != d.c)
        throw Error("channel_scale: scale must be " + shape_string({d.n, d.c}) + ", got " + shape_string(S.shape()));
    Tensor out(X.shape());
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t p = 0; p < d.hw(); ++p)
            for (std::size_t c = 0; c < d.c; ++c) {
                std::size_t k = (n * d.hw() + p) * d.c + c;
                out[k] = X[k] * S[n * d.c + c];
            }
    return x.tape()->record("channel_scale", {x, scale}, std::move(out), [d](const BackwardContext& ctx) {
        const Tensor& X = *ctx.inputs[0];
        const Tensor& S = *ctx.inputs[1];
        auto g = ctx.grad_out;
        auto gx = ctx.grad_in[0];
        auto gs = ctx.grad_in[1];
        for (std::size_t n = 0; n < d.n; ++n)
            for (std::size_t p = 0; p < d.hw(); ++p)
                for (std::size_t c = 0; c < d.c; ++c) {
                    std::size_t k = (n * d.hw() + p) * d.c + c;
                    if (!gx.empty()) gx[k] += g[k] * S[n * d.c + c];
                    if (!gs.empty()) gs[n * d.c + c] += g[k] * X[k];
                }
    });
}

Var dropout(Var x, double rate, Rng& rng, Mode mode) {
    if (!(rate >= 0.0) || rate >= 1.0) throw Error("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    if (mode == Mode::inference || rate == 0.0) return x;
    const Tensor& X = x.value();
    const double keep_scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<double>>(X.size());
    Tensor out(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) {
        (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
        out[i] = X[i] * (*mask)[i];
    }
    return x.tape()->record("dropout", {x}, std::move(out), [mask](const BackwardContext& ctx) {
        auto gx = ctx.grad_in[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.grad_out[i] * (*mask)[i];
    });
}

Var softmax_ce(Var logits, std::span<const std::size_t> targets) {
    const Tensor& L = logits.value();
    if (L.rank() != 2) throw Error("softmax_ce: logits must be B x K, got " + shape_string(L.shape()));
    const std::size_t B = L.dim(0), K = L.dim(1);
    if (targets.size() != B)
        throw Error("softmax_ce: " + std::to_string(targets.size()) + " targets for batch of " + std::to_string(B));
    for (auto t : targets)
        if (t >= K) throw Error("softmax_ce: target " + std::to_string(t) + " outside [0, " + std::to_string(K) + ")");

    auto probs = std::make_shared<std::vector<double>>(B * K);
    double loss = 0.0;
    for (std::size_t r = 0; r < B; ++r) {
        const double* row = L.data().data() + r * K;
        double mx = *std::max_element(row, row + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
        double log_z = std::log(z) + mx;
        for (std::size_t k = 0; k < K; ++k) (*probs)[r * K + k] = std::exp(row[k] - log_z);
        loss += log_z - row[targets[r]];
    }
    loss /= static_cast<double>(B);
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return logits.tape()->record("softmax_ce", {logits}, Tensor::scalar(loss),
                                 [B, K, probs, tgt = std::move(tgt)](const BackwardContext& ctx) {
                                     auto gx = ctx.grad_in[0];
                                     const double scale = ctx.grad_out[0] / static_cast<double>(B);
                                     for (std::size_t r = 0; r < B; ++r)
                                         for (std::size_t k = 0; k < K; ++k) {
                                             double onehot = k == tgt[r] ? 1.0 : 0.0;
                                             gx[r * K + k] += scale * ((*probs)[r * K + k] - onehot);
                                         }
                                 });
}

Var mse(Var pred, const Tensor& target) {
    const Tensor& P = pred.value();
    if (P.shape() != target.shape())
        throw Error("mse: prediction " + shape_string(P.shape()) + " vs target " + shape_string(target.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        double e = P[i] - target[i];
        s += e * e;
    }
    const double n = static_cast<double>(P.size());
    return pred.tape()->record("mse", {pred}, Tensor::scalar(s / n), [target, n](const BackwardContext& ctx) {
        auto gx = ctx.grad_in[0];
        const Tensor& P = *ctx.inputs[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.grad_out[0] * 2.0 * (P[i] - target[i]) / n;
    });
}

Var weighted_sum(Var y, const Tensor& weights) {
    const Tensor& Y = y.value();
    if (Y.size() != weights.size()) throw Error("weighted_sum: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < Y.size(); ++i) s += Y[i] * weights[i];
    return y.tape()->record("weighted_sum", {y}, Tensor::scalar(s), [weights](const BackwardContext& ctx) {
        auto gx = ctx.grad_in[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.grad_out[0] * weights[i];
    });
}

}  // namespace deepsquare
