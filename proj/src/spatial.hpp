#pragma once

#include <cstddef>
#include <vector>

#include "deepsquare/tensor.hpp"

namespace deepsquare::detail {

struct FeatureDims {
    std::size_t n, h, w, c;
    std::size_t hw() const { return h * w; }
};

inline FeatureDims feature_dims(const Tensor& x, const char* op) {
    if (x.rank() != 4) throw Error(std::string(op) + ": expected N x H x W x C input, got " + shape_string(x.shape()));
    return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

// out[n,c] = (sum_{h,w} f(x[n,h,w,c])) / (H*W). The single accumulation order here
// is shared by every spatial pooling so that algebraically equal poolings agree bitwise.
template <class F>
Tensor spatial_mean(const Tensor& x, const FeatureDims& d, F f) {
    Tensor out(Shape{d.n, d.c}, 0.0);
    auto src = x.data();
    auto dst = out.data();
    const double denom = static_cast<double>(d.hw());
    for (std::size_t n = 0; n < d.n; ++n) {
        double* acc = dst.data() + n * d.c;
        const double* base = src.data() + n * d.hw() * d.c;
        for (std::size_t p = 0; p < d.hw(); ++p) {
            const double* px = base + p * d.c;
            for (std::size_t c = 0; c < d.c; ++c) acc[c] += f(px[c]);
        }
        for (std::size_t c = 0; c < d.c; ++c) acc[c] = acc[c] / denom;
    }
    return out;
}

// Backward of spatial_mean: gx[n,h,w,c] += gout[n,c] * df(x[n,h,w,c]) / (H*W).
template <class DF>
void spatial_mean_backward(const Tensor& x, const FeatureDims& d, std::span<const double> gout,
                           std::span<double> gx, DF df) {
    auto src = x.data();
    const double denom = static_cast<double>(d.hw());
    for (std::size_t n = 0; n < d.n; ++n) {
        const double* g = gout.data() + n * d.c;
        for (std::size_t p = 0; p < d.hw(); ++p) {
            std::size_t off = (n * d.hw() + p) * d.c;
            for (std::size_t c = 0; c < d.c; ++c) gx[off + c] += g[c] * df(src[off + c]) / denom;
        }
    }
}

}  // namespace deepsquare::detail
