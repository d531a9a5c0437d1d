// Independent reference implementations used only by tests. These stay
// deliberately naive (explicit nested loops) and share no code with the
// library paths they check.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fd/kernels.hpp"
#include "fd/tensor.hpp"

namespace oracle {

// Direct quadruple-loop cross-correlation with zero padding.
inline fd::Tensor4 conv2d(const fd::Tensor4& x, const std::vector<double>& weights,
                          const std::vector<double>& bias, int c_out, int k, int stride,
                          int pad) {
    const int oh = (x.h + 2 * pad - k) / stride + 1;
    const int ow = (x.w + 2 * pad - k) / stride + 1;
    fd::Tensor4 out(x.n, c_out, oh, ow);
    for (int n = 0; n < x.n; ++n)
        for (int oc = 0; oc < c_out; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias[oc];
                    for (int ic = 0; ic < x.c; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                                acc += weights[((static_cast<std::size_t>(oc) * x.c + ic) * k + ky) * k + kx] *
                                       x.at(n, ic, iy, ix);
                            }
                    out.at(n, oc, oy, ox) = acc;
                }
    return out;
}

// Depthwise cross-correlation of one channel, stride 1, same padding.
inline void depthwise_plane(const fd::Tensor4& x, fd::Tensor4& out, int n, int c,
                            const fd::Kernel2D& kern) {
    const int k = kern.size();
    const int r = (k - 1) / 2;
    for (int oy = 0; oy < x.h; ++oy)
        for (int ox = 0; ox < x.w; ++ox) {
            double acc = 0.0;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const int iy = oy + ky - r;
                    const int ix = ox + kx - r;
                    if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                    acc += kern.at(ky, kx) * x.at(n, c, iy, ix);
                }
            out.at(n, c, oy, ox) = acc;
        }
}

// Central finite difference of a scalar function at one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x0,
                           double step = 1e-5) {
    return (f(x0 + step) - f(x0 - step)) / (2.0 * step);
}

// Relative error with denominator max(|a|, |b|, eps).
inline double rel_err(double a, double b, double eps = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), eps});
}

} // namespace oracle
