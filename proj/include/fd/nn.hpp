#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <limits>
#include <string>
#include <vector>

#include "fd/errors.hpp"
#include "fd/rng.hpp"
#include "fd/tensor.hpp"

namespace fd {

struct ConvLayer {
    int c_in = 0, c_out = 0, k = 3, stride = 1, padding = 1;
    std::vector<double> weights; // (c_out, c_in, k, k)
    std::vector<double> bias;    // (c_out)

    ConvLayer() = default;
    ConvLayer(int c_in_, int c_out_, int k_, int stride_ = 1, int padding_ = -1)
        : c_in(c_in_), c_out(c_out_), k(k_), stride(stride_),
          padding(padding_ < 0 ? (k_ - 1) / 2 : padding_),
          weights(static_cast<std::size_t>(c_out_) * c_in_ * k_ * k_, 0.0),
          bias(static_cast<std::size_t>(c_out_), 0.0) {
        if (k_ < 1 || k_ % 2 == 0) throw ConfigError("conv kernel size must be odd");
        if (c_in_ < 1 || c_out_ < 1) throw ConfigError("conv channel counts must be >= 1");
    }

    int out_dim(int in_dim) const { return (in_dim + 2 * padding - k) / stride + 1; }

    void init_kaiming_uniform(RngStream& rng) {
        const int fan_in = c_in * k * k;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& v : weights) v = rng.uniform(-bound, bound);
        std::fill(bias.begin(), bias.end(), 0.0);
    }
};

struct DenseLayer {
    int in = 0, out = 0;
    std::vector<double> weights; // (out, in)
    std::vector<double> bias;    // (out)

    DenseLayer() = default;
    DenseLayer(int in_, int out_)
        : in(in_), out(out_), weights(static_cast<std::size_t>(out_) * in_, 0.0),
          bias(static_cast<std::size_t>(out_), 0.0) {}

    void init_kaiming_uniform(RngStream& rng) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        for (double& v : weights) v = rng.uniform(-bound, bound);
        std::fill(bias.begin(), bias.end(), 0.0);
    }
};

namespace detail {

// Monotone-growing scratch buffers for the GEMM staging matrices. Avoids a
// large mmap/munmap round trip per convolution call; contents are always
// fully overwritten before use.
inline double* scratch(int slot, std::size_t n) {
    thread_local std::vector<double> bufs[3];
    if (bufs[slot].size() < n) bufs[slot].resize(n);
    return bufs[slot].data();
}

// im2col for the whole batch: output is (c_in*k*k) x (n*oh*ow), so the
// conv becomes a single GEMM against the (c_out) x (c_in*k*k) weight matrix.
inline void im2col(const Tensor4& x, int k, int stride, int pad, int oh, int ow,
                   std::vector<double>& cols) {
    const int patch = x.c * k * k;
    const std::size_t ncols = static_cast<std::size_t>(x.n) * oh * ow;
    cols.resize(static_cast<std::size_t>(patch) * ncols);
    for (int in = 0; in < x.n; ++in) {
        for (int ic = 0; ic < x.c; ++ic) {
            const double* src = x.plane(in, ic);
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const int prow = (ic * k + ky) * k + kx;
                    double* dst = cols.data() + static_cast<std::size_t>(prow) * ncols +
                                  static_cast<std::size_t>(in) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy, dst += ow) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= x.h) {
                            std::memset(dst, 0, sizeof(double) * ow);
                            continue;
                        }
                        if (stride == 1) {
                            // the valid span of ix = ox + kx - pad is contiguous
                            const int ox_lo = std::max(0, pad - kx);
                            const int ox_hi = std::min(ow, x.w + pad - kx); // exclusive
                            for (int ox = 0; ox < ox_lo; ++ox) dst[ox] = 0.0;
                            if (ox_hi > ox_lo)
                                std::memcpy(dst + ox_lo, src + iy * x.w + ox_lo + kx - pad,
                                            sizeof(double) * (ox_hi - ox_lo));
                            for (int ox = ox_hi; ox < ow; ++ox) dst[ox] = 0.0;
                            continue;
                        }
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            dst[ox] = (ix < 0 || ix >= x.w) ? 0.0 : src[iy * x.w + ix];
                        }
                    }
                }
            }
        }
    }
}

inline void col2im(const double* cols, int n, int c, int h, int w, int k,
                   int stride, int pad, int oh, int ow, Tensor4& x) {
    const std::size_t ncols = static_cast<std::size_t>(n) * oh * ow;
    std::fill(x.data.begin(), x.data.end(), 0.0);
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            double* dst = x.plane(in, ic);
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const int prow = (ic * k + ky) * k + kx;
                    const double* src = cols + static_cast<std::size_t>(prow) * ncols +
                                        static_cast<std::size_t>(in) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= w) continue;
                            dst[iy * w + ix] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

} // namespace detail

// Standard cross-correlation with bias. If `cols_out` is non-null the
// im2col buffer is handed back so a following backward pass can reuse it.
inline Tensor4 conv2d_forward(const Tensor4& x, const ConvLayer& layer,
                              std::vector<double>* cols_out = nullptr) {
    if (x.c != layer.c_in)
        throw ShapeError("conv2d_forward: input has " + std::to_string(x.c) +
                         " channels, layer expects " + std::to_string(layer.c_in));
    const int oh = layer.out_dim(x.h), ow = layer.out_dim(x.w);
    if (oh < 1 || ow < 1) throw ShapeError("conv2d_forward: output dims < 1");
    Tensor4 out(x.n, layer.c_out, oh, ow);
    std::vector<double> local_cols;
    std::vector<double>& cols = cols_out ? *cols_out : local_cols;
    detail::im2col(x, layer.k, layer.stride, layer.padding, oh, ow, cols);
    const int patch = layer.c_in * layer.k * layer.k;
    const int ncols = x.n * oh * ow;
    // out_mat (c_out x ncols) = W (c_out x patch) * cols (patch x ncols);
    // scratch contents are fully overwritten by the GEMM (beta=0)
    double* out_mat = detail::scratch(0, static_cast<std::size_t>(layer.c_out) * ncols);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, layer.c_out, ncols, patch, 1.0,
                layer.weights.data(), patch, cols.data(), ncols, 0.0, out_mat, ncols);
    for (int oc = 0; oc < layer.c_out; ++oc) {
        const double b = layer.bias[oc];
        const double* src = out_mat + static_cast<std::size_t>(oc) * ncols;
        for (int in = 0; in < x.n; ++in) {
            double* dst = out.plane(in, oc);
            const double* s = src + static_cast<std::size_t>(in) * oh * ow;
            for (int i = 0; i < oh * ow; ++i) dst[i] = s[i] + b;
        }
    }
    return out;
}

struct ConvGrads {
    Tensor4 grad_x;
    std::vector<double> grad_w;
    std::vector<double> grad_b;
};

inline ConvGrads conv2d_backward(const Tensor4& grad_out, const Tensor4& x,
                                 const ConvLayer& layer,
                                 const std::vector<double>* cached_cols = nullptr,
                                 bool need_grad_x = true) {
    const int oh = layer.out_dim(x.h), ow = layer.out_dim(x.w);
    if (grad_out.n != x.n || grad_out.c != layer.c_out || grad_out.h != oh ||
        grad_out.w != ow)
        throw ShapeError("conv2d_backward: grad_out shape mismatch");
    const int patch = layer.c_in * layer.k * layer.k;
    const int ncols = x.n * oh * ow;
    // Repack grad_out planes into (c_out x ncols) matching the im2col layout.
    double* go_mat = detail::scratch(1, static_cast<std::size_t>(layer.c_out) * ncols);
    for (int oc = 0; oc < layer.c_out; ++oc)
        for (int in = 0; in < x.n; ++in)
            std::memcpy(go_mat + (static_cast<std::size_t>(oc) * x.n + in) * oh * ow,
                        grad_out.plane(in, oc), sizeof(double) * oh * ow);
    std::vector<double> local_cols;
    if (!cached_cols)
        detail::im2col(x, layer.k, layer.stride, layer.padding, oh, ow, local_cols);
    const std::vector<double>& cols = cached_cols ? *cached_cols : local_cols;

    ConvGrads g;
    g.grad_w.assign(layer.weights.size(), 0.0);
    g.grad_b.assign(layer.bias.size(), 0.0);
    // grad_w = go_mat * cols^T
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, layer.c_out, patch, ncols, 1.0,
                go_mat, ncols, cols.data(), ncols, 0.0, g.grad_w.data(), patch);
    for (int oc = 0; oc < layer.c_out; ++oc) {
        double acc = 0.0;
        const double* src = go_mat + static_cast<std::size_t>(oc) * ncols;
        for (int i = 0; i < ncols; ++i) acc += src[i];
        g.grad_b[oc] = acc;
    }
    if (!need_grad_x) return g; // e.g. the first layer, whose input needs no gradient
    // grad_cols = W^T * go_mat, then scatter back with col2im.
    double* grad_cols = detail::scratch(2, static_cast<std::size_t>(patch) * ncols);
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, patch, ncols, layer.c_out, 1.0,
                layer.weights.data(), patch, go_mat, ncols, 0.0, grad_cols, ncols);
    g.grad_x = Tensor4(x.n, x.c, x.h, x.w);
    detail::col2im(grad_cols, x.n, x.c, x.h, x.w, layer.k, layer.stride, layer.padding,
                   oh, ow, g.grad_x);
    return g;
}

inline Tensor4 relu_forward(const Tensor4& x) {
    Tensor4 out = x;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

inline Tensor4 relu_backward(const Tensor4& grad_out, const Tensor4& x) {
    if (!grad_out.same_shape(x)) throw ShapeError("relu_backward: shape mismatch");
    Tensor4 grad_in = grad_out;
    for (std::size_t i = 0; i < x.data.size(); ++i)
        if (x.data[i] <= 0.0) grad_in.data[i] = 0.0;
    return grad_in;
}

// 2x2 max pool, stride 2; ties broken toward the first row-major maximum.
// argmax holds flat in-plane indices for gradient routing.
inline Tensor4 maxpool2_forward(const Tensor4& x, std::vector<int>& argmax) {
    if (x.h < 2 || x.w < 2) throw ShapeError("maxpool2_forward: spatial dims < 2");
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor4 out(x.n, x.c, oh, ow);
    argmax.assign(out.size(), 0);
    std::size_t oidx = 0;
    for (int in = 0; in < x.n; ++in) {
        for (int ic = 0; ic < x.c; ++ic) {
            const double* src = x.plane(in, ic);
            double* dst = out.plane(in, ic);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double best = -std::numeric_limits<double>::infinity();
                    int best_i = 0;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const int i = (oy * 2 + dy) * x.w + (ox * 2 + dx);
                            if (src[i] > best) {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    dst[oy * ow + ox] = best;
                    argmax[oidx++] = best_i;
                }
            }
        }
    }
    return out;
}

inline Tensor4 maxpool2_backward(const Tensor4& grad_out, const Tensor4& x,
                                 const std::vector<int>& argmax) {
    if (argmax.size() != grad_out.size())
        throw ShapeError("maxpool2_backward: argmax size mismatch");
    Tensor4 grad_in(x.n, x.c, x.h, x.w);
    std::size_t oidx = 0;
    for (int in = 0; in < x.n; ++in) {
        for (int ic = 0; ic < x.c; ++ic) {
            double* dst = grad_in.plane(in, ic);
            const double* src = grad_out.plane(in, ic);
            const int plane_elems = grad_out.h * grad_out.w;
            for (int i = 0; i < plane_elems; ++i) dst[argmax[oidx + i]] += src[i];
            oidx += plane_elems;
        }
    }
    return grad_in;
}

// x is treated as (n, features) with features = c*h*w.
inline std::vector<double> dense_forward(const Tensor4& x, const DenseLayer& layer) {
    const int features = x.c * x.h * x.w;
    if (features != layer.in) throw ShapeError("dense_forward: feature count mismatch");
    std::vector<double> out(static_cast<std::size_t>(x.n) * layer.out);
    // out (n x out) = x (n x in) * W^T (in x out)
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, x.n, layer.out, layer.in, 1.0,
                x.data.data(), layer.in, layer.weights.data(), layer.in, 0.0, out.data(),
                layer.out);
    for (int in = 0; in < x.n; ++in)
        for (int o = 0; o < layer.out; ++o)
            out[static_cast<std::size_t>(in) * layer.out + o] += layer.bias[o];
    return out;
}

struct DenseGrads {
    Tensor4 grad_x;
    std::vector<double> grad_w;
    std::vector<double> grad_b;
};

inline DenseGrads dense_backward(const std::vector<double>& grad_out, const Tensor4& x,
                                 const DenseLayer& layer) {
    if (grad_out.size() != static_cast<std::size_t>(x.n) * layer.out)
        throw ShapeError("dense_backward: grad_out size mismatch");
    DenseGrads g;
    g.grad_w.assign(layer.weights.size(), 0.0);
    g.grad_b.assign(layer.bias.size(), 0.0);
    // grad_w (out x in) = grad_out^T (out x n) * x (n x in)
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, layer.out, layer.in, x.n, 1.0,
                grad_out.data(), layer.out, x.data.data(), layer.in, 0.0, g.grad_w.data(),
                layer.in);
    for (int in = 0; in < x.n; ++in)
        for (int o = 0; o < layer.out; ++o)
            g.grad_b[o] += grad_out[static_cast<std::size_t>(in) * layer.out + o];
    g.grad_x = Tensor4(x.n, x.c, x.h, x.w);
    // grad_x (n x in) = grad_out (n x out) * W (out x in)
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, x.n, layer.in, layer.out, 1.0,
                grad_out.data(), layer.out, layer.weights.data(), layer.in, 0.0,
                g.grad_x.data.data(), layer.in);
    return g;
}

// Softmax cross-entropy, mean over the batch. Returns (loss, grad_logits).
// Softmax uses max-subtraction for stability.
inline std::pair<double, std::vector<double>> softmax_xent(const std::vector<double>& logits,
                                                           const std::vector<int>& labels,
                                                           int num_classes) {
    const int n = static_cast<int>(labels.size());
    if (logits.size() != static_cast<std::size_t>(n) * num_classes)
        throw ShapeError("softmax_xent: logits size mismatch");
    std::vector<double> grad(logits.size());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw DataError("softmax_xent: label out of range");
        const double* row = logits.data() + static_cast<std::size_t>(i) * num_classes;
        double* grow = grad.data() + static_cast<std::size_t>(i) * num_classes;
        double mx = row[0];
        for (int c = 1; c < num_classes; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < num_classes; ++c) z += std::exp(row[c] - mx);
        const double logz = std::log(z);
        loss += -(row[labels[i]] - mx - logz);
        for (int c = 0; c < num_classes; ++c) {
            const double p = std::exp(row[c] - mx) / z;
            grow[c] = (p - (c == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n);
        }
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericError("softmax_xent: non-finite loss");
    return {loss, grad};
}

// SGD with momentum and weight decay:
// v <- momentum*v + grad + wd*param; param <- param - lr*v.
struct SgdState {
    std::vector<double> velocity;
};

inline void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
                     SgdState& state, double lr, double momentum, double weight_decay) {
    if (grads.size() != params.size()) throw ShapeError("sgd_step: size mismatch");
    if (state.velocity.size() != params.size()) state.velocity.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double v = momentum * state.velocity[i] + grads[i] + weight_decay * params[i];
        state.velocity[i] = v;
        params[i] -= lr * v;
        if (!std::isfinite(params[i])) throw NumericError("sgd_step: non-finite parameter");
    }
}

} // namespace fd
