#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fd/errors.hpp"
#include "fd/kernels.hpp"
#include "fd/rng.hpp"
#include "fd/tensor.hpp"

namespace fd {

enum class FDMode { FD_RF, FD_GF, CBS, Off };

inline const char* mode_name(FDMode m) {
    switch (m) {
    case FDMode::FD_RF: return "FD_RF";
    case FDMode::FD_GF: return "FD_GF";
    case FDMode::CBS: return "CBS";
    case FDMode::Off: return "Off";
    }
    return "?";
}

inline FDMode parse_mode(const std::string& s) {
    if (s == "FD_RF") return FDMode::FD_RF;
    if (s == "FD_GF") return FDMode::FD_GF;
    if (s == "CBS") return FDMode::CBS;
    if (s == "Off") return FDMode::Off;
    throw ConfigError("unknown fd mode: " + s);
}

struct FDConfig {
    // Probability that a channel's kernel is turned OFF (identity).
    double p_gauss = 0.4;
    double p_log = 0.5;
    double p_gabor = 0.8;
    double sigma_low = 0.5;
    double sigma_high = 2.0;
    int kernel_size = 3;
    double gabor_lambda_lo = 2.0;
    double gabor_lambda_hi = 6.0;
    double gabor_theta_lo = 0.0;
    double gabor_theta_hi = 3.14159265358979323846;
    double gabor_psi = 0.0;
    double gabor_gamma = 0.5;
    FDMode mode = FDMode::FD_RF;
    double cbs_sigma0 = 1.0;
    double cbs_decay = 0.1;
    int cbs_interval_epochs = 2;
    bool cbs_eval_smooth = false; // keep the final-sigma CBS filter at inference

    void validate() const {
        auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob(p_gauss) || !prob(p_log) || !prob(p_gabor))
            throw ConfigError("fd dropout probabilities must lie in [0,1]");
        if (!(sigma_low > 0.0) || !(sigma_low < sigma_high))
            throw ConfigError("fd sigma range requires 0 < low < high");
        if (kernel_size < 1 || kernel_size % 2 == 0)
            throw ConfigError("fd kernel_size must be odd and >= 1");
        if (!(gabor_lambda_lo > 0.0) || gabor_lambda_hi < gabor_lambda_lo)
            throw ConfigError("fd gabor lambda range invalid");
        if (gabor_theta_hi < gabor_theta_lo)
            throw ConfigError("fd gabor theta range invalid");
        if (!(gabor_gamma > 0.0)) throw ConfigError("fd gabor gamma must be positive");
        if (!(cbs_sigma0 > 0.0) || !(cbs_decay > 0.0) || cbs_interval_epochs < 1)
            throw ConfigError("fd cbs schedule parameters invalid");
    }

    double p_for(FilterFamily f) const {
        switch (f) {
        case FilterFamily::Gaussian: return p_gauss;
        case FilterFamily::LoG: return p_log;
        case FilterFamily::Gabor: return p_gabor;
        }
        return 0.0;
    }
};

// One materialized random draw for one layer application.
struct FDDraw {
    FilterFamily family = FilterFamily::Gaussian;
    std::vector<double> sigmas;     // per channel
    std::vector<bool> active;      // per channel; false = identity passthrough
    std::vector<Kernel2D> kernels; // indexed per channel; empty values if inactive

    int channels() const { return static_cast<int>(active.size()); }
};

// One family per layer per iteration, each with probability exactly 1/3.
inline FilterFamily choose_filter(RngStream& rng) {
    switch (rng.next_below(3)) {
    case 0: return FilterFamily::Gaussian;
    case 1: return FilterFamily::LoG;
    default: return FilterFamily::Gabor;
    }
}

inline std::vector<double> sample_sigmas(int n, const FDConfig& cfg, RngStream& rng) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (double& s : out) s = rng.uniform(cfg.sigma_low, cfg.sigma_high);
    return out;
}

// Kernel-level spatial dropout: each channel is OFF with probability p.
inline std::vector<bool> sample_mask(int n, double p, RngStream& rng) {
    std::vector<bool> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[i] = !rng.bernoulli(p);
    return out;
}

inline FDDraw build_draw(int n, const FDConfig& cfg, RngStream& rng) {
    cfg.validate();
    if (cfg.mode != FDMode::FD_RF && cfg.mode != FDMode::FD_GF)
        throw ConfigError("build_draw requires mode FD_RF or FD_GF");
    FDDraw d;
    d.family = cfg.mode == FDMode::FD_GF ? FilterFamily::Gaussian : choose_filter(rng);
    d.sigmas = sample_sigmas(n, cfg, rng);
    d.active = sample_mask(n, cfg.p_for(d.family), rng);
    d.kernels.resize(static_cast<std::size_t>(n));
    // Drawn kernels are capped at unit L1 norm so the layer is non-expansive:
    // without normalization a 3x3 LoG (small sigma) or Gabor (large sigma)
    // reaches L1 gains of 5-10, which destabilizes SGD in nets without
    // normalization layers.
    auto cap_l1 = [](Kernel2D& k) {
        double l1 = 0.0;
        for (double v : k.values) l1 += std::abs(v);
        if (l1 > 1.0)
            for (double& v : k.values) v /= l1;
    };
    for (int ch = 0; ch < n; ++ch) {
        if (!d.active[ch]) continue;
        switch (d.family) {
        case FilterFamily::Gaussian:
            d.kernels[ch] = gaussian_kernel(d.sigmas[ch], cfg.kernel_size);
            break;
        case FilterFamily::LoG:
            d.kernels[ch] = log_kernel(d.sigmas[ch], cfg.kernel_size, /*zero_dc=*/true);
            break;
        case FilterFamily::Gabor: {
            const double lambda = rng.uniform(cfg.gabor_lambda_lo, cfg.gabor_lambda_hi);
            const double theta = rng.uniform(cfg.gabor_theta_lo, cfg.gabor_theta_hi);
            d.kernels[ch] = gabor_kernel(d.sigmas[ch], lambda, cfg.gabor_psi,
                                         cfg.gabor_gamma, theta, cfg.kernel_size);
            break;
        }
        }
        cap_l1(d.kernels[ch]);
    }
    return d;
}

// CBS comparator: sigma0 - decay * floor(epoch / interval), clamped at 0.
inline double cbs_sigma(int epoch, const FDConfig& cfg) {
    const double s = cfg.cbs_sigma0 - cfg.cbs_decay * static_cast<double>(epoch / cfg.cbs_interval_epochs);
    return std::max(s, 0.0);
}

// CBS smooths every channel with the same Gaussian; sigma 0 means identity.
inline FDDraw build_cbs_draw(int n, int epoch, const FDConfig& cfg) {
    FDDraw d;
    d.family = FilterFamily::Gaussian;
    const double s = cbs_sigma(epoch, cfg);
    d.sigmas.assign(static_cast<std::size_t>(n), s);
    d.active.assign(static_cast<std::size_t>(n), s > 0.0);
    d.kernels.resize(static_cast<std::size_t>(n));
    if (s > 0.0) {
        const Kernel2D k = gaussian_kernel(s, cfg.kernel_size);
        for (int ch = 0; ch < n; ++ch) d.kernels[ch] = k;
    }
    return d;
}

namespace detail {
// Depthwise cross-correlation of one plane, stride 1, zero padding (k-1)/2.
inline void correlate_plane(const double* in, double* out, int h, int w,
                            const Kernel2D& k) {
    const int ks = k.size();
    const int r = (ks - 1) / 2;
    if (ks == 3 && h >= 3 && w >= 3) {
        // Interior fast path without bounds checks; borders fall through to
        // the generic loop below.
        const double k00 = k.at(0, 0), k01 = k.at(0, 1), k02 = k.at(0, 2);
        const double k10 = k.at(1, 0), k11 = k.at(1, 1), k12 = k.at(1, 2);
        const double k20 = k.at(2, 0), k21 = k.at(2, 1), k22 = k.at(2, 2);
        for (int oy = 1; oy < h - 1; ++oy) {
            const double* r0 = in + (oy - 1) * w;
            const double* r1 = in + oy * w;
            const double* r2 = in + (oy + 1) * w;
            double* o = out + oy * w;
            for (int ox = 1; ox < w - 1; ++ox)
                o[ox] = k00 * r0[ox - 1] + k01 * r0[ox] + k02 * r0[ox + 1] +
                        k10 * r1[ox - 1] + k11 * r1[ox] + k12 * r1[ox + 1] +
                        k20 * r2[ox - 1] + k21 * r2[ox] + k22 * r2[ox + 1];
        }
        auto edge = [&](int oy, int ox) {
            double acc = 0.0;
            const int ky0 = std::max(0, 1 - oy), ky1 = std::min(3, h + 1 - oy);
            const int kx0 = std::max(0, 1 - ox), kx1 = std::min(3, w + 1 - ox);
            for (int ky = ky0; ky < ky1; ++ky)
                for (int kx = kx0; kx < kx1; ++kx)
                    acc += k.at(ky, kx) * in[(oy + ky - 1) * w + (ox + kx - 1)];
            out[oy * w + ox] = acc;
        };
        for (int ox = 0; ox < w; ++ox) {
            edge(0, ox);
            edge(h - 1, ox);
        }
        for (int oy = 1; oy < h - 1; ++oy) {
            edge(oy, 0);
            edge(oy, w - 1);
        }
        return;
    }
    for (int oy = 0; oy < h; ++oy) {
        for (int ox = 0; ox < w; ++ox) {
            double acc = 0.0;
            const int ky0 = std::max(0, r - oy), ky1 = std::min(ks, h + r - oy);
            const int kx0 = std::max(0, r - ox), kx1 = std::min(ks, w + r - ox);
            for (int ky = ky0; ky < ky1; ++ky)
                for (int kx = kx0; kx < kx1; ++kx)
                    acc += k.at(ky, kx) * in[(oy + ky - r) * w + (ox + kx - r)];
            out[oy * w + ox] = acc;
        }
    }
}

inline Kernel2D rotate180(const Kernel2D& k) {
    Kernel2D out = k;
    const int ks = k.size();
    for (int row = 0; row < ks; ++row)
        for (int col = 0; col < ks; ++col)
            out.at(row, col) = k.at(ks - 1 - row, ks - 1 - col);
    return out;
}
} // namespace detail

// Active channels are filtered depthwise (shape preserved); inactive
// channels pass through bit-exactly.
inline Tensor4 fd_forward(const Tensor4& x, const FDDraw& draw) {
    if (x.c != draw.channels())
        throw ShapeError("fd_forward: tensor has " + std::to_string(x.c) +
                         " channels, draw has " + std::to_string(draw.channels()));
    Tensor4 out(x.n, x.c, x.h, x.w);
    for (int in = 0; in < x.n; ++in) {
        for (int ch = 0; ch < x.c; ++ch) {
            if (draw.active[ch])
                detail::correlate_plane(x.plane(in, ch), out.plane(in, ch), x.h, x.w,
                                        draw.kernels[ch]);
            else
                std::copy_n(x.plane(in, ch), static_cast<std::size_t>(x.h) * x.w,
                            out.plane(in, ch));
        }
    }
    return out;
}

// Gradient through the fixed linear filter: correlate with the 180-degree
// rotated kernel. No gradient flows to kernel parameters.
inline Tensor4 fd_backward(const Tensor4& grad_out, const FDDraw& draw) {
    if (grad_out.c != draw.channels())
        throw ShapeError("fd_backward: channel mismatch");
    Tensor4 grad_in(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
    std::vector<Kernel2D> flipped(static_cast<std::size_t>(draw.channels()));
    for (int ch = 0; ch < draw.channels(); ++ch)
        if (draw.active[ch]) flipped[ch] = detail::rotate180(draw.kernels[ch]);
    for (int in = 0; in < grad_out.n; ++in) {
        for (int ch = 0; ch < grad_out.c; ++ch) {
            if (draw.active[ch])
                detail::correlate_plane(grad_out.plane(in, ch), grad_in.plane(in, ch),
                                        grad_out.h, grad_out.w, flipped[ch]);
            else
                std::copy_n(grad_out.plane(in, ch),
                            static_cast<std::size_t>(grad_out.h) * grad_out.w,
                            grad_in.plane(in, ch));
        }
    }
    return grad_in;
}

} // namespace fd
