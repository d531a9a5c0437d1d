#pragma once

#include <cmath>
#include <complex>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "fd/errors.hpp"

namespace fd {

enum class FilterFamily { Gaussian, LoG, Gabor };

inline const char* family_name(FilterFamily f) {
    switch (f) {
    case FilterFamily::Gaussian: return "gaussian";
    case FilterFamily::LoG: return "log";
    case FilterFamily::Gabor: return "gabor";
    }
    return "?";
}

struct KernelParams {
    FilterFamily family = FilterFamily::Gaussian;
    double sigma = 1.0;
    double lambda = 4.0; // Gabor wavelength, pixels
    double psi = 0.0;    // Gabor phase, radians
    double gamma = 1.0;  // Gabor aspect ratio
    double theta = 0.0;  // Gabor orientation, radians in [0, pi)
    int size = 3;        // odd side length
};

// Square 2D filter kernel. Grid convention: x indexes columns, y indexes
// rows, origin at the kernel center.
struct Kernel2D {
    std::vector<double> values; // row-major, size*size
    KernelParams params;
    bool zero_dc = false;

    int size() const { return params.size; }
    double& at(int row, int col) { return values[static_cast<std::size_t>(row) * params.size + col]; }
    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * params.size + col]; }

    double sum() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
};

namespace detail {
inline void check_kernel_args(double sigma, int size) {
    if (!(sigma > 0.0)) throw ConfigError("kernel sigma must be positive");
    if (size < 1 || size % 2 == 0) throw ConfigError("kernel size must be odd and >= 1");
}
} // namespace detail

// Isotropic Gaussian on the integer grid, normalized so entries sum to 1.
inline Kernel2D gaussian_kernel(double sigma, int size) {
    detail::check_kernel_args(sigma, size);
    Kernel2D k;
    k.params.family = FilterFamily::Gaussian;
    k.params.sigma = sigma;
    k.params.size = size;
    k.values.resize(static_cast<std::size_t>(size) * size);
    const int r = (size - 1) / 2;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    double sum = 0.0;
    for (int row = 0; row < size; ++row) {
        const double y = row - r;
        for (int col = 0; col < size; ++col) {
            const double x = col - r;
            const double v = std::exp(-(x * x + y * y) * inv2s2);
            k.at(row, col) = v;
            sum += v;
        }
    }
    for (double& v : k.values) v /= sum;
    return k;
}

// Laplacian of Gaussian, -(1/(pi s^4)) [1 - r^2/(2 s^2)] exp(-r^2/(2 s^2)).
// With zero_dc the entry mean is subtracted so the sum is exactly 0.
inline Kernel2D log_kernel(double sigma, int size, bool zero_dc = true) {
    detail::check_kernel_args(sigma, size);
    Kernel2D k;
    k.params.family = FilterFamily::LoG;
    k.params.sigma = sigma;
    k.params.size = size;
    k.zero_dc = zero_dc;
    k.values.resize(static_cast<std::size_t>(size) * size);
    const int r = (size - 1) / 2;
    const double s2 = sigma * sigma;
    const double pref = -1.0 / (3.14159265358979323846 * s2 * s2);
    for (int row = 0; row < size; ++row) {
        const double y = row - r;
        for (int col = 0; col < size; ++col) {
            const double x = col - r;
            const double q = (x * x + y * y) / (2.0 * s2);
            k.at(row, col) = pref * (1.0 - q) * std::exp(-q);
        }
    }
    if (zero_dc) {
        const double mean = k.sum() / static_cast<double>(k.values.size());
        for (double& v : k.values) v -= mean;
    }
    return k;
}

// Real component of the Gabor kernel; rotated coordinates
// x' = x cos t + y sin t, y' = -x sin t + y cos t. Not normalized.
inline Kernel2D gabor_kernel(double sigma, double lambda, double psi, double gamma,
                             double theta, int size) {
    detail::check_kernel_args(sigma, size);
    if (!(lambda > 0.0)) throw ConfigError("gabor lambda must be positive");
    if (!(gamma > 0.0)) throw ConfigError("gabor gamma must be positive");
    Kernel2D k;
    k.params = KernelParams{FilterFamily::Gabor, sigma, lambda, psi, gamma, theta, size};
    k.values.resize(static_cast<std::size_t>(size) * size);
    const int r = (size - 1) / 2;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double two_pi = 6.283185307179586476925286766559;
    for (int row = 0; row < size; ++row) {
        const double y = row - r;
        for (int col = 0; col < size; ++col) {
            const double x = col - r;
            const double xp = x * ct + y * st;
            const double yp = -x * st + y * ct;
            k.at(row, col) = std::exp(-(xp * xp + gamma * gamma * yp * yp) * inv2s2) *
                             std::cos(two_pi * xp / lambda + psi);
        }
    }
    return k;
}

// |DTFT| of the kernel at spatial frequency (u, v) rad/pixel, by direct
// summation over the grid.
inline double dtft_magnitude(const Kernel2D& k, double u, double v) {
    const int size = k.size();
    const int r = (size - 1) / 2;
    std::complex<double> acc(0.0, 0.0);
    for (int row = 0; row < size; ++row) {
        const double y = row - r;
        for (int col = 0; col < size; ++col) {
            const double x = col - r;
            acc += k.at(row, col) * std::exp(std::complex<double>(0.0, -(u * x + v * y)));
        }
    }
    return std::abs(acc);
}

// Plain-text dump: first line `family k sigma [lambda psi gamma theta]`,
// then k rows of k values at 9 significant digits.
inline void dump_kernel(std::ostream& os, const Kernel2D& k) {
    os << family_name(k.params.family) << ' ' << k.params.size << ' '
       << std::setprecision(9) << k.params.sigma;
    if (k.params.family == FilterFamily::Gabor)
        os << ' ' << k.params.lambda << ' ' << k.params.psi << ' ' << k.params.gamma
           << ' ' << k.params.theta;
    os << '\n';
    for (int row = 0; row < k.size(); ++row) {
        for (int col = 0; col < k.size(); ++col) {
            if (col) os << ' ';
            os << std::setprecision(9) << k.at(row, col);
        }
        os << '\n';
    }
}

} // namespace fd
