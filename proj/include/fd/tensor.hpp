#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fd/errors.hpp"

namespace fd {

// Batched feature maps, layout (batch, channel, height, width), row-major,
// 64-bit floats.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {
        if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
            throw ShapeError("Tensor4: all dims must be >= 1");
    }

    std::size_t size() const { return data.size(); }

    double& at(int in, int ic, int iy, int ix) {
        return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    double at(int in, int ic, int iy, int ix) const {
        return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }

    double* plane(int in, int ic) {
        return data.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
    }
    const double* plane(int in, int ic) const {
        return data.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
    }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" +
               std::to_string(h) + "x" + std::to_string(w);
    }
};

inline void require_finite(const Tensor4& t, const char* where) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value in ") + where);
}

} // namespace fd
