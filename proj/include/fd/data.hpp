#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fd/errors.hpp"
#include "fd/fd_layer.hpp"
#include "fd/kernels.hpp"
#include "fd/rng.hpp"
#include "fd/tensor.hpp"

namespace fd {

// Grayscale dataset. Pixels live in [0,1] and are quantized to float32
// precision at creation time so dataset file round-trips are lossless.
struct Dataset {
    Tensor4 images; // (N, 1, H, W)
    std::vector<int> labels;
    int num_classes = 2;

    int size() const { return images.n; }
};

enum class Split { Train, Test };

// Two-class shape-vs-frequency-shortcut dataset. The task signal is a
// 3-pixel-wide bar (horizontal = class 0, vertical = class 1) at uniform
// random position; the shortcut is an additive sinusoidal grating whose
// spatial frequency correlates with the class at rate rho.
struct ShortcutSpec {
    int image_size = 28;
    int bar_width = 3;
    double background = 0.35;
    double bar_amplitude = 0.4;
    double grating_amplitude = 0.15;
    double freq0 = 2.0 * 3.14159265358979323846 * 0.40; // rad/px, class 0
    double freq1 = 2.0 * 3.14159265358979323846 * 0.15; // rad/px, class 1
    double rho_train = 0.95;
    double rho_test = 0.5;
    double noise = 0.05; // additive uniform +-noise

    void validate() const {
        if (image_size < 8) throw ConfigError("shortcut image_size too small");
        if (bar_width < 1 || bar_width > image_size)
            throw ConfigError("shortcut bar_width invalid");
        if (rho_train < 0.0 || rho_train > 1.0 || rho_test < 0.0 || rho_test > 1.0)
            throw ConfigError("shortcut rho must lie in [0,1]");
        if (grating_amplitude < 0.0 || noise < 0.0)
            throw ConfigError("shortcut amplitudes must be non-negative");
    }
};

namespace detail {
inline double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }
} // namespace detail

inline Dataset gen_shortcut_dataset(const ShortcutSpec& spec, int n, Split split,
                                    std::uint64_t seed) {
    spec.validate();
    if (n < 1) throw ConfigError("gen_shortcut_dataset: n must be >= 1");
    const int hw = spec.image_size;
    const double rho = split == Split::Train ? spec.rho_train : spec.rho_test;
    const std::uint64_t split_tag = split == Split::Train ? 0 : 1;
    Dataset ds;
    ds.images = Tensor4(n, 1, hw, hw);
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.num_classes = 2;
    const double two_pi = 6.283185307179586476925286766559;
    for (int i = 0; i < n; ++i) {
        RngStream rng(seed, streams::sub(streams::kDataGen, split_tag, static_cast<std::uint64_t>(i)));
        const int label = i % 2; // exactly balanced
        ds.labels[i] = label;
        const int pos = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(hw - spec.bar_width + 1)));
        // both draws always happen so the stream position (and therefore the
        // phase and noise below) does not depend on rho
        const bool correlated = rng.bernoulli(rho);
        const int flip = static_cast<int>(rng.next_below(2));
        const int grating_class = correlated ? label : flip;
        const double freq = grating_class == 0 ? spec.freq0 : spec.freq1;
        const double phase = rng.uniform(0.0, two_pi);
        double* img = ds.images.plane(i, 0);
        for (int y = 0; y < hw; ++y) {
            for (int x = 0; x < hw; ++x) {
                double v = spec.background;
                const bool in_bar = label == 0 ? (y >= pos && y < pos + spec.bar_width)
                                               : (x >= pos && x < pos + spec.bar_width);
                if (in_bar) v += spec.bar_amplitude;
                v += spec.grating_amplitude * std::sin(freq * x + phase);
                v += rng.uniform(-spec.noise, spec.noise);
                img[y * hw + x] = detail::quantize(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Corruption suite: 4 kinds x severities 0..5; severity 0 is the identity.

enum class CorruptionKind { GaussianNoise, GaussianBlur, Contrast, Pixelate };

inline const char* corruption_name(CorruptionKind k) {
    switch (k) {
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::GaussianBlur: return "gaussian_blur";
    case CorruptionKind::Contrast: return "contrast";
    case CorruptionKind::Pixelate: return "pixelate";
    }
    return "?";
}

inline CorruptionKind parse_corruption(const std::string& s) {
    if (s == "gaussian_noise") return CorruptionKind::GaussianNoise;
    if (s == "gaussian_blur") return CorruptionKind::GaussianBlur;
    if (s == "contrast") return CorruptionKind::Contrast;
    if (s == "pixelate") return CorruptionKind::Pixelate;
    throw ConfigError("unknown corruption kind: " + s);
}

inline constexpr std::array<CorruptionKind, 4> kAllCorruptions = {
    CorruptionKind::GaussianNoise, CorruptionKind::GaussianBlur,
    CorruptionKind::Contrast, CorruptionKind::Pixelate};

// Per-severity parameter tables.
inline constexpr std::array<double, 6> kNoiseSigma = {0.0, 0.04, 0.06, 0.08, 0.09, 0.10};
inline constexpr std::array<double, 6> kBlurSigma = {0.0, 0.4, 0.6, 0.8, 1.0, 1.2};
inline constexpr std::array<double, 6> kContrastFactor = {1.0, 0.75, 0.6, 0.5, 0.4, 0.3};
inline constexpr std::array<int, 6> kPixelateFactor = {1, 2, 2, 4, 4, 7};

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::GaussianNoise;
    int severity = 0;

    void validate() const {
        if (severity < 0 || severity > 5)
            throw ConfigError("corruption severity must lie in [0,5]");
    }
};

inline Dataset corrupt(const Dataset& ds, const CorruptionSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.severity == 0) return ds;
    Dataset out;
    out.images = Tensor4(ds.images.n, ds.images.c, ds.images.h, ds.images.w);
    out.labels = ds.labels;
    out.num_classes = ds.num_classes;
    const int h = ds.images.h, w = ds.images.w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < ds.images.n; ++i) {
        for (int ch = 0; ch < ds.images.c; ++ch) {
            const double* src = ds.images.plane(i, ch);
            double* dst = out.images.plane(i, ch);
            switch (spec.kind) {
            case CorruptionKind::GaussianNoise: {
                RngStream rng(seed, streams::sub(streams::kCorrupt,
                                                 static_cast<std::uint64_t>(i),
                                                 static_cast<std::uint64_t>(ch)));
                const double sigma = kNoiseSigma[spec.severity];
                for (std::size_t p = 0; p < plane; ++p)
                    dst[p] = src[p] + rng.normal(0.0, sigma);
                break;
            }
            case CorruptionKind::GaussianBlur: {
                const double sigma = kBlurSigma[spec.severity];
                const int k = 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1;
                detail::correlate_plane(src, dst, h, w, gaussian_kernel(sigma, k));
                break;
            }
            case CorruptionKind::Contrast: {
                double mean = 0.0;
                for (std::size_t p = 0; p < plane; ++p) mean += src[p];
                mean /= static_cast<double>(plane);
                const double f = kContrastFactor[spec.severity];
                for (std::size_t p = 0; p < plane; ++p)
                    dst[p] = mean + f * (src[p] - mean);
                break;
            }
            case CorruptionKind::Pixelate: {
                const int f = kPixelateFactor[spec.severity];
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        dst[y * w + x] = src[(y / f) * f * w + (x / f) * f];
                break;
            }
            }
            for (std::size_t p = 0; p < plane; ++p)
                dst[p] = detail::quantize(std::clamp(dst[p], 0.0, 1.0));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset file: little-endian, magic `FDDS`, u32 version, u32 N, u32 C,
// u32 H, u32 W, u32 num_classes, N*C*H*W float32 pixels, N u16 labels.

inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const std::string& path, const Dataset& ds) {
    if (path.empty()) throw DataError("save_dataset: empty path");
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot open dataset file for writing: " + path);
        auto w32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
        os.write("FDDS", 4);
        w32(kDatasetVersion);
        w32(static_cast<std::uint32_t>(ds.images.n));
        w32(static_cast<std::uint32_t>(ds.images.c));
        w32(static_cast<std::uint32_t>(ds.images.h));
        w32(static_cast<std::uint32_t>(ds.images.w));
        w32(static_cast<std::uint32_t>(ds.num_classes));
        std::vector<float> px(ds.images.data.begin(), ds.images.data.end());
        os.write(reinterpret_cast<const char*>(px.data()),
                 static_cast<std::streamsize>(px.size() * sizeof(float)));
        for (int lab : ds.labels) {
            const std::uint16_t v = static_cast<std::uint16_t>(lab);
            os.write(reinterpret_cast<const char*>(&v), 2);
        }
        if (!os) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw DataError("dataset write failed: " + path);
        }
    }
    std::filesystem::rename(tmp, path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open dataset file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "FDDS")
        throw DataError("bad dataset magic at offset 0: " + path);
    auto r32 = [&]() {
        std::uint32_t v;
        is.read(reinterpret_cast<char*>(&v), 4);
        if (!is) throw DataError("dataset: truncated header: " + path);
        return v;
    };
    const std::uint32_t version = r32();
    if (version != kDatasetVersion)
        throw DataError("unsupported dataset version " + std::to_string(version));
    const std::uint32_t n = r32(), c = r32(), h = r32(), w = r32(), classes = r32();
    if (n == 0 || c == 0 || h == 0 || w == 0 || classes == 0)
        throw DataError("dataset: zero dimension in header");
    const std::uint64_t count = static_cast<std::uint64_t>(n) * c * h * w;
    if (count > (1ULL << 34)) throw DataError("dataset: dim overflow");
    Dataset ds;
    ds.images = Tensor4(static_cast<int>(n), static_cast<int>(c), static_cast<int>(h),
                        static_cast<int>(w));
    ds.num_classes = static_cast<int>(classes);
    std::vector<float> px(count);
    is.read(reinterpret_cast<char*>(px.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw DataError("dataset: truncated pixel block: " + path);
    std::copy(px.begin(), px.end(), ds.images.data.begin());
    ds.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::uint16_t v;
        is.read(reinterpret_cast<char*>(&v), 2);
        if (!is) throw DataError("dataset: truncated label block: " + path);
        if (v >= classes) throw DataError("dataset: label out of range");
        ds.labels[i] = v;
    }
    return ds;
}

} // namespace fd
