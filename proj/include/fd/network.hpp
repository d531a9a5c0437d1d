#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fd/errors.hpp"
#include "fd/fd_layer.hpp"
#include "fd/nn.hpp"

namespace fd {

enum class LayerKind { Conv, FD, ReLU, MaxPool, Flatten, Dense };

// Ordered layer list over {Conv, FD, MaxPool, ReLU, Flatten, Dense} with
// softmax cross-entropy loss. Conv and Dense layers own their parameters;
// FD layers are parameter-free and take a per-step draw.
struct Network {
    std::vector<LayerKind> layers;
    std::vector<ConvLayer> convs;
    std::vector<DenseLayer> denses;
    int num_classes = 2;

    int fd_layer_count() const {
        int n = 0;
        for (LayerKind k : layers)
            if (k == LayerKind::FD) ++n;
        return n;
    }

    // Chain-checks shapes for a (c, h, w) input; throws ShapeError on
    // mismatch. FD layers must sit immediately after a Conv.
    void validate_shapes(int c, int h, int w) const {
        std::size_t ci = 0, di = 0;
        bool after_conv = false;
        bool flat = false;
        int feat = 0;
        for (LayerKind k : layers) {
            if (k != LayerKind::FD) after_conv = false;
            switch (k) {
            case LayerKind::Conv: {
                if (flat) throw ShapeError("Conv after Flatten");
                if (ci >= convs.size()) throw ShapeError("missing ConvLayer");
                const ConvLayer& l = convs[ci++];
                if (l.c_in != c) throw ShapeError("Conv c_in mismatch");
                h = l.out_dim(h);
                w = l.out_dim(w);
                if (h < 1 || w < 1) throw ShapeError("Conv output dims < 1");
                c = l.c_out;
                after_conv = true;
                break;
            }
            case LayerKind::FD:
                if (!after_conv) throw ShapeError("FD layer must follow a Conv layer");
                after_conv = false;
                break;
            case LayerKind::ReLU:
                break;
            case LayerKind::MaxPool:
                if (flat || h < 2 || w < 2) throw ShapeError("MaxPool on bad shape");
                h /= 2;
                w /= 2;
                break;
            case LayerKind::Flatten:
                flat = true;
                feat = c * h * w;
                break;
            case LayerKind::Dense: {
                if (!flat) throw ShapeError("Dense requires Flatten first");
                if (di >= denses.size()) throw ShapeError("missing DenseLayer");
                const DenseLayer& l = denses[di++];
                if (l.in != feat) throw ShapeError("Dense input size mismatch");
                feat = l.out;
                break;
            }
            }
        }
        if (ci != convs.size() || di != denses.size())
            throw ShapeError("unused parameter layers");
        if (feat != num_classes) throw ShapeError("final layer width != num_classes");
    }

    void init(RngStream& rng) {
        for (ConvLayer& l : convs) l.init_kaiming_uniform(rng);
        for (DenseLayer& l : denses) l.init_kaiming_uniform(rng);
    }
};

// Conv(1->16,3x3) [FD] ReLU MaxPool -> Conv(16->32,3x3) [FD] ReLU MaxPool
// -> Flatten -> Dense(num_classes). Input is (1, h, w).
inline Network make_tinynet(int h, int w, int num_classes, bool with_fd = true) {
    Network net;
    net.num_classes = num_classes;
    net.convs.emplace_back(1, 16, 3);
    net.convs.emplace_back(16, 32, 3);
    auto block = [&](int) {
        net.layers.push_back(LayerKind::Conv);
        if (with_fd) net.layers.push_back(LayerKind::FD);
        net.layers.push_back(LayerKind::ReLU);
        net.layers.push_back(LayerKind::MaxPool);
    };
    block(0);
    block(1);
    net.layers.push_back(LayerKind::Flatten);
    net.denses.emplace_back(32 * (h / 4) * (w / 4), num_classes);
    net.layers.push_back(LayerKind::Dense);
    net.validate_shapes(1, h, w);
    return net;
}

struct NetGrads {
    std::vector<std::vector<double>> conv_w, conv_b;
    std::vector<std::vector<double>> dense_w, dense_b;
};

// Runs logits-only inference. FD layers use the supplied draws; pass an
// empty vector to treat every FD layer as identity (eval mode).
inline std::vector<double> net_forward(const Network& net, const Tensor4& x,
                                       const std::vector<FDDraw>& draws = {}) {
    Tensor4 cur = x;
    std::vector<double> logits;
    std::size_t ci = 0, di = 0, fi = 0;
    for (LayerKind k : net.layers) {
        switch (k) {
        case LayerKind::Conv:
            cur = conv2d_forward(cur, net.convs[ci++]);
            break;
        case LayerKind::FD:
            if (fi < draws.size()) cur = fd_forward(cur, draws[fi]);
            ++fi;
            break;
        case LayerKind::ReLU:
            cur = relu_forward(cur);
            break;
        case LayerKind::MaxPool: {
            std::vector<int> argmax;
            cur = maxpool2_forward(cur, argmax);
            break;
        }
        case LayerKind::Flatten:
            break;
        case LayerKind::Dense:
            logits = dense_forward(cur, net.denses[di++]);
            break;
        }
    }
    return logits;
}

// End-to-end loss and exact gradients for one batch. `draws` must supply one
// FDDraw per FD layer, or be empty for identity FD (mode Off).
inline std::pair<double, NetGrads> forward_backward(const Network& net, const Tensor4& x,
                                                    const std::vector<int>& labels,
                                                    const std::vector<FDDraw>& draws = {}) {
    if (!draws.empty() && static_cast<int>(draws.size()) != net.fd_layer_count())
        throw ShapeError("forward_backward: need one draw per FD layer");
    struct Step {
        LayerKind kind;
        Tensor4 input;             // input tensor to the layer
        std::vector<int>* argmax = nullptr; // MaxPool only
        std::vector<double>* cols = nullptr; // Conv only: im2col buffer for backward
        std::vector<std::uint8_t>* mask = nullptr; // ReLU only: sign mask
        int param_index = -1;    // conv/dense index
        int fd_index = -1;
    };
    // im2col buffers pooled per conv index: they are large and identically
    // sized on every call, so reusing them avoids per-step allocation
    thread_local std::vector<std::vector<double>> cols_pool;
    if (cols_pool.size() < net.convs.size()) cols_pool.resize(net.convs.size());
    thread_local std::vector<std::vector<std::uint8_t>> mask_pool;
    thread_local std::vector<std::vector<int>> argmax_pool;
    std::size_t relu_count = 0, pool_count = 0;
    for (LayerKind k : net.layers) {
        if (k == LayerKind::ReLU) ++relu_count;
        if (k == LayerKind::MaxPool) ++pool_count;
    }
    if (mask_pool.size() < relu_count) mask_pool.resize(relu_count);
    if (argmax_pool.size() < pool_count) argmax_pool.resize(pool_count);
    std::vector<Step> tape;
    tape.reserve(net.layers.size());
    Tensor4 cur = x;
    std::vector<double> logits;
    std::size_t ci = 0, di = 0, fi = 0, ri = 0, pi = 0;
    for (LayerKind k : net.layers) {
        Step s;
        s.kind = k;
        switch (k) {
        // layer inputs are moved onto the tape, not copied; `cur` is rebuilt
        // from s.input by each forward op
        case LayerKind::Conv:
            s.param_index = static_cast<int>(ci);
            s.input = std::move(cur);
            s.cols = &cols_pool[ci];
            cur = conv2d_forward(s.input, net.convs[ci++], s.cols);
            break;
        case LayerKind::FD:
            s.fd_index = static_cast<int>(fi);
            if (fi < draws.size()) cur = fd_forward(cur, draws[fi]);
            ++fi;
            break;
        case LayerKind::ReLU: {
            // in place, keeping only a sign mask: cheaper than taping the
            // full pre-activation tensor
            s.mask = &mask_pool[ri++];
            s.mask->resize(cur.data.size());
            for (std::size_t i = 0; i < cur.data.size(); ++i) {
                const bool pos = cur.data[i] > 0.0;
                (*s.mask)[i] = pos;
                if (!pos) cur.data[i] = 0.0;
            }
            break;
        }
        case LayerKind::MaxPool:
            s.input = std::move(cur);
            s.argmax = &argmax_pool[pi++];
            cur = maxpool2_forward(s.input, *s.argmax);
            break;
        case LayerKind::Flatten:
            break;
        case LayerKind::Dense:
            s.param_index = static_cast<int>(di);
            s.input = std::move(cur);
            logits = dense_forward(s.input, net.denses[di++]);
            break;
        }
        tape.push_back(std::move(s));
    }
    auto [loss, grad_logits] = softmax_xent(logits, labels, net.num_classes);

    NetGrads grads;
    grads.conv_w.resize(net.convs.size());
    grads.conv_b.resize(net.convs.size());
    grads.dense_w.resize(net.denses.size());
    grads.dense_b.resize(net.denses.size());

    Tensor4 grad(1, 1, 1, 1);
    std::vector<double>& grad_flat = grad_logits;
    for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
        switch (it->kind) {
        case LayerKind::Dense: {
            DenseGrads dg = dense_backward(grad_flat, it->input, net.denses[it->param_index]);
            grads.dense_w[it->param_index] = std::move(dg.grad_w);
            grads.dense_b[it->param_index] = std::move(dg.grad_b);
            grad = std::move(dg.grad_x);
            break;
        }
        case LayerKind::Flatten:
            break; // grad tensor already carries the unflattened shape
        case LayerKind::MaxPool:
            grad = maxpool2_backward(grad, it->input, *it->argmax);
            break;
        case LayerKind::ReLU:
            for (std::size_t i = 0; i < grad.data.size(); ++i)
                if (!(*it->mask)[i]) grad.data[i] = 0.0;
            break;
        case LayerKind::FD:
            if (static_cast<std::size_t>(it->fd_index) < draws.size())
                grad = fd_backward(grad, draws[it->fd_index]);
            break;
        case LayerKind::Conv: {
            const bool first_layer = std::next(it) == tape.rend();
            ConvGrads cg = conv2d_backward(grad, it->input, net.convs[it->param_index],
                                           it->cols, /*need_grad_x=*/!first_layer);
            grads.conv_w[it->param_index] = std::move(cg.grad_w);
            grads.conv_b[it->param_index] = std::move(cg.grad_b);
            grad = std::move(cg.grad_x);
            break;
        }
        }
    }
    return {loss, std::move(grads)};
}

// ---------------------------------------------------------------------------
// Checkpoint format: little-endian, magic `FDNN`, u32 version, then per
// tensor: u32 name length, name bytes, u32 rank, dims as u64, raw doubles.

namespace detail {
template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint/dataset: truncated file");
    return v;
}
inline void write_named(std::ostream& os, const std::string& name,
                        const std::vector<std::uint64_t>& dims,
                        const std::vector<double>& vals) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
    for (std::uint64_t d : dims) write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(vals.data()),
             static_cast<std::streamsize>(vals.size() * sizeof(double)));
}
} // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Network& net) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write("FDNN", 4);
    detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
    for (std::size_t i = 0; i < net.convs.size(); ++i) {
        const ConvLayer& l = net.convs[i];
        const std::string base = "conv" + std::to_string(i);
        detail::write_named(os, base + ".weight",
                            {static_cast<std::uint64_t>(l.c_out),
                             static_cast<std::uint64_t>(l.c_in),
                             static_cast<std::uint64_t>(l.k),
                             static_cast<std::uint64_t>(l.k)},
                            l.weights);
        detail::write_named(os, base + ".bias", {static_cast<std::uint64_t>(l.c_out)},
                            l.bias);
    }
    for (std::size_t i = 0; i < net.denses.size(); ++i) {
        const DenseLayer& l = net.denses[i];
        const std::string base = "dense" + std::to_string(i);
        detail::write_named(os, base + ".weight",
                            {static_cast<std::uint64_t>(l.out),
                             static_cast<std::uint64_t>(l.in)},
                            l.weights);
        detail::write_named(os, base + ".bias", {static_cast<std::uint64_t>(l.out)},
                            l.bias);
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

// Loads parameters into a network of matching architecture.
inline void load_checkpoint(const std::string& path, Network& net) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "FDNN")
        throw DataError("bad checkpoint magic at offset 0: " + path);
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    std::map<std::string, std::vector<double>> tensors;
    while (true) {
        std::uint32_t name_len;
        is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (is.eof()) break;
        if (!is) throw DataError("checkpoint: truncated file");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rank = detail::read_pod<std::uint32_t>(is);
        std::uint64_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = detail::read_pod<std::uint64_t>(is);
            if (d == 0 || count > (1ULL << 32) / std::max<std::uint64_t>(d, 1))
                throw DataError("checkpoint: dim overflow");
            count *= d;
        }
        std::vector<double> vals(count);
        is.read(reinterpret_cast<char*>(vals.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!is) throw DataError("checkpoint: truncated tensor " + name);
        tensors.emplace(std::move(name), std::move(vals));
    }
    auto take = [&](const std::string& name, std::vector<double>& dst) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("checkpoint missing tensor: " + name);
        if (it->second.size() != dst.size())
            throw ShapeError("checkpoint tensor size mismatch: " + name);
        dst = std::move(it->second);
    };
    for (std::size_t i = 0; i < net.convs.size(); ++i) {
        take("conv" + std::to_string(i) + ".weight", net.convs[i].weights);
        take("conv" + std::to_string(i) + ".bias", net.convs[i].bias);
    }
    for (std::size_t i = 0; i < net.denses.size(); ++i) {
        take("dense" + std::to_string(i) + ".weight", net.denses[i].weights);
        take("dense" + std::to_string(i) + ".bias", net.denses[i].bias);
    }
}

} // namespace fd
