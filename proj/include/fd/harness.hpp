#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fd/config.hpp"
#include "fd/data.hpp"
#include "fd/errors.hpp"
#include "fd/metrics.hpp"
#include "fd/network.hpp"

namespace fd {

enum class Method { Baseline, CBS, FD_GF, FD_RF };

inline const char* method_name(Method m) {
    switch (m) {
    case Method::Baseline: return "Baseline";
    case Method::CBS: return "CBS";
    case Method::FD_GF: return "FD_GF";
    case Method::FD_RF: return "FD_RF";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "Baseline") return Method::Baseline;
    if (s == "CBS") return Method::CBS;
    if (s == "FD_GF") return Method::FD_GF;
    if (s == "FD_RF") return Method::FD_RF;
    throw ConfigError("unknown method: " + s);
}

struct TrainConfig {
    Method method = Method::Baseline;
    int epochs = 30;
    int batch = 64;
    // 0.05 destabilizes FD training (random high-gain filters + momentum, no
    // normalization layers); 0.02 is stable for every method on the shortcut task.
    double lr = 0.02;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    // Global L2 gradient-norm clip; 0 disables. Random filters occasionally
    // produce one huge batch gradient that kills the net for good without it.
    double grad_clip = 5.0;
    std::uint64_t seed = 0;
    int n_train = 4000;
    int n_val = 1000;
    ShortcutSpec data;
    FDConfig fd;
    std::string out_dir = "runs";

    std::string run_id() const {
        return std::string(method_name(method)) + "_s" + std::to_string(seed);
    }

    void validate() const {
        if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
        if (batch < 1) throw ConfigError("train.batch must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ConfigError("train.momentum must lie in [0,1)");
        if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
        if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
        if (n_train < 1 || n_val < 1) throw ConfigError("train sample counts must be >= 1");
        data.validate();
        fd.validate();
    }
};

inline TrainConfig train_config_from(const ConfigMap& c) {
    TrainConfig t;
    t.method = parse_method(c.get_str("train.method", method_name(t.method)));
    t.epochs = static_cast<int>(c.get_int("train.epochs", t.epochs));
    t.batch = static_cast<int>(c.get_int("train.batch", t.batch));
    t.lr = c.get_double("train.lr", t.lr);
    t.momentum = c.get_double("train.momentum", t.momentum);
    t.weight_decay = c.get_double("train.weight_decay", t.weight_decay);
    t.grad_clip = c.get_double("train.grad_clip", t.grad_clip);
    t.seed = static_cast<std::uint64_t>(c.get_int("train.seed", static_cast<std::int64_t>(t.seed)));
    t.n_train = static_cast<int>(c.get_int("train.n_train", t.n_train));
    t.n_val = static_cast<int>(c.get_int("train.n_val", t.n_val));
    t.out_dir = c.get_str("train.out_dir", t.out_dir);
    t.data = shortcut_spec_from(c);
    t.fd = fd_config_from(c);
    t.validate();
    return t;
}

namespace detail {
// Scales all gradients so their global L2 norm is at most max_norm.
inline void clip_grad_norm(NetGrads& g, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    auto accum = [&](const std::vector<double>& v) {
        for (double x : v) sq += x * x;
    };
    for (const auto& v : g.conv_w) accum(v);
    for (const auto& v : g.conv_b) accum(v);
    for (const auto& v : g.dense_w) accum(v);
    for (const auto& v : g.dense_b) accum(v);
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double scale = max_norm / norm;
    auto apply = [&](std::vector<double>& v) {
        for (double& x : v) x *= scale;
    };
    for (auto& v : g.conv_w) apply(v);
    for (auto& v : g.conv_b) apply(v);
    for (auto& v : g.dense_w) apply(v);
    for (auto& v : g.dense_b) apply(v);
}

inline Tensor4 gather_batch(const Dataset& ds, const std::vector<int>& idx, int begin,
                            int count, std::vector<int>& labels) {
    Tensor4 x(count, ds.images.c, ds.images.h, ds.images.w);
    labels.resize(static_cast<std::size_t>(count));
    const std::size_t plane = ds.images.size() / ds.images.n;
    for (int i = 0; i < count; ++i) {
        const int s = idx[begin + i];
        std::copy_n(ds.images.data.data() + static_cast<std::size_t>(s) * plane, plane,
                    x.data.data() + static_cast<std::size_t>(i) * plane);
        labels[i] = ds.labels[s];
    }
    return x;
}

inline void fisher_yates(std::vector<int>& idx, RngStream& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.next_below(i)]);
}
} // namespace detail

// Mean accuracy and loss over a dataset, FD/CBS layers as configured for
// inference (identity unless cbs_eval_smooth).
inline std::pair<double, double> eval_accuracy(const Network& net, const Dataset& ds,
                                               const std::vector<FDDraw>& draws = {}) {
    const int chunk = 256;
    int correct = 0;
    double loss_sum = 0.0;
    std::vector<int> idx(static_cast<std::size_t>(ds.size()));
    std::iota(idx.begin(), idx.end(), 0);
    for (int b = 0; b < ds.size(); b += chunk) {
        const int count = std::min(chunk, ds.size() - b);
        std::vector<int> labels;
        const Tensor4 x = detail::gather_batch(ds, idx, b, count, labels);
        const std::vector<double> logits = net_forward(net, x, draws);
        auto [loss, grad] = softmax_xent(logits, labels, net.num_classes);
        loss_sum += loss * count;
        for (int i = 0; i < count; ++i) {
            const double* row = logits.data() + static_cast<std::size_t>(i) * net.num_classes;
            int best = 0;
            for (int c = 1; c < net.num_classes; ++c)
                if (row[c] > row[best]) best = c;
            if (best == labels[i]) ++correct;
        }
    }
    return {static_cast<double>(correct) / ds.size(), loss_sum / ds.size()};
}

// Draws used at inference: identity everywhere, except CBS with
// cbs_eval_smooth, which keeps its final-sigma Gaussian active.
inline std::vector<FDDraw> inference_draws(const Network& net, Method method,
                                           const TrainConfig& cfg) {
    if (method == Method::CBS && cfg.fd.cbs_eval_smooth) {
        std::vector<FDDraw> draws;
        std::size_t ci = 0;
        for (LayerKind k : net.layers) {
            if (k == LayerKind::Conv) ++ci;
            if (k == LayerKind::FD)
                draws.push_back(build_cbs_draw(net.convs[ci - 1].c_out,
                                               cfg.epochs > 0 ? cfg.epochs - 1 : 0, cfg.fd));
        }
        return draws;
    }
    return {};
}

struct TrainResult {
    Network net;
    std::vector<MetricsRecord> metrics;
};

// Trains TinyNet on the shortcut dataset with the method's layer behavior.
// Fully deterministic per (cfg, seed): weight init, shuffling, and FD draws
// consume disjoint RNG streams.
inline TrainResult train(const TrainConfig& cfg, const Dataset* train_override = nullptr,
                         const Dataset* val_override = nullptr) {
    cfg.validate();
    const Dataset train_ds = train_override
                                 ? *train_override
                                 : gen_shortcut_dataset(cfg.data, cfg.n_train, Split::Train, cfg.seed);
    const Dataset val_ds = val_override
                               ? *val_override
                               : gen_shortcut_dataset(cfg.data, cfg.n_val, Split::Test, cfg.seed);
    TrainResult res;
    res.net = make_tinynet(train_ds.images.h, train_ds.images.w, train_ds.num_classes);
    Network& net = res.net;
    {
        RngStream init_rng(cfg.seed, streams::kWeightInit);
        net.init(init_rng);
    }

    // Per-FD-layer channel counts, in layer order.
    std::vector<int> fd_channels;
    {
        std::size_t ci = 0;
        for (LayerKind k : net.layers) {
            if (k == LayerKind::Conv) ++ci;
            if (k == LayerKind::FD) fd_channels.push_back(net.convs[ci - 1].c_out);
        }
    }

    FDConfig step_fd = cfg.fd;
    if (cfg.method == Method::FD_RF) step_fd.mode = FDMode::FD_RF;
    if (cfg.method == Method::FD_GF) step_fd.mode = FDMode::FD_GF;

    std::vector<SgdState> conv_w_state(net.convs.size()), conv_b_state(net.convs.size());
    std::vector<SgdState> dense_w_state(net.denses.size()), dense_b_state(net.denses.size());

    std::vector<int> idx(static_cast<std::size_t>(train_ds.size()));
    std::iota(idx.begin(), idx.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        {
            RngStream shuffle_rng(cfg.seed, streams::sub(streams::kShuffle,
                                                         static_cast<std::uint64_t>(epoch)));
            detail::fisher_yates(idx, shuffle_rng);
        }
        const int steps = (train_ds.size() + cfg.batch - 1) / cfg.batch;
        for (int step = 0; step < steps; ++step) {
            const int begin = step * cfg.batch;
            const int count = std::min(cfg.batch, train_ds.size() - begin);
            std::vector<int> labels;
            const Tensor4 x = detail::gather_batch(train_ds, idx, begin, count, labels);

            std::vector<FDDraw> draws;
            if (cfg.method == Method::FD_RF || cfg.method == Method::FD_GF) {
                for (std::size_t l = 0; l < fd_channels.size(); ++l) {
                    RngStream draw_rng(cfg.seed,
                                       streams::sub(streams::kFdDraw, l,
                                                    static_cast<std::uint64_t>(epoch),
                                                    static_cast<std::uint64_t>(step)));
                    draws.push_back(build_draw(fd_channels[l], step_fd, draw_rng));
                }
            } else if (cfg.method == Method::CBS) {
                for (int ch : fd_channels) draws.push_back(build_cbs_draw(ch, epoch, cfg.fd));
            }

            double loss;
            NetGrads grads;
            try {
                std::tie(loss, grads) = forward_backward(net, x, labels, draws);
                detail::clip_grad_norm(grads, cfg.grad_clip);
                for (std::size_t i = 0; i < net.convs.size(); ++i) {
                    sgd_step(net.convs[i].weights, grads.conv_w[i], conv_w_state[i], cfg.lr,
                             cfg.momentum, cfg.weight_decay);
                    sgd_step(net.convs[i].bias, grads.conv_b[i], conv_b_state[i], cfg.lr,
                             cfg.momentum, 0.0);
                }
                for (std::size_t i = 0; i < net.denses.size(); ++i) {
                    sgd_step(net.denses[i].weights, grads.dense_w[i], dense_w_state[i], cfg.lr,
                             cfg.momentum, cfg.weight_decay);
                    sgd_step(net.denses[i].bias, grads.dense_b[i], dense_b_state[i], cfg.lr,
                             cfg.momentum, 0.0);
                }
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (epoch " +
                                   std::to_string(epoch) + ", step " + std::to_string(step) +
                                   ")");
            }
        }
        auto [acc, loss] = eval_accuracy(net, val_ds, inference_draws(net, cfg.method, cfg));
        MetricsRecord r;
        r.run_id = cfg.run_id();
        r.method = method_name(cfg.method);
        r.seed = cfg.seed;
        r.phase = "val";
        r.epoch = epoch;
        r.accuracy = acc;
        r.loss = loss;
        res.metrics.push_back(std::move(r));
    }
    return res;
}

// Clean cell plus one record per (kind, severity 1..5).
inline std::vector<MetricsRecord> evaluate(const Network& net, const Dataset& ds,
                                           const std::string& run_id, const std::string& method,
                                           std::uint64_t seed, int epoch,
                                           const std::vector<FDDraw>& draws = {}) {
    std::vector<MetricsRecord> recs;
    auto push = [&](const std::string& phase, const std::string& corruption, int severity,
                    double acc, double loss) {
        MetricsRecord r;
        r.run_id = run_id;
        r.method = method;
        r.seed = seed;
        r.phase = phase;
        r.corruption = corruption;
        r.severity = severity;
        r.epoch = epoch;
        r.accuracy = acc;
        r.loss = loss;
        recs.push_back(std::move(r));
    };
    {
        auto [acc, loss] = eval_accuracy(net, ds, draws);
        push("test", "none", 0, acc, loss);
    }
    for (CorruptionKind kind : kAllCorruptions) {
        for (int severity = 1; severity <= 5; ++severity) {
            const Dataset cds = corrupt(ds, CorruptionSpec{kind, severity}, seed);
            auto [acc, loss] = eval_accuracy(net, cds, draws);
            push("corrupt", corruption_name(kind), severity, acc, loss);
        }
    }
    return recs;
}

// ---------------------------------------------------------------------------
// Cross-run comparison: per-method mean +- half-range across seeds per
// (phase, corruption, severity) cell, taken at each run's final epoch.

struct CompareCell {
    std::string method;
    std::string phase;
    std::string corruption;
    int severity = 0;
    double mean_accuracy = 0.0;
    double spread = 0.0; // half-range across seeds
    double mean_loss = 0.0;
    int num_runs = 0;
};

inline std::vector<CompareCell> compare_runs(const std::vector<MetricsRecord>& all) {
    if (all.empty()) throw DataError("compare: no records");
    // Final-epoch record per (run_id, cell).
    std::map<std::string, MetricsRecord> latest;
    for (const MetricsRecord& r : all) {
        const std::string key = r.run_id + "|" + r.phase + "|" + r.corruption + "|" +
                                std::to_string(r.severity);
        auto it = latest.find(key);
        if (it == latest.end() || r.epoch >= it->second.epoch) latest[key] = r;
    }
    // Every method must cover the same evaluation grid.
    std::map<std::string, std::set<std::string>> grids;
    std::map<std::string, std::vector<MetricsRecord>> cells;
    for (const auto& [key, r] : latest) {
        const std::string cell = r.phase + "|" + r.corruption + "|" + std::to_string(r.severity);
        grids[r.method].insert(cell);
        cells[r.method + "|" + cell].push_back(r);
    }
    for (auto it = std::next(grids.begin()); it != grids.end(); ++it)
        if (it->second != grids.begin()->second)
            throw DataError("compare: mismatched evaluation grids between methods");

    std::vector<CompareCell> out;
    for (const auto& [key, rs] : cells) {
        CompareCell c;
        c.method = rs.front().method;
        c.phase = rs.front().phase;
        c.corruption = rs.front().corruption;
        c.severity = rs.front().severity;
        c.num_runs = static_cast<int>(rs.size());
        double lo = rs.front().accuracy, hi = lo;
        for (const MetricsRecord& r : rs) {
            c.mean_accuracy += r.accuracy;
            c.mean_loss += r.loss;
            lo = std::min(lo, r.accuracy);
            hi = std::max(hi, r.accuracy);
        }
        c.mean_accuracy /= c.num_runs;
        c.mean_loss /= c.num_runs;
        c.spread = (hi - lo) / 2.0;
        out.push_back(std::move(c));
    }
    // Methods sorted by mean accuracy descending within each cell group,
    // ties broken lexicographically by method name.
    std::sort(out.begin(), out.end(), [](const CompareCell& a, const CompareCell& b) {
        const auto ka = std::tie(a.phase, a.corruption, a.severity);
        const auto kb = std::tie(b.phase, b.corruption, b.severity);
        if (ka != kb) return ka < kb;
        if (a.mean_accuracy != b.mean_accuracy) return a.mean_accuracy > b.mean_accuracy;
        return a.method < b.method;
    });
    return out;
}

inline void write_compare_csv(std::ostream& os, const std::vector<CompareCell>& cells) {
    os << "method,phase,corruption,severity,mean_accuracy,spread,mean_loss,num_runs\n";
    for (const CompareCell& c : cells)
        os << c.method << ',' << c.phase << ',' << c.corruption << ',' << c.severity << ','
           << std::setprecision(17) << c.mean_accuracy << ',' << c.spread << ','
           << c.mean_loss << ',' << c.num_runs << '\n';
}

inline void write_compare_text(std::ostream& os, const std::vector<CompareCell>& cells) {
    os << std::left << std::setw(10) << "method" << std::setw(9) << "phase" << std::setw(16)
       << "corruption" << std::setw(9) << "severity" << std::setw(20) << "accuracy"
       << "loss\n";
    for (const CompareCell& c : cells) {
        std::ostringstream acc;
        acc << std::fixed << std::setprecision(4) << c.mean_accuracy << " +- "
            << std::setprecision(4) << c.spread;
        os << std::left << std::setw(10) << c.method << std::setw(9) << c.phase
           << std::setw(16) << c.corruption << std::setw(9) << c.severity << std::setw(20)
           << acc.str() << std::fixed << std::setprecision(4) << c.mean_loss << '\n';
    }
}

} // namespace fd
