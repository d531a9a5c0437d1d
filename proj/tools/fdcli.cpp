// Command-line front end: train / eval / gen-data / corrupt / kernel-dump /
// compare. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
// failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "fd/harness.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_train(const std::string& config_path, const std::string& method_override,
              long long seed_override, long long epochs_override) {
    fd::ConfigMap cm = config_path.empty() ? fd::ConfigMap()
                                           : fd::ConfigMap::parse_file(config_path);
    fd::TrainConfig cfg = fd::train_config_from(cm);
    if (!method_override.empty()) cfg.method = fd::parse_method(method_override);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (epochs_override >= 0) cfg.epochs = static_cast<int>(epochs_override);
    cfg.validate();

    fs::create_directories(cfg.out_dir);
    fd::TrainResult res = fd::train(cfg);
    const std::string base = cfg.out_dir + "/" + cfg.run_id();
    fd::save_checkpoint(base + ".ckpt", res.net);
    fd::write_metrics_csv(base + ".metrics.csv", res.metrics);
    std::cout << "run " << cfg.run_id() << ": " << cfg.epochs << " epochs";
    if (!res.metrics.empty())
        std::cout << ", final val accuracy " << res.metrics.back().accuracy;
    std::cout << "\ncheckpoint: " << base << ".ckpt\nmetrics:    " << base
              << ".metrics.csv\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& grid, const std::string& out_path) {
    fd::Dataset ds = fd::load_dataset(data_path);
    fd::Network net = fd::make_tinynet(ds.images.h, ds.images.w, ds.num_classes);
    fd::load_checkpoint(ckpt_path, net);

    // run id / method / seed recovered from the checkpoint filename when it
    // follows the train subcommand's <method>_s<seed> convention.
    std::string run_id = fs::path(ckpt_path).stem().string();
    std::string method = "unknown";
    std::uint64_t seed = 0;
    const auto us = run_id.rfind("_s");
    if (us != std::string::npos) {
        try {
            seed = std::stoull(run_id.substr(us + 2));
            method = run_id.substr(0, us);
        } catch (const std::exception&) {
        }
    }

    std::vector<fd::MetricsRecord> recs;
    if (grid == "all") {
        recs = fd::evaluate(net, ds, run_id, method, seed, 0);
    } else {
        auto [acc, loss] = fd::eval_accuracy(net, ds);
        fd::MetricsRecord r;
        r.run_id = run_id;
        r.method = method;
        r.seed = seed;
        r.phase = "test";
        r.epoch = 0;
        r.accuracy = acc;
        r.loss = loss;
        recs.push_back(std::move(r));
    }
    if (out_path.empty())
        fd::write_metrics_csv(std::cout, recs);
    else
        fd::write_metrics_csv(out_path, recs);
    return 0;
}

int cmd_gen_data(const std::string& spec_name, const std::string& out_path, long long seed,
                 long long n, const std::string& split_name, const std::string& config_path) {
    if (spec_name != "shortcut") throw fd::ConfigError("unknown data spec: " + spec_name);
    fd::ConfigMap cm = config_path.empty() ? fd::ConfigMap()
                                           : fd::ConfigMap::parse_file(config_path);
    fd::ShortcutSpec spec = fd::shortcut_spec_from(cm);
    fd::Split split;
    if (split_name == "train")
        split = fd::Split::Train;
    else if (split_name == "test")
        split = fd::Split::Test;
    else
        throw fd::ConfigError("split must be train or test");
    fd::Dataset ds = fd::gen_shortcut_dataset(spec, static_cast<int>(n), split,
                                              static_cast<std::uint64_t>(seed));
    fd::save_dataset(out_path, ds);
    std::cout << "wrote " << ds.size() << " samples to " << out_path << "\n";
    return 0;
}

int cmd_corrupt(const std::string& in_path, const std::string& kind_name, int severity,
                const std::string& out_path, long long seed) {
    fd::Dataset ds = fd::load_dataset(in_path);
    fd::CorruptionSpec spec{fd::parse_corruption(kind_name), severity};
    fd::Dataset out = fd::corrupt(ds, spec, static_cast<std::uint64_t>(seed));
    fd::save_dataset(out_path, out);
    std::cout << "wrote " << out.size() << " samples to " << out_path << "\n";
    return 0;
}

int cmd_kernel_dump(const std::string& family, double sigma, int size, double lambda,
                    double psi, double gamma, double theta) {
    fd::Kernel2D k;
    if (family == "gaussian")
        k = fd::gaussian_kernel(sigma, size);
    else if (family == "log")
        k = fd::log_kernel(sigma, size, /*zero_dc=*/true);
    else if (family == "gabor")
        k = fd::gabor_kernel(sigma, lambda, psi, gamma, theta, size);
    else
        throw fd::ConfigError("family must be gaussian, log, or gabor");
    fd::dump_kernel(std::cout, k);
    return 0;
}

int cmd_compare(const std::string& runs_dir, const std::string& out_path) {
    std::vector<fd::MetricsRecord> all;
    for (const auto& entry : fs::directory_iterator(runs_dir)) {
        if (entry.path().extension() != ".csv") continue;
        const auto recs = fd::read_metrics_csv(entry.path().string());
        all.insert(all.end(), recs.begin(), recs.end());
    }
    const auto cells = fd::compare_runs(all);
    fd::write_compare_text(std::cout, cells);
    if (!out_path.empty()) {
        std::ofstream os(out_path, std::ios::trunc);
        if (!os) throw fd::DataError("cannot open output csv: " + out_path);
        fd::write_compare_csv(os, cells);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Frequency Dropout training and evaluation harness"};
    app.require_subcommand(1);

    std::string config_path, method_override, data_path, ckpt_path, out_path, in_path;
    std::string grid = "all", spec_name = "shortcut", kind_name, family, split_name = "test";
    long long seed = 0, seed_override = -1, epochs_override = -1, n = 1000;
    int severity = 0, size = 3;
    double sigma = 1.0, lambda = 4.0, psi = 0.0, gamma = 0.5, theta = 0.0;

    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "config file (key = value)");
    train->add_option("--method", method_override, "Baseline|CBS|FD_GF|FD_RF");
    train->add_option("--seed", seed_override, "override train.seed");
    train->add_option("--epochs", epochs_override, "override train.epochs");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval->add_option("--data", data_path, "dataset file")->required();
    eval->add_option("--grid", grid, "all = clean + 4x5 corruption grid, clean = clean only");
    eval->add_option("--out", out_path, "metrics csv output (default stdout)");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--spec", spec_name, "dataset spec (shortcut)");
    gen->add_option("--out", out_path, "output dataset file")->required();
    gen->add_option("--seed", seed, "generation seed");
    gen->add_option("--n", n, "sample count");
    gen->add_option("--split", split_name, "train|test");
    gen->add_option("--config", config_path, "config file with data.* keys");

    auto* cor = app.add_subcommand("corrupt", "apply a corruption to a dataset file");
    cor->add_option("--in", in_path, "input dataset file")->required();
    cor->add_option("--kind", kind_name, "gaussian_noise|gaussian_blur|contrast|pixelate")
        ->required();
    cor->add_option("--severity", severity, "0..5")->required();
    cor->add_option("--out", out_path, "output dataset file")->required();
    cor->add_option("--seed", seed, "noise seed");

    auto* kd = app.add_subcommand("kernel-dump", "print a filter kernel as text");
    kd->add_option("--family", family, "gaussian|log|gabor")->required();
    kd->add_option("--sigma", sigma, "standard deviation")->required();
    kd->add_option("--size", size, "odd kernel side length")->required();
    kd->add_option("--lambda", lambda, "gabor wavelength");
    kd->add_option("--psi", psi, "gabor phase");
    kd->add_option("--gamma", gamma, "gabor aspect ratio");
    kd->add_option("--theta", theta, "gabor orientation");

    auto* cmp = app.add_subcommand("compare", "aggregate metrics across runs");
    cmp->add_option("--runs", in_path, "directory of metrics csv files")->required();
    cmp->add_option("--out", out_path, "comparison csv output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train))
            return cmd_train(config_path, method_override, seed_override, epochs_override);
        if (app.got_subcommand(eval)) return cmd_eval(ckpt_path, data_path, grid, out_path);
        if (app.got_subcommand(gen))
            return cmd_gen_data(spec_name, out_path, seed, n, split_name, config_path);
        if (app.got_subcommand(cor)) return cmd_corrupt(in_path, kind_name, severity, out_path, seed);
        if (app.got_subcommand(kd))
            return cmd_kernel_dump(family, sigma, size, lambda, psi, gamma, theta);
        if (app.got_subcommand(cmp)) return cmd_compare(in_path, out_path);
    } catch (const fd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const fd::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const fd::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const fd::ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
