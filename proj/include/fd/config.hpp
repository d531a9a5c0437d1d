#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fd/data.hpp"
#include "fd/errors.hpp"
#include "fd/fd_layer.hpp"

namespace fd {

// Structured-text config: `key = value` lines, `#` comments, dotted keys in
// sections train.*, fd.*, data.*.
class ConfigMap {
public:
    ConfigMap() = default;

    static ConfigMap parse(std::istream& is) {
        ConfigMap cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": expected key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string val = trim(trimmed.substr(eq + 1));
            if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) +
                                               ": empty key");
            cfg.values_[key] = val;
        }
        return cfg;
    }

    static ConfigMap parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file: " + path);
        return parse(is);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : it->second;
    }

    double get_double(const std::string& key, double dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        try {
            std::size_t pos;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not a number: " + it->second);
        }
    }

    std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        try {
            std::size_t pos;
            const std::int64_t v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not an integer: " + it->second);
        }
    }

    bool get_bool(const std::string& key, bool dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config key " + key + ": not a boolean: " + it->second);
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

inline FDConfig fd_config_from(const ConfigMap& c) {
    FDConfig f;
    f.mode = parse_mode(c.get_str("fd.mode", mode_name(f.mode)));
    f.p_gauss = c.get_double("fd.p_gauss", f.p_gauss);
    f.p_log = c.get_double("fd.p_log", f.p_log);
    f.p_gabor = c.get_double("fd.p_gabor", f.p_gabor);
    f.sigma_low = c.get_double("fd.sigma_low", f.sigma_low);
    f.sigma_high = c.get_double("fd.sigma_high", f.sigma_high);
    f.kernel_size = static_cast<int>(c.get_int("fd.kernel_size", f.kernel_size));
    f.gabor_lambda_lo = c.get_double("fd.gabor.lambda_lo", f.gabor_lambda_lo);
    f.gabor_lambda_hi = c.get_double("fd.gabor.lambda_hi", f.gabor_lambda_hi);
    f.gabor_theta_lo = c.get_double("fd.gabor.theta_lo", f.gabor_theta_lo);
    f.gabor_theta_hi = c.get_double("fd.gabor.theta_hi", f.gabor_theta_hi);
    f.gabor_psi = c.get_double("fd.gabor.psi", f.gabor_psi);
    f.gabor_gamma = c.get_double("fd.gabor.gamma", f.gabor_gamma);
    f.cbs_sigma0 = c.get_double("fd.cbs.sigma0", f.cbs_sigma0);
    f.cbs_decay = c.get_double("fd.cbs.decay", f.cbs_decay);
    f.cbs_interval_epochs = static_cast<int>(c.get_int("fd.cbs.interval_epochs", f.cbs_interval_epochs));
    f.cbs_eval_smooth = c.get_bool("fd.cbs.eval_smooth", f.cbs_eval_smooth);
    f.validate();
    return f;
}

inline ShortcutSpec shortcut_spec_from(const ConfigMap& c) {
    ShortcutSpec s;
    s.image_size = static_cast<int>(c.get_int("data.image_size", s.image_size));
    s.bar_width = static_cast<int>(c.get_int("data.bar_width", s.bar_width));
    s.background = c.get_double("data.background", s.background);
    s.bar_amplitude = c.get_double("data.bar_amplitude", s.bar_amplitude);
    s.grating_amplitude = c.get_double("data.grating_amplitude", s.grating_amplitude);
    s.freq0 = c.get_double("data.freq0", s.freq0);
    s.freq1 = c.get_double("data.freq1", s.freq1);
    s.rho_train = c.get_double("data.rho_train", s.rho_train);
    s.rho_test = c.get_double("data.rho_test", s.rho_test);
    s.noise = c.get_double("data.noise", s.noise);
    s.validate();
    return s;
}

} // namespace fd
