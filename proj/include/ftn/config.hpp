#pragma once

#include "ftn/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace ftn {

struct ConfigKey {
    std::string name;
    std::string section;
    std::string default_value;
    std::string help;
};

/// Every recognized key with its section and default. Key names are unique
/// across sections so each one maps to a single command-line flag.
inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"experiment", "run", "classify", "recovery | classify"},
        {"output_dir", "run", "out", "directory for traces, summary and config echo"},
        {"seed", "run", "0", "seed for initialization, splits, shuffling and sampling"},
        {"threads", "run", "0", "worker threads (0: FTN_THREADS or all cores)"},
        {"checkpoint", "run", "false", "write final parameters of each run to <output_dir>/<method>.ftnc"},

        {"dataset", "data", "csv", "csv | idx"},
        {"path", "data", "", "CSV file (dataset = csv)"},
        {"images", "data", "", "IDX image file (dataset = idx)"},
        {"labels", "data", "", "IDX label file (dataset = idx)"},
        {"label_column", "data", "-1", "CSV label column, negative counts from the end"},
        {"value_max", "data", "16", "CSV feature scale"},
        {"image_size", "data", "0", "side length of square input images (0: no resampling)"},
        {"downscale", "data", "0", "resample images to this side length (0: keep)"},
        {"pixel_order", "data", "z-order", "leaf order of image pixels: z-order | row-major"},
        {"limit", "data", "0", "use only the first N samples (0: all)"},
        {"train_fraction", "data", "0.8", "train share of the train/test split"},

        {"feature", "model", "normalized-affine", "monomial | legendre | hermite | normalized-affine"},
        {"degree", "model", "1", "polynomial degree of the feature family"},
        {"hermite_normalized", "model", "false", "divide He_k by sqrt(k!)"},
        {"max_rank", "model", "8", "requested bond dimension (clamped to feasibility)"},

        {"methods", "optimizer", "bd-ngrad", "comma-separated subset of grad, ngrad, bd-ngrad, bdo-ngrad, d-ngrad"},
        {"step_policy", "optimizer", "armijo", "armijo | fixed"},
        {"step_size", "optimizer", "1", "fixed step or first trial step of the line search"},
        {"armijo_c", "optimizer", "1e-4", "sufficient decrease constant"},
        {"beta1", "optimizer", "0", "direction momentum decay"},
        {"beta2", "optimizer", "0.9", "eigenvalue average decay (d-ngrad)"},
        {"lambda", "optimizer", "5e-3", "Gauss-Newton regularization"},
        {"batch_size", "optimizer", "0", "mini-batch size (0: full batch)"},
        {"max_iters", "optimizer", "500", "iterations per run"},
        {"cg_tol", "optimizer", "1e-6", "relative CG residual tolerance"},
        {"cg_max_iter", "optimizer", "250", "CG iteration cap"},
        {"power_iters", "optimizer", "0", "power iterations for block eigenvalues (d-ngrad)"},
        {"eval_every", "optimizer", "10", "test accuracy cadence"},
        {"stop_loss", "optimizer", "0", "stop a run once the training loss is at or below this (0: off)"},
        {"stop_accuracy", "optimizer", "0", "stop a run once test accuracy reaches this (0: off)"},

        {"samples", "recovery", "256", "training samples"},
        {"leaves", "recovery", "4", "input dimension d"},
        {"outputs", "recovery", "3", "output dimension n_0"},
        {"bond", "recovery", "5", "bond dimension of truth and model"},
        {"noise_var", "recovery", "2.5e-3", "noise variance per output component"},
        {"bases", "recovery", "monomial,legendre,hermite", "feature families compared"},
        {"data_seed", "recovery", "1", "seed of the ground truth and the samples"},
    };
    return keys;
}

inline const ConfigKey* find_config_key(const std::string& name) {
    for (const auto& k : config_keys())
        if (k.name == name) return &k;
    return nullptr;
}

/// Resolved key/value configuration: defaults, then file, then overrides.
class Config {
public:
    Config() {
        for (const auto& k : config_keys()) values_[k.name] = k.default_value;
    }

    /// Reads an INI file. Unknown keys or keys in the wrong section are errors.
    void load_file(const std::string& path) {
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::ini_parser::read_ini(path, tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(e.what());
        }
        for (const auto& [section, body] : tree) {
            if (body.empty() && !body.data().empty())
                throw ConfigError(path + ": key '" + section + "' outside a section");
            for (const auto& [key, value] : body) {
                const auto* def = find_config_key(key);
                if (!def) throw ConfigError(path + ": unknown key '" + key + "'");
                if (def->section != section)
                    throw ConfigError(path + ": key '" + key + "' belongs to section [" + def->section + "]");
                values_[key] = value.data();
            }
        }
    }

    void set(const std::string& key, const std::string& value) {
        if (!find_config_key(key)) throw ConfigError("unknown key '" + key + "'");
        values_[key] = value;
    }

    const std::string& str(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
        return it->second;
    }

    double real(const std::string& key) const {
        const auto& s = str(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw ConfigError("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' expects a number, got '" + s + "'");
        }
    }

    std::int64_t integer(const std::string& key) const {
        const auto& s = str(key);
        std::int64_t v = 0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc() || r.ptr != s.data() + s.size())
            throw ConfigError("key '" + key + "' expects an integer, got '" + s + "'");
        return v;
    }

    std::size_t count(const std::string& key) const {
        const auto v = integer(key);
        if (v < 0) throw ConfigError("key '" + key + "' must be non-negative");
        return static_cast<std::size_t>(v);
    }

    bool flag(const std::string& key) const {
        const auto& s = str(key);
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off" || s.empty()) return false;
        throw ConfigError("key '" + key + "' expects a boolean, got '" + s + "'");
    }

    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            const auto b = item.find_first_not_of(" \t");
            const auto e = item.find_last_not_of(" \t");
            if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
        }
        return out;
    }

    /// Resolved configuration in INI form, one section per group.
    void echo(std::ostream& os) const {
        std::vector<std::string> sections;
        for (const auto& k : config_keys())
            if (std::find(sections.begin(), sections.end(), k.section) == sections.end()) sections.push_back(k.section);
        for (const auto& s : sections) {
            os << "[" << s << "]\n";
            for (const auto& k : config_keys())
                if (k.section == s) os << k.name << " = " << values_.at(k.name) << "\n";
            os << "\n";
        }
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace ftn
