#include "ftn/ftn.hpp"
#include "ftn/selftest.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Overrides {
    std::map<std::string, std::string> values;
    bool armijo = false;
    std::optional<double> fixed_step;
};

void add_config_flags(CLI::App* app, Overrides& ov) {
    for (const auto& key : ftn::config_keys()) {
        std::string dashed = key.name;
        for (auto& c : dashed)
            if (c == '_') c = '-';
        std::string names = "--" + dashed;
        if (dashed != key.name) names += ",--" + key.name;
        app->add_option(names, ov.values[key.name], key.help + " [" + key.section + "]");
    }
    app->add_flag("--armijo", ov.armijo, "use the Armijo line search");
    app->add_option("--fixed-step", ov.fixed_step, "use this fixed step size");
}

ftn::Config resolve(const std::string& path, CLI::App* app, const Overrides& ov) {
    ftn::Config cfg;
    if (!path.empty()) cfg.load_file(path);
    for (const auto& key : ftn::config_keys()) {
        std::string dashed = key.name;
        for (auto& c : dashed)
            if (c == '_') c = '-';
        if (app->count("--" + dashed) > 0) cfg.set(key.name, ov.values.at(key.name));
    }
    if (ov.armijo && ov.fixed_step) throw ftn::ConfigError("--armijo and --fixed-step are mutually exclusive");
    const bool explicit_policy = app->count("--step-policy") > 0;
    if (ov.armijo) {
        if (explicit_policy && cfg.str("step_policy") != "armijo")
            throw ftn::ConfigError("--armijo conflicts with --step-policy");
        cfg.set("step_policy", "armijo");
    }
    if (ov.fixed_step) {
        if (explicit_policy && cfg.str("step_policy") != "fixed")
            throw ftn::ConfigError("--fixed-step conflicts with --step-policy");
        if (app->count("--step-size") > 0) throw ftn::ConfigError("--fixed-step conflicts with --step-size");
        cfg.set("step_policy", "fixed");
        cfg.set("step_size", std::to_string(*ov.fixed_step));
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Functional tree tensor network training"};
    app.require_subcommand(1);

    std::string recovery_cfg, classify_cfg, grid_cfg, checkpoint, grid_param;
    std::vector<std::string> grid_values;
    Overrides rec_ov, cls_ov, grid_ov;

    auto* rec = app.add_subcommand("recovery", "recovery experiment under change of basis");
    rec->add_option("--config", recovery_cfg, "INI configuration file");
    add_config_flags(rec, rec_ov);

    auto* cls = app.add_subcommand("classify", "multinomial logistic regression on an image dataset");
    cls->add_option("--config", classify_cfg, "INI configuration file");
    add_config_flags(cls, cls_ov);

    auto* self = app.add_subcommand("selftest", "tiny-instance oracle checks");
    self->add_option("--checkpoint", checkpoint, "also validate this checkpoint");

    auto* grid = app.add_subcommand("grid-search", "repeat the configured experiment over parameter values");
    grid->add_option("--config", grid_cfg, "INI configuration file");
    grid->add_option("--param", grid_param, "configuration key to vary ('step' means step_size)")->required();
    grid->add_option("--values", grid_values, "values to try")->required()->delimiter(',');
    add_config_flags(grid, grid_ov);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*rec) {
            auto cfg = resolve(recovery_cfg, rec, rec_ov);
            cfg.set("experiment", "recovery");
            return ftn::cmd_recovery(cfg, std::cout);
        }
        if (*cls) {
            auto cfg = resolve(classify_cfg, cls, cls_ov);
            cfg.set("experiment", "classify");
            return ftn::cmd_classify(cfg, std::cout);
        }
        if (*grid) {
            auto cfg = resolve(grid_cfg, grid, grid_ov);
            const std::string param = grid_param == "step" ? "step_size" : grid_param;
            return ftn::cmd_grid_search(cfg, param, grid_values, std::cout);
        }
        if (*self) {
            std::optional<ftn::TtnParams> ck;
            if (!checkpoint.empty()) ck = ftn::load_checkpoint(checkpoint);
            bool ok = true;
            for (const auto& c : ftn::run_selftest(ck)) {
                std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
                ok = ok && c.passed;
            }
            return ok ? 0 : 2;
        }
    } catch (const ftn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ftn::FormatError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 1;
    } catch (const ftn::TopologyError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ftn::DimensionError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ftn::Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
