#include "ftn/experiments.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ftn;
namespace fs = std::filesystem;

namespace {

std::string write_ini(const std::string& name, const std::string& text) {
    const auto path = (fs::temp_directory_path() / name).string();
    std::ofstream(path) << text;
    return path;
}

}  // namespace

TEST(Config, DefaultsPresentForEveryKey) {
    Config c;
    for (const auto& k : config_keys()) EXPECT_EQ(c.str(k.name), k.default_value);
    EXPECT_EQ(c.count("max_iters"), 500u);
    EXPECT_DOUBLE_EQ(c.real("lambda"), 5e-3);
}

TEST(Config, KeyNamesAreUnique) {
    const auto& keys = config_keys();
    for (std::size_t i = 0; i < keys.size(); ++i)
        for (std::size_t j = i + 1; j < keys.size(); ++j) EXPECT_NE(keys[i].name, keys[j].name);
}

TEST(Config, FileOverridesDefaults) {
    Config c;
    c.load_file(write_ini("ftn_cfg_ok.ini", "; comment\n[optimizer]\nmax_iters = 42\nmethods = grad, ngrad\n"
                                            "[model]\nfeature = legendre\n"));
    EXPECT_EQ(c.count("max_iters"), 42u);
    EXPECT_EQ(c.list("methods"), (std::vector<std::string>{"grad", "ngrad"}));
    EXPECT_EQ(c.str("feature"), "legendre");
}

TEST(Config, UnknownKeyRejected) {
    Config c;
    EXPECT_THROW(c.load_file(write_ini("ftn_cfg_unknown.ini", "[optimizer]\nmomentum = 3\n")), ConfigError);
    EXPECT_THROW(c.set("momentum", "3"), ConfigError);
}

TEST(Config, WrongSectionRejected) {
    Config c;
    EXPECT_THROW(c.load_file(write_ini("ftn_cfg_section.ini", "[data]\nmax_iters = 3\n")), ConfigError);
}

TEST(Config, MissingFileRejected) {
    Config c;
    EXPECT_THROW(c.load_file("/nonexistent/ftn.ini"), ConfigError);
}

TEST(Config, TypedAccessorsValidate) {
    Config c;
    c.set("max_iters", "12x");
    EXPECT_THROW(c.count("max_iters"), ConfigError);
    c.set("max_iters", "-1");
    EXPECT_THROW(c.count("max_iters"), ConfigError);
    c.set("lambda", "abc");
    EXPECT_THROW(c.real("lambda"), ConfigError);
    c.set("hermite_normalized", "maybe");
    EXPECT_THROW(c.flag("hermite_normalized"), ConfigError);
    c.set("hermite_normalized", "yes");
    EXPECT_TRUE(c.flag("hermite_normalized"));
}

TEST(Config, EchoReloadsToSameValues) {
    Config c;
    c.set("max_iters", "77");
    c.set("methods", "grad,d-ngrad");
    std::ostringstream os;
    c.echo(os);
    Config d;
    d.load_file(write_ini("ftn_cfg_echo.ini", os.str()));
    for (const auto& k : config_keys()) EXPECT_EQ(d.str(k.name), c.str(k.name)) << k.name;
}

TEST(Config, OptimizerConfigFromKeys) {
    Config c;
    c.set("step_policy", "fixed");
    c.set("step_size", "0.25");
    c.set("batch_size", "128");
    const auto oc = optimizer_config(c, Method::d_ngrad);
    EXPECT_EQ(oc.step_policy, StepPolicy::fixed);
    EXPECT_EQ(oc.step_size, 0.25);
    EXPECT_EQ(oc.batch_size, 128u);
    EXPECT_EQ(oc.method, Method::d_ngrad);
    c.set("step_policy", "wolfe");
    EXPECT_THROW(optimizer_config(c, Method::grad), ConfigError);
}

TEST(Config, UnknownMethodRejected) {
    Config c;
    c.set("methods", "grad,sgd");
    EXPECT_THROW(config_methods(c), ConfigError);
}

TEST(Experiments, RecoveryDefaultsMatchSetup) {
    Config c;
    c.set("degree", "2");
    const auto s = prepare_recovery(c);
    EXPECT_EQ(s.topology.leaf_count(), 4u);
    EXPECT_EQ(s.topology.output_dim(), 3u);
    EXPECT_EQ(s.topology.bond_dims(), (std::vector<std::size_t>{5, 5}));
    EXPECT_EQ(s.problem.data.rows(), 256u);
    EXPECT_DOUBLE_EQ(s.floor, 7.5e-3);
}

TEST(Experiments, ZeroIterationRecoveryWritesInitialRowOnly) {
    Config c;
    c.set("degree", "2");
    c.set("max_iters", "0");
    c.set("methods", "grad");
    c.set("bases", "legendre");
    const auto dir = fs::temp_directory_path() / "ftn_recovery_zero";
    c.set("output_dir", dir.string());
    std::ostringstream log;
    EXPECT_EQ(cmd_recovery(c, log), 0);
    std::ifstream f(dir / "trace_grad_legendre.csv");
    std::string header, row, extra;
    std::getline(f, header);
    std::getline(f, row);
    EXPECT_EQ(header, "iter,seconds,train_loss,step_size,test_accuracy,method");
    EXPECT_EQ(row.substr(0, 2), "0,");
    EXPECT_FALSE(std::getline(f, extra));
    EXPECT_TRUE(fs::exists(dir / "config.ini"));
    EXPECT_TRUE(fs::exists(dir / "summary.csv"));
    fs::remove_all(dir);
}

TEST(Experiments, IterationsToThreshold) {
    std::vector<TraceRecord> t(4);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i].iter = i * 10;
        t[i].train_loss = 1.0 / static_cast<double>(i + 1);
    }
    t[2].test_accuracy = 0.91;
    EXPECT_EQ(iterations_to_loss(t, 0.34), std::optional<std::size_t>(20));
    EXPECT_FALSE(iterations_to_loss(t, 0.1).has_value());
    EXPECT_EQ(iterations_to_accuracy(t, 0.9), std::optional<std::size_t>(20));
    EXPECT_EQ(final_accuracy(t), std::optional<double>(0.91));
}

TEST(Experiments, GridBestPicksLowestScorePerMethod) {
    std::vector<GridPoint> pts = {{"1", Method::grad, 3.0, {}},
                                  {"2", Method::grad, 1.0, {}},
                                  {"1", Method::d_ngrad, 0.5, {}},
                                  {"2", Method::d_ngrad, 0.7, {}}};
    const auto best = grid_best(pts);
    ASSERT_EQ(best.size(), 2u);
    EXPECT_EQ(best[0].value, "2");
    EXPECT_EQ(best[1].value, "1");
}
