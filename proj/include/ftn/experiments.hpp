#pragma once

#include "ftn/checkpoint.hpp"
#include "ftn/config.hpp"
#include "ftn/data.hpp"
#include "ftn/feature_maps.hpp"
#include "ftn/optimizers.hpp"
#include "ftn/parallel.hpp"
#include "ftn/tree_topology.hpp"
#include "ftn/ttn_model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <tuple>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace ftn {

/// Incremental trace CSV: iter, seconds, train_loss, step_size, test_accuracy, method.
class TraceWriter {
public:
    explicit TraceWriter(const std::string& path) : out_(path) {
        if (!out_) throw ConfigError("cannot write " + path);
        out_ << "iter,seconds,train_loss,step_size,test_accuracy,method\n";
    }

    void write(const TraceRecord& r) {
        out_ << r.iter << ',' << std::setprecision(6) << r.seconds << ',' << std::setprecision(12) << r.train_loss
             << ',' << std::setprecision(12) << r.step_size << ',';
        if (r.test_accuracy) out_ << std::setprecision(8) << *r.test_accuracy;
        out_ << ',' << r.method << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

inline OptimizerConfig optimizer_config(const Config& cfg, Method method) {
    OptimizerConfig oc;
    oc.method = method;
    oc.step_policy = parse_step_policy(cfg.str("step_policy"));
    oc.step_size = cfg.real("step_size");
    oc.armijo_c = cfg.real("armijo_c");
    oc.beta1 = cfg.real("beta1");
    oc.beta2 = cfg.real("beta2");
    oc.lambda = cfg.real("lambda");
    oc.batch_size = cfg.count("batch_size");
    oc.max_iters = cfg.count("max_iters");
    oc.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    oc.cg_tol = cfg.real("cg_tol");
    oc.cg_max_iter = cfg.count("cg_max_iter");
    oc.power_iters = cfg.count("power_iters");
    oc.eval_every = cfg.count("eval_every");
    oc.stop_loss = cfg.real("stop_loss");
    oc.stop_accuracy = cfg.real("stop_accuracy");
    oc.validate();
    return oc;
}

inline std::vector<Method> config_methods(const Config& cfg) {
    std::vector<Method> out;
    for (const auto& m : cfg.list("methods")) out.push_back(parse_method(m));
    if (out.empty()) throw ConfigError("no methods selected");
    return out;
}

inline FeatureFamily config_family(const Config& cfg, const std::string& kind) {
    FeatureFamily f;
    f.kind = parse_feature_kind(kind);
    f.degree = cfg.count("degree");
    f.normalized = cfg.flag("hermite_normalized");
    return f;
}

struct MethodRun {
    Method method = Method::grad;
    std::string basis;
    RunResult result;
};

namespace detail {

inline std::filesystem::path prepare_output(const Config& cfg) {
    std::filesystem::path dir(cfg.str("output_dir"));
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    std::ofstream echo(dir / "config.ini");
    cfg.echo(echo);
    return dir;
}

inline void apply_threads(const Config& cfg) { set_worker_count(cfg.count("threads")); }

inline MethodRun run_logged(const Config& cfg, const OptimizerConfig& oc, const TtnParams& init, const FeatureBatch& batch,
                            const Matrix& targets, LossKind kind, const EvalSet* test, const std::string& basis,
                            const std::filesystem::path* dir, std::ostream& log) {
    MethodRun mr;
    mr.method = oc.method;
    mr.basis = basis;
    std::unique_ptr<TraceWriter> writer;
    const std::string stem = to_string(oc.method) + (basis.empty() ? "" : "_" + basis);
    if (dir) writer = std::make_unique<TraceWriter>((*dir / ("trace_" + stem + ".csv")).string());
    log << "run " << stem << ": " << oc.max_iters << " iterations\n";
    mr.result = run(oc, init, batch, targets, kind, test, [&](const TraceRecord& r) {
        if (writer) writer->write(r);
    });
    const auto& last = mr.result.trace.back();
    log << "  done after " << last.iter << " iterations, " << std::setprecision(4) << last.seconds
        << " s, loss " << std::setprecision(6) << last.train_loss;
    if (last.test_accuracy) log << ", test accuracy " << std::setprecision(4) << 100.0 * *last.test_accuracy << "%";
    if (mr.result.stopped_early) log << " (" << mr.result.stop_reason << ")";
    log << "\n";
    if (dir && cfg.flag("checkpoint")) save_checkpoint((*dir / (stem + ".ftnc")).string(), mr.result.params);
    return mr;
}

}  // namespace detail

/// First iteration whose training loss is at or below `threshold`.
inline std::optional<std::size_t> iterations_to_loss(const std::vector<TraceRecord>& trace, double threshold) {
    for (const auto& r : trace)
        if (r.train_loss <= threshold) return r.iter;
    return std::nullopt;
}

inline std::optional<std::size_t> iterations_to_accuracy(const std::vector<TraceRecord>& trace, double threshold) {
    for (const auto& r : trace)
        if (r.test_accuracy && *r.test_accuracy >= threshold) return r.iter;
    return std::nullopt;
}

inline std::optional<double> final_accuracy(const std::vector<TraceRecord>& trace) {
    for (auto it = trace.rbegin(); it != trace.rend(); ++it)
        if (it->test_accuracy) return it->test_accuracy;
    return std::nullopt;
}

// ---------------------------------------------------------------- recovery

struct RecoverySetup {
    RecoveryProblem problem;
    TreeTopology topology;
    FeatureFamily reference;  ///< family of the ground truth and the shared start
    TtnParams init;           ///< start point in the reference family
    double floor = 0.0;       ///< n_0 sigma^2
};

inline RecoverySetup prepare_recovery(const Config& cfg) {
    RecoverySetup s;
    const std::size_t d = cfg.count("leaves");
    const std::size_t n0 = cfg.count("outputs");
    const std::size_t bond = cfg.count("bond");
    s.reference = config_family(cfg, "legendre");
    s.topology = build_balanced(std::vector<std::size_t>(d, s.reference.dim()), n0,
                                std::vector<std::size_t>(d >= 2 ? d - 2 : 0, bond));
    const double noise = cfg.real("noise_var");
    s.problem = gen_recovery(static_cast<std::uint64_t>(cfg.integer("data_seed")), cfg.count("samples"), s.topology,
                             s.reference, noise);
    const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    s.init = random_init(s.topology, seed, probe_batch(s.reference, d, -1.0, 1.0, seed + 1));
    s.floor = static_cast<double>(n0) * noise;
    return s;
}

/// Runs every configured method for every basis from the same function h_0.
inline std::vector<MethodRun> run_recovery(const Config& cfg, const RecoverySetup& s, std::ostream& log,
                                           const std::filesystem::path* dir) {
    std::vector<MethodRun> runs;
    for (const auto& name : cfg.list("bases")) {
        const FeatureFamily fam = config_family(cfg, name);
        const Matrix M = basis_transform(s.reference, fam);
        const TtnParams init = change_of_basis(s.init, std::vector<Matrix>(s.topology.leaf_count(), M));
        const FeatureBatch batch = eval_features(fam, s.problem.data.inputs);
        for (Method m : config_methods(cfg))
            runs.push_back(detail::run_logged(cfg, optimizer_config(cfg, m), init, batch, s.problem.data.targets,
                                              LossKind::least_squares, nullptr, name, dir, log));
    }
    return runs;
}

inline int cmd_recovery(const Config& cfg, std::ostream& log) {
    detail::apply_threads(cfg);
    const auto dir = detail::prepare_output(cfg);
    const auto setup = prepare_recovery(cfg);
    const auto runs = run_recovery(cfg, setup, log, &dir);
    const double threshold = 1.1 * setup.floor;
    std::ofstream summary(dir / "summary.csv");
    summary << "method,basis,final_loss,best_loss,iterations_to_threshold,threshold\n";
    log << "\nmethod     basis        final loss    iters to " << std::setprecision(4) << threshold << "\n";
    for (const auto& r : runs) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& t : r.result.trace) best = std::min(best, t.train_loss);
        const auto hit = iterations_to_loss(r.result.trace, threshold);
        const double final_loss = r.result.trace.back().train_loss;
        summary << to_string(r.method) << ',' << r.basis << ',' << std::setprecision(10) << final_loss << ','
                << best << ',' << (hit ? std::to_string(*hit) : "") << ',' << threshold << '\n';
        log << std::left << std::setw(11) << to_string(r.method) << std::setw(13) << r.basis << std::setw(14)
            << std::setprecision(6) << final_loss << (hit ? std::to_string(*hit) : "-") << "\n";
    }
    return 0;
}

// ---------------------------------------------------------- classification

struct ClassifySetup {
    Dataset train;
    Dataset test;
    FeatureFamily family;
    TreeTopology topology;
    FeatureBatch train_batch;
    EvalSet test_set;
    TtnParams init;
};

inline Dataset load_config_dataset(const Config& cfg) {
    Dataset ds;
    const auto kind = cfg.str("dataset");
    if (kind == "csv") {
        if (cfg.str("path").empty()) throw ConfigError("dataset = csv needs a path");
        ds = load_csv(cfg.str("path"), static_cast<long>(cfg.integer("label_column")), cfg.real("value_max"));
    } else if (kind == "idx") {
        if (cfg.str("images").empty() || cfg.str("labels").empty())
            throw ConfigError("dataset = idx needs images and labels");
        ds = load_idx(cfg.str("images"), cfg.str("labels"));
    } else {
        throw ConfigError("unknown dataset kind '" + kind + "'");
    }
    const std::size_t limit = cfg.count("limit");
    if (limit > 0 && limit < ds.rows()) {
        std::vector<std::size_t> idx(limit);
        for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
        ds = ds.select(idx);
    }
    const std::size_t target = cfg.count("downscale");
    if (target > 0) {
        std::size_t side = cfg.count("image_size");
        if (side == 0) side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(ds.inputs.cols()))));
        if (side * side != static_cast<std::size_t>(ds.inputs.cols()))
            throw ConfigError("inputs are not square images of side " + std::to_string(side));
        if (side != target) ds.inputs = downscale(ds.inputs, side, side, target);
    }
    const auto order = cfg.str("pixel_order");
    if (order == "z-order") {
        const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(ds.inputs.cols()))));
        if (side * side != static_cast<std::size_t>(ds.inputs.cols()))
            throw ConfigError("pixel_order = z-order needs square images");
        ds.inputs = permute_columns(ds.inputs, zorder_permutation(side));
    } else if (order != "row-major") {
        throw ConfigError("unknown pixel_order '" + order + "'");
    }
    return ds;
}

inline ClassifySetup prepare_classify(const Config& cfg) {
    ClassifySetup s;
    const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    const Dataset all = load_config_dataset(cfg);
    std::tie(s.train, s.test) = split(all, cfg.real("train_fraction"), seed);
    s.family = config_family(cfg, cfg.str("feature"));
    const std::size_t d = static_cast<std::size_t>(all.inputs.cols());
    s.topology = uniform_topology(d, s.family.dim(), all.classes, cfg.count("max_rank"));
    s.train_batch = eval_features(s.family, s.train.inputs);
    s.test_set.batch = eval_features(s.family, s.test.inputs);
    s.test_set.targets = s.test.targets;
    s.init = random_init(s.topology, seed, probe_batch(s.family, d, 0.0, 1.0, seed + 1));
    return s;
}

inline std::vector<MethodRun> run_classify(const Config& cfg, const ClassifySetup& s, std::ostream& log,
                                           const std::filesystem::path* dir) {
    std::vector<MethodRun> runs;
    for (Method m : config_methods(cfg))
        runs.push_back(detail::run_logged(cfg, optimizer_config(cfg, m), s.init, s.train_batch, s.train.targets,
                                          LossKind::multinomial_logistic, &s.test_set, "", dir, log));
    return runs;
}

inline int cmd_classify(const Config& cfg, std::ostream& log) {
    detail::apply_threads(cfg);
    const auto dir = detail::prepare_output(cfg);
    const auto setup = prepare_classify(cfg);
    log << "train " << setup.train.rows() << " / test " << setup.test.rows() << " samples, d = "
        << setup.topology.leaf_count() << ", bond dims clamped to max " << cfg.str("max_rank") << ", "
        << setup.init.parameter_count() << " parameters\n";
    const auto runs = run_classify(cfg, setup, log, &dir);
    std::ofstream summary(dir / "summary.csv");
    summary << "method,iterations,final_train_loss,final_test_accuracy,seconds\n";
    std::ostringstream head, row;
    for (const auto& r : runs) {
        const auto& last = r.result.trace.back();
        const auto acc = final_accuracy(r.result.trace);
        summary << to_string(r.method) << ',' << last.iter << ',' << std::setprecision(10) << last.train_loss << ','
                << (acc ? std::to_string(*acc) : "") << ',' << last.seconds << '\n';
        head << "| " << std::setw(10) << to_string(r.method) << ' ';
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << (acc ? 100.0 * *acc : 0.0) << "%";
        row << "| " << std::setw(10) << cell.str() << ' ';
    }
    log << "\nFinal test accuracies\n" << head.str() << "|\n" << row.str() << "|\n";
    return 0;
}

// ------------------------------------------------------------- grid search

struct GridPoint {
    std::string value;
    Method method = Method::grad;
    double score = 0.0;  ///< lower is better
    std::optional<double> accuracy;
};

/// Mean training loss over the last quarter of the trace (at least one record).
inline double trace_score(const std::vector<TraceRecord>& trace) {
    const std::size_t n = std::max<std::size_t>(1, (trace.size() - 1) / 4);
    double s = 0.0;
    for (std::size_t i = trace.size() - n; i < trace.size(); ++i) s += trace[i].train_loss;
    return s / static_cast<double>(n);
}

/// Runs the configured experiment once per value of `param` and reports the
/// score of every (value, method) pair. Runs that fail numerically score +inf.
inline std::vector<GridPoint> grid_search(Config cfg, const std::string& param, const std::vector<std::string>& values,
                                          std::ostream& log) {
    if (!find_config_key(param)) throw ConfigError("unknown grid parameter '" + param + "'");
    if (values.empty()) throw ConfigError("grid search needs at least one value");
    detail::apply_threads(cfg);
    const bool classify = cfg.str("experiment") == "classify";
    std::optional<ClassifySetup> cs;
    std::optional<RecoverySetup> rs;
    std::vector<GridPoint> out;
    for (const auto& v : values) {
        cfg.set(param, v);
        if (classify) {
            if (!cs || param == "max_rank" || param == "seed") cs = prepare_classify(cfg);
        } else if (!rs || param == "seed" || param == "bond") {
            rs = prepare_recovery(cfg);
        }
        for (Method m : config_methods(cfg)) {
            Config one = cfg;
            one.set("methods", to_string(m));
            GridPoint gp;
            gp.value = v;
            gp.method = m;
            try {
                const auto runs = classify ? run_classify(one, *cs, log, nullptr) : run_recovery(one, *rs, log, nullptr);
                gp.score = 0.0;
                for (const auto& r : runs) gp.score += trace_score(r.result.trace) / static_cast<double>(runs.size());
                if (classify) gp.accuracy = final_accuracy(runs.front().result.trace);
            } catch (const NumericalError& e) {
                log << "  " << param << " = " << v << " failed: " << e.what() << "\n";
                gp.score = std::numeric_limits<double>::infinity();
            } catch (const DegenerateStepError& e) {
                log << "  " << param << " = " << v << " failed: " << e.what() << "\n";
                gp.score = std::numeric_limits<double>::infinity();
            }
            out.push_back(gp);
        }
    }
    return out;
}

/// Best value per method (lowest score; ties keep the earlier value).
inline std::vector<GridPoint> grid_best(const std::vector<GridPoint>& points) {
    std::vector<GridPoint> best;
    for (const auto& p : points) {
        auto it = std::find_if(best.begin(), best.end(), [&](const GridPoint& b) { return b.method == p.method; });
        if (it == best.end()) best.push_back(p);
        else if (p.score < it->score) *it = p;
    }
    return best;
}

inline int cmd_grid_search(const Config& cfg, const std::string& param, const std::vector<std::string>& values,
                           std::ostream& log) {
    const auto dir = detail::prepare_output(cfg);
    const auto points = grid_search(cfg, param, values, log);
    std::ofstream csv(dir / "grid.csv");
    csv << "param,value,method,score,test_accuracy\n";
    log << "\n" << param << " grid (score: mean training loss over the last quarter)\n";
    for (const auto& p : points) {
        csv << param << ',' << p.value << ',' << to_string(p.method) << ',' << std::setprecision(10) << p.score << ','
            << (p.accuracy ? std::to_string(*p.accuracy) : "") << '\n';
        log << "  " << std::left << std::setw(10) << to_string(p.method) << std::setw(10) << p.value
            << std::setprecision(6) << p.score << "\n";
    }
    for (const auto& b : grid_best(points))
        log << "best " << to_string(b.method) << ": " << param << " = " << b.value << "\n";
    return 0;
}

}  // namespace ftn
