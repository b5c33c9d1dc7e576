// harness.hpp: batch execution behind the command-line tool: single runs, eps x dt sweeps,
// expansion-residual probes and the self-test, with CSV/JSON outputs and exit codes
//   0 success, 1 self-test failure, 2 configuration error, 3 numerical failure, 4 I/O error.
#pragma once

#include "qlbgk/config.hpp"
#include "qlbgk/errors.hpp"
#include "qlbgk/report.hpp"
#include "qlbgk/selftest.hpp"
#include "qlbgk/solvers.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <iostream>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace qlbgk {

enum ExitCode : int { kExitOk = 0, kExitSelftest = 1, kExitConfig = 2, kExitNumerical = 3, kExitIo = 4 };

// Runs fn(0..count-1) on up to `workers` threads. Exceptions are collected and the
// one with the lowest index is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t count, int workers, Fn fn) {
    std::size_t threads = workers > 0 ? static_cast<std::size_t>(workers)
                                      : std::max<std::size_t>(1, std::thread::hardware_concurrency());
    threads = std::min(threads, count);
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
    }
    for (const std::exception_ptr& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

// Numerical failure with the state of the run at the time it happened.
class RunFailure : public NumericalFailure {
public:
    RunFailure(const std::string& what, nlohmann::json snapshot)
        : NumericalFailure(what), snapshot_(std::move(snapshot)) {}
    const nlohmann::json& snapshot() const { return snapshot_; }

private:
    nlohmann::json snapshot_;
};

namespace detail {

inline nlohmann::json record_json(const StepRecord& r) {
    return {{"step", r.step},
            {"time", r.time},
            {"mass", r.mass},
            {"min_eigenvalue", r.min_eigenvalue},
            {"el_residual", r.el_residual},
            {"iterations", r.iterations},
            {"positivity_violation", r.positivity_violation}};
}

// Sample spacing that hits every value in `steps` (each must be an integer multiple of the smallest).
inline double common_sample(const std::vector<double>& steps, const char* field) {
    const double base = *std::min_element(steps.begin(), steps.end());
    for (double s : steps) {
        const double k = s / base;
        if (std::abs(k - std::round(k)) > 1e-9 * k) {
            throw ConfigError(field, "every value must be an integer multiple of the smallest");
        }
    }
    return base;
}

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace detail

struct RunSummary {
    nlohmann::json json;
};

// --------------------------------------------------------------- run modes

inline RunSummary run_ap_mode(const RunConfig& cfg, const std::filesystem::path& dir) {
    const PhysicalSetup setup = build_setup(cfg);
    const CMatrix rho0 = build_initial_state(cfg, setup);
    ApSolver solver(setup, cfg.epsilon, cfg.dt, ap_options(cfg));
    SchemeState s = initial_state(setup, rho0);
    Trajectory traj;
    traj.spacing = setup.spacing();
    traj.push(0.0, s.density, s.rho);
    RunRecord records;
    const int steps = step_count(cfg.t_final, cfg.dt);
    for (int k = 0; k < steps; ++k) {
        StepRecord rec;
        try {
            s = solver.step(s, &rec);
        } catch (const NumericalFailure& e) {
            nlohmann::json snap{{"mode", "run-ap"}, {"failed_step", k + 1}, {"time", s.time},
                                {"epsilon", cfg.epsilon}, {"dt", cfg.dt}};
            if (!records.empty()) snap["last_record"] = detail::record_json(records.back());
            if (const auto* nc = dynamic_cast<const NonConvergence*>(&e)) {
                snap["residual"] = nc->residual();
                snap["iterations"] = nc->iterations();
            }
            write_density_series(dir / "densities.csv", traj.times, traj.densities);
            write_diagnostics(dir / "diagnostics.csv", records);
            throw RunFailure(e.what(), snap);
        }
        records.push_back(rec);
        traj.push(s.time, s.density, s.rho);
    }
    write_density_series(dir / "densities.csv", traj.times, traj.densities);
    write_diagnostics(dir / "diagnostics.csv", records);

    double mass_drift = 0.0, min_eig = std::numeric_limits<double>::infinity();
    int violations = 0;
    const double mass0 = rho0.trace().real();
    for (const StepRecord& r : records) {
        mass_drift = std::max(mass_drift, std::abs(r.mass - mass0) / std::abs(mass0));
        min_eig = std::min(min_eig, r.min_eigenvalue);
        violations += r.positivity_violation ? 1 : 0;
    }
    RunSummary out;
    out.json = {{"mode", "run-ap"},
                {"name", cfg.name},
                {"steps", steps},
                {"epsilon", cfg.epsilon},
                {"dt", cfg.dt},
                {"max_relative_mass_drift", mass_drift},
                {"min_eigenvalue", records.empty() ? detail::nan() : min_eig},
                {"positivity_violations", violations}};
    write_json(dir / "summary.json", out.json);
    return out;
}

inline RunSummary run_split_mode(const RunConfig& cfg, const std::filesystem::path& dir) {
    const PhysicalSetup setup = build_setup(cfg);
    const CMatrix rho0 = build_initial_state(cfg, setup);
    const SplitRunResult r = splitstep_run(setup, rho0, cfg.epsilon, cfg.t_final, cfg.dt,
                                           split_options(cfg, cfg.epsilon, cfg.dt));
    write_density_series(dir / "densities.csv", r.trajectory.times, r.trajectory.densities);
    RunSummary out;
    out.json = {{"mode", "run-split"},    {"name", cfg.name},           {"epsilon", cfg.epsilon},
                {"sample_dt", cfg.dt},    {"substep", r.trajectory.substep}, {"substeps", r.substeps},
                {"warnings", r.warnings}};
    write_json(dir / "summary.json", out.json);
    return out;
}

inline RunSummary run_qdd_mode(const RunConfig& cfg, const std::filesystem::path& dir) {
    const PhysicalSetup setup = build_setup(cfg);
    const Eigen::VectorXd n0 = build_density(cfg.initial.density, setup.grid);
    QddStepOptions o;
    o.optimizer.backend = cfg.solver.optimizer;
    o.optimizer.tolerance = cfg.solver.tolerance;
    o.optimizer.max_iterations = cfg.solver.max_iterations;
    const QddRunResult r = qdd_limit_run(setup, n0, cfg.dt, cfg.t_final, o);
    write_density_series(dir / "densities.csv", r.trajectory.times, r.trajectory.densities);
    const double worst = r.residuals.empty() ? 0.0 : *std::max_element(r.residuals.begin(), r.residuals.end());
    RunSummary out;
    out.json = {{"mode", "run-qdd"}, {"name", cfg.name}, {"dt", cfg.dt}, {"steps", r.residuals.size()},
                {"max_residual", worst}};
    write_json(dir / "summary.json", out.json);
    return out;
}

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<double> orders;     // per epsilon, L1 density error
    std::vector<double> constants;  // per epsilon: max over dt of error / dt
};

// AP runs over eps x dt against a Strang reference per eps sampled at the smallest dt.
inline SweepResult run_sweep(const RunConfig& cfg, int workers_override = -1) {
    const SweepConfig& sw = cfg.sweep;
    if (sw.epsilons.empty()) throw ConfigError("sweep.epsilons", "must not be empty");
    if (sw.dts.empty()) throw ConfigError("sweep.dts", "must not be empty");
    const double sample = detail::common_sample(sw.dts, "sweep.dts");
    const int workers = workers_override >= 0 ? workers_override : sw.workers;
    const PhysicalSetup setup = build_setup(cfg);
    const CMatrix rho0 = build_initial_state(cfg, setup);
    const bool want_l1 = std::find(sw.metrics.begin(), sw.metrics.end(), "l1_density") != sw.metrics.end();
    const bool want_e2 = std::find(sw.metrics.begin(), sw.metrics.end(), "e2_operator") != sw.metrics.end();

    std::vector<Trajectory> refs(sw.epsilons.size());
    parallel_for(refs.size(), workers, [&](std::size_t i) {
        const double e = sw.epsilons[i];
        refs[i] = splitstep_run(setup, rho0, e, cfg.t_final, sample, split_options(cfg, e, sample)).trajectory;
    });

    const std::size_t nd = sw.dts.size();
    SweepResult out;
    out.rows.resize(sw.epsilons.size() * nd);
    const ApOptions opts = ap_options(cfg);
    parallel_for(out.rows.size(), workers, [&](std::size_t c) {
        const std::size_t ie = c / nd;
        const double e = sw.epsilons[ie];
        const double dt = sw.dts[c % nd];
        ApOptions o = opts;
        o.diagnostics = false;
        const ApRunResult ap = ap_run(setup, rho0, e, dt, cfg.t_final, o);
        SweepRow row{e, dt, detail::nan(), detail::nan(), detail::nan()};
        if (want_l1 || want_e2) {
            const ErrorSeries es = error_metrics(ap.trajectory, refs[ie], setup.h0().matrix());
            if (want_l1) row.max_l1_density_error = es.max_l1();
            if (want_e2) row.max_e2_operator_error = es.max_e2();
        }
        out.rows[c] = row;
    });

    for (std::size_t ie = 0; ie < sw.epsilons.size(); ++ie) {
        std::vector<double> errs;
        double constant = 0.0;
        for (std::size_t id = 0; id < nd; ++id) {
            const SweepRow& r = out.rows[ie * nd + id];
            errs.push_back(r.max_l1_density_error);
            constant = std::max(constant, r.max_l1_density_error / r.dt);
        }
        const double order = nd >= 2 && want_l1 ? fitted_order(sw.dts, errs) : detail::nan();
        for (std::size_t id = 0; id < nd; ++id) out.rows[ie * nd + id].fitted_order = order;
        out.orders.push_back(order);
        out.constants.push_back(constant);
    }
    return out;
}

inline RunSummary run_sweep_mode(const RunConfig& cfg, const std::filesystem::path& dir, int workers_override) {
    const SweepResult r = run_sweep(cfg, workers_override);
    write_sweep(dir / "errors.csv", r.rows);
    const auto [lo, hi] = std::minmax_element(r.constants.begin(), r.constants.end());
    RunSummary out;
    out.json = {{"mode", "sweep"},
                {"name", cfg.name},
                {"epsilons", cfg.sweep.epsilons},
                {"dts", cfg.sweep.dts},
                {"fitted_orders", r.orders},
                {"error_constants", r.constants},
                {"constant_spread", *hi / *lo}};
    write_json(dir / "summary.json", out.json);
    return out;
}

inline std::vector<LemmaRow> run_lemma(const RunConfig& cfg, int workers_override = -1) {
    const LemmaConfig& lc = cfg.lemma;
    std::vector<double> marks = lc.gaps;
    if (lc.start > 0.0) marks.push_back(lc.start);
    const double sample = detail::common_sample(marks, "lemma.gaps");
    const double gmin = *std::min_element(lc.gaps.begin(), lc.gaps.end());
    const double gmax = *std::max_element(lc.gaps.begin(), lc.gaps.end());
    const PhysicalSetup setup = build_setup(cfg);
    const CMatrix rho0 = build_initial_state(cfg, setup);
    std::vector<LemmaRow> rows(lc.epsilons.size() * lc.gaps.size());
    const int workers = workers_override >= 0 ? workers_override : cfg.sweep.workers;
    parallel_for(lc.epsilons.size(), workers, [&](std::size_t ie) {
        const double e = lc.epsilons[ie];
        SplitOptions so = split_options(cfg, e, gmin);
        const Trajectory ref = splitstep_run(setup, rho0, e, lc.start + gmax, sample, so).trajectory;
        for (std::size_t ig = 0; ig < lc.gaps.size(); ++ig) {
            const double g = lc.gaps[ig];
            const Sigma1Residual s = sigma1_residual(setup, ref, lc.start, lc.start + g, e);
            const double scale = std::min(e * e, g);
            rows[ie * lc.gaps.size() + ig] =
                LemmaRow{e, g, s.e2_norm_value, s.div_current_l1, s.e2_norm_value / scale,
                         s.div_current_l1 / (e * scale)};
        }
    });
    return rows;
}

inline double spread(const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi / *lo;
}

inline RunSummary run_lemma_mode(const RunConfig& cfg, const std::filesystem::path& dir, int workers_override) {
    const std::vector<LemmaRow> rows = run_lemma(cfg, workers_override);
    write_lemma(dir / "lemma.csv", rows);
    std::vector<double> e2, dv;
    for (const LemmaRow& r : rows) {
        e2.push_back(r.e2_ratio);
        dv.push_back(r.div_ratio);
    }
    RunSummary out;
    out.json = {{"mode", "check-lemma"}, {"name", cfg.name}, {"e2_ratio_spread", spread(e2)},
                {"div_ratio_spread", spread(dv)}};
    write_json(dir / "summary.json", out.json);
    return out;
}

// ------------------------------------------------------------------- CLI

namespace detail {

inline nlohmann::json error_report(int code, const std::string& kind, const std::string& message) {
    return {{"status", "error"}, {"exit_code", code}, {"kind", kind}, {"message", message}};
}

inline void emit_error(const nlohmann::json& report, const std::string& dir, std::ostream& err) {
    err << report.dump() << '\n';
    if (dir.empty()) return;
    try {
        write_json(std::filesystem::path(dir) / "error.json", report);
    } catch (const std::exception&) {
        // stderr already carries the report
    }
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Quantum Liouville-BGK solvers: asymptotic-preserving scheme, split-step reference, QDD limit"};
    app.require_subcommand(1);
    std::string config_path, output_dir;
    int workers = -1;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"run-ap", "run the asymptotic-preserving scheme"},
        {"run-split", "run the split-step reference solver"},
        {"run-qdd", "run the implicit QDD limit solver"},
        {"sweep", "eps x dt convergence study against the reference"},
        {"check-lemma", "measure the expansion residual on a reference trajectory"},
        {"selftest", "run the invariant suite"}};
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        if (name != "selftest") {
            sub->add_option("-c,--config", config_path, "JSON configuration file")->required();
        } else {
            sub->add_option("-c,--config", config_path, "JSON configuration file (optional)");
        }
        sub->add_option("-o,--output-dir", output_dir, std::string("output directory (overrides ") + kOutputDirEnv +
                                                           " and the config)");
        if (name == "sweep" || name == "check-lemma") {
            sub->add_option("-j,--workers", workers, "worker threads (0: hardware concurrency)");
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kExitOk : kExitConfig;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    std::string dir;
    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        dir = output_dir.empty() ? output_directory(cfg) : output_dir;
        if (command == "selftest") {
            const std::vector<CheckResult> checks = run_selftest();
            print_checks(out, checks);
            return all_passed(checks) ? kExitOk : kExitSelftest;
        }
        const auto t0 = std::chrono::steady_clock::now();
        RunSummary s;
        if (command == "run-ap") s = run_ap_mode(cfg, dir);
        if (command == "run-split") s = run_split_mode(cfg, dir);
        if (command == "run-qdd") s = run_qdd_mode(cfg, dir);
        if (command == "sweep") s = run_sweep_mode(cfg, dir, workers);
        if (command == "check-lemma") s = run_lemma_mode(cfg, dir, workers);
        s.json["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        s.json["output_dir"] = dir;
        out << s.json.dump(2) << '\n';
        return kExitOk;
    } catch (const ConfigError& e) {
        nlohmann::json r = detail::error_report(kExitConfig, "configuration", e.what());
        r["field"] = e.field();
        detail::emit_error(r, output_dir.empty() ? std::string() : output_dir, err);
        return kExitConfig;
    } catch (const InvalidConfiguration& e) {
        detail::emit_error(detail::error_report(kExitConfig, "configuration", e.what()), {}, err);
        return kExitConfig;
    } catch (const RunFailure& e) {
        nlohmann::json r = detail::error_report(kExitNumerical, "numerical", e.what());
        r["diagnostics"] = e.snapshot();
        detail::emit_error(r, dir, err);
        return kExitNumerical;
    } catch (const NonConvergence& e) {
        nlohmann::json r = detail::error_report(kExitNumerical, "numerical", e.what());
        r["diagnostics"] = {{"residual", e.residual()}, {"iterations", e.iterations()}};
        detail::emit_error(r, dir, err);
        return kExitNumerical;
    } catch (const IoError& e) {
        detail::emit_error(detail::error_report(kExitIo, "io", e.what()), {}, err);
        return kExitIo;
    } catch (const Error& e) {
        // NumericalFailure, InvalidState and InvalidInput raised by the solvers
        detail::emit_error(detail::error_report(kExitNumerical, "numerical", e.what()), dir, err);
        return kExitNumerical;
    }
}

}  // namespace qlbgk
