// config.hpp: run configuration: JSON schema, validation and construction of the physical setup.
#pragma once

#include "qlbgk/equilibrium.hpp"
#include "qlbgk/errors.hpp"
#include "qlbgk/functional.hpp"
#include "qlbgk/grid.hpp"
#include "qlbgk/solvers.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace qlbgk {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutputDirEnv = "QLBGK_OUTPUT_DIR";

// Configuration error tied to a field path such as "initial.density.amplitude".
class ConfigError : public InvalidConfiguration {
public:
    ConfigError(std::string field, const std::string& message)
        : InvalidConfiguration(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

struct GridConfig {
    int n_points{32};
    double length{2.0 * std::numbers::pi};
    DiffMethod method{DiffMethod::spectral};
};

struct PotentialSpec {
    enum class Kind { zero, cosine, table } kind{Kind::zero};
    double amplitude{0.0};
    int mode{1};
    std::vector<double> values;
};

// Density profile n(x) = mean (1 + amplitude cos(mode x 2pi/L)), or a node table.
struct DensitySpec {
    enum class Kind { constant, cosine, table } kind{Kind::cosine};
    double mean{0.0};  // <= 0: 1/L (unit mass)
    double amplitude{0.5};
    int mode{1};
    std::vector<double> values;
};

struct InitialStateSpec {
    enum class Kind { equilibrium, ill_prepared } kind{Kind::equilibrium};
    DensitySpec density;
    double mixture_weight{0.2};  // ill-prepared: weight of the pure state
    int max_mode{4};             // ill-prepared: highest Fourier mode of the pure state
};

struct SolverConfig {
    OptimizerBackend optimizer{OptimizerBackend::hybrid};
    double tolerance{1e-10};
    int max_iterations{500};
    PropagatorBackend propagator{PropagatorBackend::exact};
    int cn_substeps{1};
    SourceQuadrature quadrature{SourceQuadrature::midpoint};
    double positivity_floor{1e-8};
    double reference_substep{0.0};  // <= 0: min(eps^2, dt) / reference_resolution
    double reference_resolution{50.0};
};

struct SweepConfig {
    std::vector<double> epsilons;
    std::vector<double> dts;
    std::vector<std::string> metrics{"l1_density", "e2_operator"};
    int workers{0};  // <= 0: hardware concurrency
};

struct LemmaConfig {
    std::vector<double> epsilons{0.3, 0.1, 0.03};
    std::vector<double> gaps{0.02, 0.01, 0.005};
    double start{0.05};
};

struct OutputConfig {
    std::string directory{"out"};
};

struct RunConfig {
    int schema_version{kSchemaVersion};
    std::string name;
    GridConfig grid;
    PotentialSpec potential;
    double temperature{1.0};
    double epsilon{1.0};
    double dt{0.01};
    double t_final{0.2};
    InitialStateSpec initial;
    SolverConfig solver;
    SweepConfig sweep;
    LemmaConfig lemma;
    OutputConfig output;
    std::uint64_t seed{0};
};

// ----------------------------------------------------------------- parsing

namespace detail {

using nlohmann::json;

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline void only_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError(join(path, it.key()), "unknown key");
    }
}

inline double get_number(const json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError(path, "expected a number");
    return j.get<double>();
}

inline int get_int(const json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
    return j.get<int>();
}

inline std::string get_string(const json& j, const std::string& path) {
    if (!j.is_string()) throw ConfigError(path, "expected a string");
    return j.get<std::string>();
}

inline std::vector<double> get_numbers(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_number(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

template <class T, class Fn>
void optional(const json& j, const std::string& path, const char* key, T& target, Fn read) {
    if (j.contains(key)) target = read(j.at(key), join(path, key));
}

inline double positive(double v, const std::string& path) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(path, "must be positive");
    return v;
}

template <class Parse>
auto parse_enum(const json& j, const std::string& path, Parse parse) {
    const std::string s = get_string(j, path);
    try {
        return parse(s);
    } catch (const InvalidConfiguration& e) {
        throw ConfigError(path, e.what());
    }
}

inline GridConfig parse_grid(const json& j, const std::string& path) {
    only_keys(j, path, {"n_points", "length", "method"});
    GridConfig g;
    optional(j, path, "n_points", g.n_points, get_int);
    optional(j, path, "length", g.length, get_number);
    if (j.contains("method")) g.method = parse_enum(j.at("method"), join(path, "method"), parse_diff_method);
    if (g.n_points < 2) throw ConfigError(join(path, "n_points"), "must be at least 2");
    positive(g.length, join(path, "length"));
    return g;
}

inline PotentialSpec parse_potential(const json& j, const std::string& path) {
    only_keys(j, path, {"kind", "amplitude", "mode", "values"});
    PotentialSpec p;
    const std::string kind = j.contains("kind") ? get_string(j.at("kind"), join(path, "kind")) : "zero";
    if (kind == "zero") {
        p.kind = PotentialSpec::Kind::zero;
    } else if (kind == "cosine") {
        p.kind = PotentialSpec::Kind::cosine;
    } else if (kind == "table") {
        p.kind = PotentialSpec::Kind::table;
    } else {
        throw ConfigError(join(path, "kind"), "expected zero, cosine or table");
    }
    optional(j, path, "amplitude", p.amplitude, get_number);
    optional(j, path, "mode", p.mode, get_int);
    optional(j, path, "values", p.values, get_numbers);
    if (p.kind == PotentialSpec::Kind::table && p.values.empty()) throw ConfigError(join(path, "values"), "required");
    return p;
}

inline DensitySpec parse_density(const json& j, const std::string& path) {
    only_keys(j, path, {"kind", "mean", "amplitude", "mode", "values"});
    DensitySpec d;
    const std::string kind = j.contains("kind") ? get_string(j.at("kind"), join(path, "kind")) : "cosine";
    if (kind == "constant") {
        d.kind = DensitySpec::Kind::constant;
    } else if (kind == "cosine") {
        d.kind = DensitySpec::Kind::cosine;
    } else if (kind == "table") {
        d.kind = DensitySpec::Kind::table;
    } else {
        throw ConfigError(join(path, "kind"), "expected constant, cosine or table");
    }
    optional(j, path, "mean", d.mean, get_number);
    optional(j, path, "amplitude", d.amplitude, get_number);
    optional(j, path, "mode", d.mode, get_int);
    optional(j, path, "values", d.values, get_numbers);
    if (d.kind == DensitySpec::Kind::cosine && !(std::abs(d.amplitude) < 1.0)) {
        throw ConfigError(join(path, "amplitude"), "must satisfy |amplitude| < 1 for a positive density");
    }
    if (d.kind == DensitySpec::Kind::table && d.values.empty()) throw ConfigError(join(path, "values"), "required");
    return d;
}

inline InitialStateSpec parse_initial(const json& j, const std::string& path) {
    only_keys(j, path, {"kind", "density", "mixture_weight", "max_mode"});
    InitialStateSpec s;
    const std::string kind = j.contains("kind") ? get_string(j.at("kind"), join(path, "kind")) : "equilibrium";
    if (kind == "equilibrium") {
        s.kind = InitialStateSpec::Kind::equilibrium;
    } else if (kind == "ill-prepared") {
        s.kind = InitialStateSpec::Kind::ill_prepared;
    } else {
        throw ConfigError(join(path, "kind"), "expected equilibrium or ill-prepared");
    }
    if (j.contains("density")) s.density = parse_density(j.at("density"), join(path, "density"));
    optional(j, path, "mixture_weight", s.mixture_weight, get_number);
    optional(j, path, "max_mode", s.max_mode, get_int);
    if (!(s.mixture_weight >= 0.0 && s.mixture_weight < 1.0)) {
        throw ConfigError(join(path, "mixture_weight"), "must lie in [0, 1)");
    }
    if (s.max_mode < 0) throw ConfigError(join(path, "max_mode"), "must be nonnegative");
    return s;
}

inline SolverConfig parse_solver(const json& j, const std::string& path) {
    only_keys(j, path,
              {"optimizer", "tolerance", "max_iterations", "propagator", "cn_substeps", "quadrature",
               "positivity_floor", "reference_substep", "reference_resolution"});
    SolverConfig s;
    if (j.contains("optimizer")) s.optimizer = parse_enum(j.at("optimizer"), join(path, "optimizer"), parse_optimizer);
    if (j.contains("propagator")) {
        s.propagator = parse_enum(j.at("propagator"), join(path, "propagator"), parse_propagator);
    }
    if (j.contains("quadrature")) {
        s.quadrature = parse_enum(j.at("quadrature"), join(path, "quadrature"), parse_source_quadrature);
    }
    optional(j, path, "tolerance", s.tolerance, get_number);
    optional(j, path, "max_iterations", s.max_iterations, get_int);
    optional(j, path, "cn_substeps", s.cn_substeps, get_int);
    optional(j, path, "positivity_floor", s.positivity_floor, get_number);
    optional(j, path, "reference_substep", s.reference_substep, get_number);
    optional(j, path, "reference_resolution", s.reference_resolution, get_number);
    positive(s.tolerance, join(path, "tolerance"));
    if (s.max_iterations < 1) throw ConfigError(join(path, "max_iterations"), "must be at least 1");
    if (s.cn_substeps < 1) throw ConfigError(join(path, "cn_substeps"), "must be at least 1");
    positive(s.reference_resolution, join(path, "reference_resolution"));
    return s;
}

inline SweepConfig parse_sweep(const json& j, const std::string& path) {
    only_keys(j, path, {"epsilons", "dts", "metrics", "workers"});
    SweepConfig s;
    optional(j, path, "epsilons", s.epsilons, get_numbers);
    optional(j, path, "dts", s.dts, get_numbers);
    optional(j, path, "workers", s.workers, get_int);
    if (j.contains("metrics")) {
        const json& m = j.at("metrics");
        if (!m.is_array()) throw ConfigError(join(path, "metrics"), "expected an array of strings");
        s.metrics.clear();
        for (std::size_t i = 0; i < m.size(); ++i) {
            const std::string p = join(path, "metrics") + "[" + std::to_string(i) + "]";
            std::string name = get_string(m[i], p);
            if (name != "l1_density" && name != "e2_operator") throw ConfigError(p, "expected l1_density or e2_operator");
            s.metrics.push_back(std::move(name));
        }
    }
    for (std::size_t i = 0; i < s.epsilons.size(); ++i) {
        positive(s.epsilons[i], join(path, "epsilons") + "[" + std::to_string(i) + "]");
    }
    for (std::size_t i = 0; i < s.dts.size(); ++i) positive(s.dts[i], join(path, "dts") + "[" + std::to_string(i) + "]");
    return s;
}

inline LemmaConfig parse_lemma(const json& j, const std::string& path) {
    only_keys(j, path, {"epsilons", "gaps", "start"});
    LemmaConfig l;
    optional(j, path, "epsilons", l.epsilons, get_numbers);
    optional(j, path, "gaps", l.gaps, get_numbers);
    optional(j, path, "start", l.start, get_number);
    if (l.epsilons.empty()) throw ConfigError(join(path, "epsilons"), "must not be empty");
    if (l.gaps.empty()) throw ConfigError(join(path, "gaps"), "must not be empty");
    for (double e : l.epsilons) positive(e, join(path, "epsilons"));
    for (double g : l.gaps) positive(g, join(path, "gaps"));
    if (!(l.start >= 0.0)) throw ConfigError(join(path, "start"), "must be nonnegative");
    return l;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    using namespace detail;
    only_keys(j, "",
              {"schema_version", "name", "grid", "potential", "temperature", "epsilon", "dt", "t_final", "initial",
               "solver", "sweep", "lemma", "output", "seed"});
    if (!j.contains("schema_version")) throw ConfigError("schema_version", "required");
    RunConfig c;
    c.schema_version = get_int(j.at("schema_version"), "schema_version");
    if (c.schema_version != kSchemaVersion) {
        throw ConfigError("schema_version", "unsupported version " + std::to_string(c.schema_version) + " (expected " +
                                                std::to_string(kSchemaVersion) + ")");
    }
    optional(j, "", "name", c.name, get_string);
    if (j.contains("grid")) c.grid = parse_grid(j.at("grid"), "grid");
    if (j.contains("potential")) c.potential = parse_potential(j.at("potential"), "potential");
    optional(j, "", "temperature", c.temperature, get_number);
    optional(j, "", "epsilon", c.epsilon, get_number);
    optional(j, "", "dt", c.dt, get_number);
    optional(j, "", "t_final", c.t_final, get_number);
    if (j.contains("initial")) c.initial = parse_initial(j.at("initial"), "initial");
    if (j.contains("solver")) c.solver = parse_solver(j.at("solver"), "solver");
    if (j.contains("sweep")) c.sweep = parse_sweep(j.at("sweep"), "sweep");
    if (j.contains("lemma")) c.lemma = parse_lemma(j.at("lemma"), "lemma");
    if (j.contains("output")) {
        only_keys(j.at("output"), "output", {"directory"});
        optional(j.at("output"), "output", "directory", c.output.directory, get_string);
    }
    if (j.contains("seed")) {
        const nlohmann::json& s = j.at("seed");
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
            throw ConfigError("seed", "expected a nonnegative 64-bit integer");
        }
        c.seed = s.get<std::uint64_t>();
    }
    positive(c.temperature, "temperature");
    positive(c.epsilon, "epsilon");
    positive(c.dt, "dt");
    if (!(c.t_final >= 0.0) || !std::isfinite(c.t_final)) throw ConfigError("t_final", "must be nonnegative");
    const auto n = static_cast<std::size_t>(c.grid.n_points);
    if (c.potential.kind == PotentialSpec::Kind::table && c.potential.values.size() != n) {
        throw ConfigError("potential.values", "needs one value per grid node");
    }
    if (c.initial.density.kind == DensitySpec::Kind::table && c.initial.density.values.size() != n) {
        throw ConfigError("initial.density.values", "needs one value per grid node");
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("<file>", std::string("malformed JSON in '") + path + "': " + e.what());
    }
    return parse_config(j);
}

// Output directory, overridden by the environment.
inline std::string output_directory(const RunConfig& c) {
    if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') return env;
    return c.output.directory;
}

// --------------------------------------------------------------- builders

inline Eigen::VectorXd build_potential(const PotentialSpec& p, const GridSpec& g) {
    const Eigen::VectorXd x = g.nodes();
    switch (p.kind) {
        case PotentialSpec::Kind::zero:
            return Eigen::VectorXd::Zero(g.n_points);
        case PotentialSpec::Kind::cosine:
            return p.amplitude * (2.0 * std::numbers::pi * p.mode / g.length * x.array()).cos();
        case PotentialSpec::Kind::table:
            return Eigen::Map<const Eigen::VectorXd>(p.values.data(), static_cast<Eigen::Index>(p.values.size()));
    }
    return Eigen::VectorXd::Zero(g.n_points);
}

inline Eigen::VectorXd build_density(const DensitySpec& d, const GridSpec& g) {
    const double mean = d.mean > 0.0 ? d.mean : 1.0 / g.length;
    const Eigen::VectorXd x = g.nodes();
    Eigen::VectorXd n;
    switch (d.kind) {
        case DensitySpec::Kind::constant:
            n = Eigen::VectorXd::Constant(g.n_points, mean);
            break;
        case DensitySpec::Kind::cosine:
            n = mean * (1.0 + d.amplitude * (2.0 * std::numbers::pi * d.mode / g.length * x.array()).cos());
            break;
        case DensitySpec::Kind::table:
            n = Eigen::Map<const Eigen::VectorXd>(d.values.data(), static_cast<Eigen::Index>(d.values.size()));
            break;
    }
    if (n.minCoeff() <= 0.0) throw ConfigError("initial.density", "density must be positive at every node");
    return n;
}

inline PhysicalSetup build_setup(const RunConfig& c) {
    const GridSpec g = build_grid(c.grid.n_points, c.grid.length);
    return make_setup(g, build_potential(c.potential, g), c.temperature, c.grid.method);
}

// Ill-prepared state: (1 - w) theta[n] + w h |psi><psi| mass, psi a random
// normalized combination of Fourier modes |k| <= max_mode drawn from mt19937_64(seed).
inline CMatrix ill_prepared_state(const PhysicalSetup& setup, const Eigen::VectorXd& n, double weight, int max_mode,
                                  std::uint64_t seed) {
    const double h = setup.spacing();
    const CMatrix theta = equilibrium(n, setup.h(), setup.temperature, h).op.matrix;
    const double mass = h * n.sum();
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::VectorXd x = setup.grid.nodes();
    const int kmax = std::min(max_mode, detail::highest_resolved_mode(setup.grid.n_points));
    Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(setup.grid.n_points);
    for (int k = -kmax; k <= kmax; ++k) {
        const Complex c(normal(gen), normal(gen));
        for (Eigen::Index i = 0; i < psi.size(); ++i) {
            psi(i) += c * std::polar(1.0, 2.0 * std::numbers::pi * k * x(i) / setup.grid.length);
        }
    }
    psi.normalize();
    return (1.0 - weight) * theta + (weight * mass) * (psi * psi.adjoint());
}

inline CMatrix build_initial_state(const RunConfig& c, const PhysicalSetup& setup) {
    const Eigen::VectorXd n = build_density(c.initial.density, setup.grid);
    if (c.initial.kind == InitialStateSpec::Kind::equilibrium) {
        return equilibrium(n, setup.h(), setup.temperature, setup.spacing()).op.matrix;
    }
    return ill_prepared_state(setup, n, c.initial.mixture_weight, c.initial.max_mode, c.seed);
}

inline ApOptions ap_options(const RunConfig& c) {
    ApOptions o;
    o.quadrature = c.solver.quadrature;
    o.propagator = c.solver.propagator;
    o.cn_substeps = c.solver.cn_substeps;
    o.positivity_floor = c.solver.positivity_floor;
    o.step.optimizer.backend = c.solver.optimizer;
    o.step.optimizer.tolerance = c.solver.tolerance;
    o.step.optimizer.max_iterations = c.solver.max_iterations;
    return o;
}

inline SplitOptions split_options(const RunConfig& c, double epsilon, double sample_dt) {
    SplitOptions o;
    o.substep = c.solver.reference_substep > 0.0
                    ? c.solver.reference_substep
                    : std::min(epsilon * epsilon, sample_dt) / c.solver.reference_resolution;
    return o;
}

}  // namespace qlbgk
