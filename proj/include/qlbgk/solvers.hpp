// solvers.hpp: asymptotic-preserving time stepping for the quantum Liouville-BGK
// equation, the split-step reference solver, the QDD limit solver and error metrics.
//
// The model is
//   i eps d/dt rho = [H, rho] + (i/eps) (theta[n[rho]] - rho),
// i.e.  d/dt rho = -(i/eps) [H, rho] + (theta - rho)/eps^2.
#pragma once

#include "qlbgk/equilibrium.hpp"
#include "qlbgk/errors.hpp"
#include "qlbgk/grid.hpp"
#include "qlbgk/kernels.hpp"
#include "qlbgk/operators.hpp"
#include "qlbgk/qdd_step.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace qlbgk {

// Everything that is fixed for a run: grid, operators, temperature.
struct PhysicalSetup {
    GridSpec grid;
    DerivativeOperator derivative;
    HamiltonianSet hamiltonians;
    double temperature{1.0};

    double spacing() const { return grid.spacing; }
    const Hamiltonian& h() const { return hamiltonians.h; }
    const Hamiltonian& h0() const { return hamiltonians.h0; }
};

inline PhysicalSetup make_setup(const GridSpec& grid, const Eigen::VectorXd& potential, double temperature,
                                DiffMethod method = DiffMethod::spectral) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw InvalidConfiguration("temperature must be positive");
    return PhysicalSetup{grid, build_derivative(grid, method), build_hamiltonians(grid, potential, method), temperature};
}

// Sampled solution: densities and density operators at increasing times.
struct Trajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> densities;
    std::vector<CMatrix> operators;
    double spacing{1.0};
    double substep{0.0};  // internal step of the producing solver (reference solver only)

    std::size_t size() const { return times.size(); }

    void push(double t, Eigen::VectorXd n, CMatrix rho) {
        times.push_back(t);
        densities.push_back(std::move(n));
        operators.push_back(std::move(rho));
    }

    // Index of the sample at time t; throws when no sample lies within tol.
    std::size_t index_of(double t, double tol = 1e-9) const {
        std::size_t best = 0;
        double gap = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < times.size(); ++i) {
            const double g = std::abs(times[i] - t);
            if (g < gap) {
                gap = g;
                best = i;
            }
        }
        if (!(gap <= tol * std::max(1.0, std::abs(t)))) {
            throw InvalidInput("trajectory has no sample at t = " + std::to_string(t));
        }
        return best;
    }
};

// ------------------------------------------------------------------ AP scheme

enum class PropagatorBackend { exact, crank_nicolson };

inline PropagatorBackend parse_propagator(const std::string& s) {
    if (s == "exact") return PropagatorBackend::exact;
    if (s == "crank-nicolson" || s == "crank_nicolson") return PropagatorBackend::crank_nicolson;
    throw InvalidConfiguration("unknown propagator backend '" + s + "'");
}

// How the damped free-transport source is integrated over a step.
//   midpoint: eps^2 (1 - e^{-x}) f(a_eps), f sampled at the weighted mean time a_eps
//   exact:    the integral of e^{-r/eps^2} f(r) over [0, dt], done in the eigenbasis of H
enum class SourceQuadrature { midpoint, exact };

inline SourceQuadrature parse_source_quadrature(const std::string& s) {
    if (s == "midpoint") return SourceQuadrature::midpoint;
    if (s == "exact") return SourceQuadrature::exact;
    throw InvalidConfiguration("unknown source quadrature '" + s + "'");
}

struct ApOptions {
    SourceQuadrature quadrature{SourceQuadrature::midpoint};
    PropagatorBackend propagator{PropagatorBackend::exact};
    int cn_substeps{1};
    QddStepOptions step;
    double positivity_floor{1e-8};  // relative to the trace
    bool fail_on_positivity{false};
    bool diagnostics{true};
};

struct SchemeState {
    int step_index{0};
    double time{0.0};
    Eigen::VectorXd density;    // n_n
    CMatrix rho;                // rho_n
    Eigen::VectorXd potential;  // A[n_n]; warm start for the next solve (may be empty)
};

struct StepRecord {
    int step{0};
    double time{0.0};
    double mass{0.0};            // Tr rho_n
    double density_mass{0.0};    // h sum n_n
    double min_eigenvalue{0.0};
    double hermiticity_residual{0.0};  // before symmetrization
    double free_energy{std::numeric_limits<double>::quiet_NaN()};
    double trace_norm{0.0};
    double e2_norm{0.0};
    double equilibrium_current{0.0};   // max |j[theta_n]|
    double el_residual{0.0};
    int iterations{0};
    bool positivity_violation{false};
};

using RunRecord = std::vector<StepRecord>;

class ApSolver {
public:
    ApSolver(const PhysicalSetup& setup, double epsilon, double dt, ApOptions opts = {})
        : setup_(&setup), params_{epsilon, dt}, opts_(std::move(opts)) {
        params_.validate();
        if (opts_.cn_substeps < 1) throw InvalidConfiguration("cn_substeps must be >= 1");
        const double a = a_weighted(epsilon, dt);
        u_mid_ = propagator(a / epsilon);
        u_full_ = propagator(dt / epsilon);
        xi_ = xi(epsilon, dt);
        kappa_ = kappa(epsilon, dt);
        relax_ = relaxation_weight(epsilon, dt);
        damp_ = std::exp(-params_.stiffness());
        commutator_h_ = setup.h().matrix().cast<Complex>();
        if (opts_.quadrature == SourceQuadrature::exact) build_exact_weights();
    }

    const KernelParams& params() const { return params_; }
    double unitarity_residual_full() const { return unitarity_residual(u_full_); }

    // One step of the scheme:
    //   n_{n+1} - n_n + m xi D(n_n D A[n_{n+1}]) = f_n,  f_n = -eps (1 - e^{-x}) div j[U_a rho_n U_a^*]
    //   rho_{n+1} = e^{-x} U rho_n U^* + theta (1 - e^{-x}) - eps kappa [iH, theta]
    SchemeState step(const SchemeState& s, StepRecord* record = nullptr) const {
        const double h = setup_->spacing();
        const double eps = params_.epsilon;

        Eigen::VectorXd source = transport_source(s.rho);
        // Roundoff can leave a tiny mean in D j; it must be a pure divergence.
        source.array() -= source.mean();

        QddStepInput in{s.density, std::move(source), xi_, &setup_->h(), &setup_->derivative, setup_->temperature, h};
        const QddStepResult r = solve_step(in, opts_.step, s.potential.size() ? &s.potential : nullptr);

        const CMatrix& theta = r.theta_next.op.matrix;
        const CMatrix i_comm = Complex(0.0, 1.0) * commutator(commutator_h_, theta);
        CMatrix next = damp_ * conjugate(u_full_, s.rho) + relax_ * theta - (eps * kappa_) * i_comm;

        SchemeState out;
        out.step_index = s.step_index + 1;
        out.time = out.step_index * params_.dt;
        out.density = r.n_next;
        out.potential = r.a_next;
        const double herm = hermiticity_residual(next);
        out.rho = hermitize(next);

        if (record != nullptr) {
            *record = diagnose(out, r.theta_next, herm, r.residual, r.iterations);
        }
        return out;
    }

    StepRecord diagnose(const SchemeState& s, const QuantumMaxwellian& theta, double herm, double residual,
                        int iterations) const {
        StepRecord rec;
        const double h = setup_->spacing();
        rec.step = s.step_index;
        rec.time = s.time;
        rec.mass = s.rho.trace().real();
        rec.density_mass = h * s.density.sum();
        rec.hermiticity_residual = herm;
        rec.el_residual = residual;
        rec.iterations = iterations;
        rec.min_eigenvalue = min_eigenvalue(s.rho);
        rec.positivity_violation = rec.min_eigenvalue < -opts_.positivity_floor * std::abs(rec.mass);
        if (opts_.diagnostics) {
            rec.trace_norm = trace_norm(s.rho);
            rec.e2_norm = e2_norm(s.rho, setup_->h0().matrix());
            rec.equilibrium_current = current(theta.op.matrix, setup_->derivative, h).cwiseAbs().maxCoeff();
            try {
                rec.free_energy = free_energy(s.rho, setup_->h(), setup_->temperature);
            } catch (const InvalidState&) {
                rec.free_energy = std::numeric_limits<double>::quiet_NaN();
            }
        }
        if (rec.positivity_violation && opts_.fail_on_positivity) {
            throw NumericalFailure("AP step " + std::to_string(s.step_index) + ": min eigenvalue " +
                                   std::to_string(rec.min_eigenvalue) + " below positivity floor");
        }
        return rec;
    }

    // f_n, the right-hand side of the density balance.
    Eigen::VectorXd transport_source(const CMatrix& rho) const {
        const double h = setup_->spacing();
        const double eps = params_.epsilon;
        if (opts_.quadrature == SourceQuadrature::midpoint) {
            const CMatrix mid = conjugate(u_mid_, rho);
            return -eps * relax_ * div_current(hermitize(mid), setup_->derivative, h);
        }
        const CMatrix& v = modes_;
        CMatrix avg = v.adjoint() * rho * v;
        avg = avg.cwiseProduct(weights_);
        return -div_current(hermitize(v * avg * v.adjoint()), setup_->derivative, h) / eps;
    }

private:
    // w_pq = int_0^dt e^{-r/eps^2} e^{-i r (l_p - l_q)/eps} dr
    void build_exact_weights() {
        const Hamiltonian& ham = setup_->h();
        const Eigen::Index n = ham.dim();
        const double eps = params_.epsilon;
        const double dt = params_.dt;
        modes_ = ham.eigenvectors().cast<Complex>();
        weights_.resize(n, n);
        for (Eigen::Index q = 0; q < n; ++q) {
            for (Eigen::Index p = 0; p < n; ++p) {
                const Complex z(1.0 / (eps * eps), (ham.eigenvalues()(p) - ham.eigenvalues()(q)) / eps);
                // (1 - e^{-z dt}) / z, with -expm1 for small |z dt|
                const Complex zdt = z * dt;
                Complex num;
                if (std::abs(zdt) < 1e-3) {
                    num = zdt * (1.0 - zdt / 2.0 + zdt * zdt / 6.0 - zdt * zdt * zdt / 24.0);
                } else {
                    num = 1.0 - std::exp(-zdt);
                }
                weights_(p, q) = num / z;
            }
        }
    }

    CMatrix propagator(double t) const {
        if (opts_.propagator == PropagatorBackend::exact) return exact_propagator(setup_->h(), t);
        return crank_nicolson_propagator(setup_->h(), t, opts_.cn_substeps);
    }

    const PhysicalSetup* setup_;
    KernelParams params_;
    ApOptions opts_;
    CMatrix u_mid_, u_full_, commutator_h_;
    CMatrix modes_, weights_;
    double xi_{0.0}, kappa_{0.0}, relax_{0.0}, damp_{1.0};
};

struct ApRunResult {
    SchemeState final_state;
    RunRecord records;
    Trajectory trajectory;  // n_n and rho_n at t_n, including t_0
};

inline int step_count(double t_final, double dt) {
    // floor with a relative guard so that 0.2/0.01 gives 20
    return static_cast<int>(std::floor(t_final / dt * (1.0 + 1e-12) + 1e-9));
}

inline SchemeState initial_state(const PhysicalSetup& setup, const CMatrix& rho0) {
    require_hermitian(rho0, "initial state");
    if (rho0.rows() != setup.grid.n_points) throw InvalidConfiguration("initial state has the wrong size");
    SchemeState s;
    s.rho = hermitize(rho0);
    s.density = density(s.rho, setup.spacing());
    if (s.density.minCoeff() <= 0.0) throw InvalidInput("initial density must be positive");
    return s;
}

inline ApRunResult ap_run(const PhysicalSetup& setup, const CMatrix& rho0, double epsilon, double dt, double t_final,
                          const ApOptions& opts = {}) {
    if (!(t_final >= 0.0)) throw InvalidConfiguration("t_final must be nonnegative");
    ApSolver solver(setup, epsilon, dt, opts);
    ApRunResult out;
    out.trajectory.spacing = setup.spacing();
    SchemeState s = initial_state(setup, rho0);
    out.trajectory.push(0.0, s.density, s.rho);
    const int steps = step_count(t_final, dt);
    out.records.reserve(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        StepRecord rec;
        s = solver.step(s, &rec);
        out.records.push_back(rec);
        out.trajectory.push(s.time, s.density, s.rho);
    }
    out.final_state = std::move(s);
    return out;
}

// --------------------------------------------------------- reference splitting

struct SplitOptions {
    double substep{0.0};       // <= 0: choose min(eps^2, sample_dt) / 50
    double stiffness_safety{0.1};
    ChemicalPotentialOptions equilibrium;
};

struct SplitRunResult {
    Trajectory trajectory;
    std::vector<std::string> warnings;
    long substeps{0};
};

inline double default_reference_substep(double epsilon, double sample_dt) {
    return std::min(epsilon * epsilon, sample_dt) / 50.0;
}

// Strang splitting R(d/2) T(d) R(d/2) where
//   R(tau): rho <- e^{-tau/eps^2} rho + (1 - e^{-tau/eps^2}) theta[n[rho]]  (exact: R preserves n)
//   T(tau): rho <- e^{-i tau H/eps} rho e^{i tau H/eps}                     (exact)
// Output is sampled every sample_dt.
inline SplitRunResult splitstep_run(const PhysicalSetup& setup, const CMatrix& rho0, double epsilon, double t_final,
                                    double sample_dt, SplitOptions opts = {}) {
    if (!(epsilon > 0.0)) throw InvalidConfiguration("epsilon must be positive");
    if (!(sample_dt > 0.0)) throw InvalidConfiguration("sample_dt must be positive");
    SplitRunResult out;
    double sub = opts.substep > 0.0 ? opts.substep : default_reference_substep(epsilon, sample_dt);
    const long per_sample = std::max<long>(1, static_cast<long>(std::ceil(sample_dt / sub - 1e-9)));
    sub = sample_dt / static_cast<double>(per_sample);
    if (sub > opts.stiffness_safety * std::min(epsilon * epsilon, epsilon)) {
        out.warnings.push_back("reference substep " + std::to_string(sub) + " does not resolve eps^2 = " +
                               std::to_string(epsilon * epsilon));
    }
    out.trajectory.spacing = setup.spacing();
    out.trajectory.substep = sub;

    const double h = setup.spacing();
    const CMatrix u = exact_propagator(setup.h(), sub / epsilon);
    const double keep = std::exp(-0.5 * sub / (epsilon * epsilon));
    const double gain = -std::expm1(-0.5 * sub / (epsilon * epsilon));

    CMatrix rho = initial_state(setup, rho0).rho;
    Eigen::VectorXd a;  // warm start
    auto maxwellian = [&](const CMatrix& r) {
        const Eigen::VectorXd n = r.diagonal().real() / h;
        ChemicalPotentialResult cp =
            chemical_potential(n, setup.h(), setup.temperature, h, opts.equilibrium, a.size() ? &a : nullptr);
        a = cp.potential;
        return cp.maxwellian.op.matrix;
    };

    out.trajectory.push(0.0, rho.diagonal().real() / h, rho);
    const int samples = step_count(t_final, sample_dt);
    CMatrix theta = maxwellian(rho);
    for (int k = 1; k <= samples; ++k) {
        for (long s = 0; s < per_sample; ++s) {
            rho = keep * rho + gain * theta;
            rho = conjugate(u, rho);
            theta = maxwellian(rho);
            rho = hermitize(keep * rho + gain * theta);
            ++out.substeps;
        }
        out.trajectory.push(k * sample_dt, rho.diagonal().real() / h, rho);
    }
    return out;
}

// ------------------------------------------------------------- QDD limit

struct QddRunResult {
    Trajectory trajectory;  // n_n and theta[n_n]
    std::vector<double> residuals;
};

// Implicit QDD: n_{n+1} - n_n + m dt D(n_n D A[n_{n+1}]) = 0, rho_n = theta[n_n], m = kMobility.
inline QddRunResult qdd_limit_run(const PhysicalSetup& setup, const Eigen::VectorXd& n0, double dt, double t_final,
                                  const QddStepOptions& opts = {}) {
    if (!(dt > 0.0)) throw InvalidConfiguration("dt must be positive");
    const double h = setup.spacing();
    QddRunResult out;
    out.trajectory.spacing = h;
    ChemicalPotentialResult cp = chemical_potential(n0, setup.h(), setup.temperature, h);
    Eigen::VectorXd n = n0;
    Eigen::VectorXd a = cp.potential;
    out.trajectory.push(0.0, n, cp.maxwellian.op.matrix);
    const int steps = step_count(t_final, dt);
    for (int k = 1; k <= steps; ++k) {
        QddStepInput in{n, {}, dt, &setup.h(), &setup.derivative, setup.temperature, h};
        QddStepResult r = solve_step(in, opts, &a);
        n = r.n_next;
        a = r.a_next;
        out.residuals.push_back(r.residual);
        out.trajectory.push(k * dt, n, r.theta_next.op.matrix);
    }
    return out;
}

// ------------------------------------------------------- expansion residual

struct Sigma1Residual {
    double s{0.0};
    double t{0.0};
    double e2_norm_value{0.0};
    double div_current_l1{0.0};
};

// rho(t) - S_{eps,(t-s)/eps^2}[rho(s)] - theta[n(t)] (1 - e^{-(t-s)/eps^2}) + i eps kappa(t-s) [H, theta[n(t)]]
// evaluated on a resolved reference trajectory.
inline Sigma1Residual sigma1_residual(const PhysicalSetup& setup, const Trajectory& reference, double s, double t,
                                      double epsilon, double resolution = 10.0) {
    if (!(t >= s)) throw InvalidInput("sigma1_residual: need t >= s");
    if (!(epsilon > 0.0)) throw InvalidInput("sigma1_residual: epsilon must be positive");
    const std::size_t is = reference.index_of(s);
    const std::size_t it = reference.index_of(t);
    Sigma1Residual out{s, t, 0.0, 0.0};
    if (it == is) return out;
    const double gap = t - s;
    if (!(reference.substep > 0.0) || reference.substep * resolution > std::min(epsilon * epsilon, gap)) {
        throw InvalidInput("sigma1_residual: reference trajectory is under-resolved");
    }
    const double h = setup.spacing();
    const CMatrix& rho_s = reference.operators[is];
    const CMatrix& rho_t = reference.operators[it];
    const QuantumMaxwellian theta =
        equilibrium(rho_t.diagonal().real() / h, setup.h(), setup.temperature, h);
    const double x = gap / (epsilon * epsilon);
    const CMatrix hc = setup.h().matrix().cast<Complex>();
    const CMatrix sigma1 = rho_t - damped_free_map(rho_s, epsilon, x, setup.h()) -
                           relaxation_weight(epsilon, gap) * theta.op.matrix +
                           Complex(0.0, epsilon * kappa(epsilon, gap)) * commutator(hc, theta.op.matrix);
    const CMatrix herm = hermitize(sigma1);
    out.e2_norm_value = e2_norm(herm, setup.h0().matrix());
    out.div_current_l1 = l1_norm(div_current(herm, setup.derivative, h), h);
    return out;
}

// ------------------------------------------------------------- error metrics

struct ErrorSeries {
    std::vector<double> times;
    std::vector<double> l1_density;
    std::vector<double> e2_operator;

    double max_l1() const { return times.empty() ? 0.0 : *std::max_element(l1_density.begin(), l1_density.end()); }
    double max_e2() const { return times.empty() ? 0.0 : *std::max_element(e2_operator.begin(), e2_operator.end()); }
};

// Compare a against b at every sample time of a (b is matched by nearest time).
inline ErrorSeries error_metrics(const Trajectory& a, const Trajectory& b, const Eigen::MatrixXd& h0) {
    if (std::abs(a.spacing - b.spacing) > 1e-14 * a.spacing) throw InvalidInput("error_metrics: grid mismatch");
    ErrorSeries out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const std::size_t j = b.index_of(a.times[i]);
        if (a.densities[i].size() != b.densities[j].size()) throw InvalidInput("error_metrics: grid mismatch");
        out.times.push_back(a.times[i]);
        out.l1_density.push_back(l1_norm(a.densities[i] - b.densities[j], a.spacing));
        out.e2_operator.push_back(e2_norm(a.operators[i] - b.operators[j], h0));
    }
    return out;
}

// Least-squares slope of log(err) against log(dt).
inline double fitted_order(const std::vector<double>& dts, const std::vector<double>& errors) {
    if (dts.size() != errors.size() || dts.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(dts.size());
    for (std::size_t i = 0; i < dts.size(); ++i) {
        const double x = std::log(dts[i]);
        const double y = std::log(errors[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

}  // namespace qlbgk
