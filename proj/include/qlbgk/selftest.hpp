// selftest.hpp: quick invariant suite behind `qlbgk selftest`.
#pragma once

#include "qlbgk/equilibrium.hpp"
#include "qlbgk/functional.hpp"
#include "qlbgk/grid.hpp"
#include "qlbgk/kernels.hpp"
#include "qlbgk/operators.hpp"
#include "qlbgk/qdd_step.hpp"
#include "qlbgk/solvers.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace qlbgk {

struct CheckResult {
    std::string name;
    bool passed{false};
    double value{0.0};
    double threshold{0.0};
};

inline bool all_passed(const std::vector<CheckResult>& checks) {
    for (const CheckResult& c : checks) {
        if (!c.passed) return false;
    }
    return true;
}

inline void print_checks(std::ostream& out, const std::vector<CheckResult>& checks) {
    char line[200];
    for (const CheckResult& c : checks) {
        std::snprintf(line, sizeof line, "%-4s %-44s %12.3e  (<= %.1e)\n", c.passed ? "PASS" : "FAIL", c.name.c_str(),
                      c.value, c.threshold);
        out << line;
    }
}

// Random PSD operator with unit trace.
inline CMatrix random_density_operator(Eigen::Index n, std::mt19937_64& gen) {
    std::normal_distribution<double> g(0.0, 1.0);
    CMatrix a(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) a(i, j) = Complex(g(gen), g(gen));
    }
    CMatrix s = a * a.adjoint();
    return hermitize(s / s.trace().real());
}

// Smooth positive density with unit mass built from a few random Fourier modes.
inline Eigen::VectorXd random_smooth_density(const GridSpec& grid, std::mt19937_64& gen, int modes = 3,
                                             double amplitude = 0.5) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Eigen::VectorXd x = grid.nodes();
    Eigen::VectorXd n = Eigen::VectorXd::Ones(grid.n_points);
    for (int k = 1; k <= modes; ++k) {
        const double c = amplitude * u(gen) / k, s = amplitude * u(gen) / k;
        const double w = 2.0 * std::numbers::pi * k / grid.length;
        n.array() += c * (w * x.array()).cos() + s * (w * x.array()).sin();
    }
    n = n.cwiseMax(0.05);
    return n / (grid.spacing * n.sum());
}

inline std::vector<CheckResult> run_selftest(std::uint64_t seed = 7) {
    std::vector<CheckResult> out;
    auto check = [&](std::string name, double value, double threshold) {
        out.push_back(CheckResult{std::move(name), value <= threshold, value, threshold});
    };
    std::mt19937_64 gen(seed);
    const GridSpec grid = build_grid(16, 2.0 * std::numbers::pi);
    const PhysicalSetup setup = make_setup(grid, Eigen::VectorXd::Zero(16), 1.0);
    const double h = grid.spacing;
    const Hamiltonian& ham = setup.h();

    const Eigen::VectorXd n = random_smooth_density(grid, gen);
    const ChemicalPotentialResult cp = chemical_potential(n, ham, 1.0, h);
    const CMatrix theta = cp.maxwellian.op.matrix;
    check("equilibrium density constraint (rel L1)", l1_norm(cp.maxwellian.density() - n, h) / l1_norm(n, h), 1e-8);

    const double kmax = std::numbers::pi * grid.n_points / grid.length;
    check("equilibrium carries no current (scaled)",
          current(theta, setup.derivative, h).cwiseAbs().maxCoeff() / (n.maxCoeff() * kmax), 1e-12);

    const CMatrix hc = ham.matrix().cast<Complex>();
    const CMatrix dd = commutator(hc, commutator(hc, theta));
    check("double-commutator current vanishes (rel)",
          l1_norm(div_current(dd, setup.derivative, h), h) / max_abs(dd), 1e-10);

    {
        DensityBalanceFunctional j(DensityBalanceProblem{&ham, &setup.derivative, h, 1.0, n, {}, 0.01});
        const Eigen::VectorXd a = cp.potential;
        const Eigen::VectorXd g = j.gradient(a);
        double worst = 0.0;
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            const double step = 1e-5;
            Eigen::VectorXd ap = a, am = a;
            ap(i) += step;
            am(i) -= step;
            const double fd = (j.value(ap) - j.value(am)) / (2.0 * step);
            worst = std::max(worst, std::abs(fd - g(i)) / std::max(g.cwiseAbs().maxCoeff(), 1e-3));
        }
        check("functional gradient vs finite differences", worst, 1e-6);
    }

    {
        const CMatrix sigma = random_density_operator(16, gen);
        const Eigen::VectorXd ns = density(sigma, h);
        const QuantumMaxwellian th = equilibrium(ns, ham, 1.0, h);
        check("free energy minimal at equilibrium",
              std::max(0.0, free_energy(th.op.matrix, ham, 1.0) - free_energy(sigma, ham, 1.0)), 1e-10);
    }

    {
        using boost::math::quadrature::gauss_kronrod;
        double worst = 0.0;
        for (double eps : {0.05, 1.0, 3.0}) {
            for (double dt : {1e-3, 0.1}) {
                const double e2 = eps * eps;
                auto k = [&](double r) { return kappa(eps, r); };
                const double q = gauss_kronrod<double, 61>::integrate(k, 0.0, dt, 15, 1e-14);
                worst = std::max(worst, std::abs(q - xi(eps, dt)) / std::abs(q));
                const double a = a_weighted(eps, dt);
                auto m = [&](double r) { return (r - a) * std::exp(-r / e2); };
                auto w = [&](double r) { return r * std::exp(-r / e2); };
                const double scale = gauss_kronrod<double, 61>::integrate(w, 0.0, dt, 15, 1e-14);
                worst = std::max(worst, std::abs(gauss_kronrod<double, 61>::integrate(m, 0.0, dt, 15, 1e-14)) / scale);
            }
        }
        check("time kernels vs quadrature", worst, 1e-11);
    }

    check("Crank-Nicolson unitarity", unitarity_residual(crank_nicolson_propagator(ham, 0.3, 3)), 1e-12);

    {
        const ApRunResult r = ap_run(setup, theta, 0.1, 0.01, 0.05);
        double drift = 0.0;
        for (const StepRecord& s : r.records) drift = std::max(drift, std::abs(s.mass - 1.0));
        check("AP scheme mass conservation", drift, 1e-10);
    }

    {
        const Eigen::VectorXd nbar = Eigen::VectorXd::Constant(16, 1.0 / grid.length);
        const CMatrix th = equilibrium(nbar, ham, 1.0, h).op.matrix;
        const ApRunResult r = ap_run(setup, th, 0.3, 0.01, 0.1);
        double drift = 0.0;
        for (const Eigen::VectorXd& d : r.trajectory.densities) drift = std::max(drift, (d - nbar).cwiseAbs().maxCoeff());
        check("AP scheme equilibrium fixed point", drift, 1e-9);
    }

    {
        QddStepInput in{n, {}, 0.01, &ham, &setup.derivative, 1.0, h};
        QddStepOptions newton, descent;
        newton.optimizer.backend = OptimizerBackend::newton;
        descent.optimizer.backend = OptimizerBackend::gradient_descent;
        descent.optimizer.max_iterations = 20000;
        const QddStepResult a = solve_step(in, newton);
        const QddStepResult b = solve_step(in, descent);
        check("Newton and gradient descent agree", (a.n_next - b.n_next).cwiseAbs().maxCoeff() / n.maxCoeff(), 1e-6);
    }
    return out;
}

}  // namespace qlbgk
