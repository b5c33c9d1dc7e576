// qdd_step.hpp: one implicit step of the modified quantum drift-diffusion equation,
//
//   n_next - n_prev + m xi D(n_prev D A[n_next]) = f,
//
// obtained as the minimizer of the density-balance functional J. The mobility m
// comes from the current of a relaxed equilibrium: with H0 = -Laplacian and
// j = 2 Im(conj(psi) grad psi), j[i[H, theta[n]]] = -2 n grad A[n].
#pragma once

#include "qlbgk/equilibrium.hpp"
#include "qlbgk/errors.hpp"
#include "qlbgk/functional.hpp"
#include "qlbgk/grid.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace qlbgk {

inline constexpr double kMobility = 2.0;

struct QddStepInput {
    Eigen::VectorXd n_prev;
    Eigen::VectorXd source;  // zero-mean; empty means zero
    double xi{0.0};
    const Hamiltonian* hamiltonian{nullptr};
    const DerivativeOperator* derivative{nullptr};
    double temperature{1.0};
    double spacing{1.0};

    void validate() const {
        if (hamiltonian == nullptr || derivative == nullptr) throw InvalidConfiguration("qdd step: missing operators");
        if (n_prev.size() != hamiltonian->dim()) throw InvalidConfiguration("qdd step: size mismatch");
        if (!n_prev.allFinite() || n_prev.minCoeff() <= 0.0) {
            throw InvalidInput("qdd step: previous density must be positive");
        }
        if (!(xi >= 0.0) || !std::isfinite(xi)) throw InvalidInput("qdd step: xi must be nonnegative");
        if (source.size() != 0) {
            if (source.size() != n_prev.size()) throw InvalidConfiguration("qdd step: source size mismatch");
            const double total = spacing * source.sum();
            const double l1 = spacing * source.cwiseAbs().sum();
            if (std::abs(total) > 1e-12 * l1 + 1e-15 * spacing * n_prev.sum()) {
                throw InvalidInput("qdd step: source term has nonzero mean");
            }
        }
    }

    DensityBalanceProblem problem() const {
        return DensityBalanceProblem{hamiltonian, derivative, spacing, temperature, n_prev, source,
                                     kMobility * xi};
    }
};

struct QddStepOptions {
    OptimizerOptions optimizer{OptimizerBackend::hybrid, 1e-10, 500, 1e-3, 1e-4};
};

struct QddStepResult {
    Eigen::VectorXd a_next;
    Eigen::VectorXd n_next;
    QuantumMaxwellian theta_next;
    double residual{0.0};
    int iterations{0};
};

inline double evaluate_j(const Eigen::VectorXd& a, const QddStepInput& in) {
    in.validate();
    return DensityBalanceFunctional(in.problem()).value(a);
}

inline Eigen::VectorXd gradient_j(const Eigen::VectorXd& a, const QddStepInput& in) {
    in.validate();
    return DensityBalanceFunctional(in.problem()).gradient(a);
}

inline QddStepResult solve_step(const QddStepInput& in, const QddStepOptions& opts = {},
                                const Eigen::VectorXd* warm_start = nullptr) {
    in.validate();
    DensityBalanceFunctional j(in.problem());
    Eigen::VectorXd a0 = (warm_start != nullptr && warm_start->size() == in.n_prev.size())
                             ? *warm_start
                             : initial_chemical_potential(in.n_prev, *in.hamiltonian, in.temperature, in.spacing);
    MinimizeResult r = minimize(j, std::move(a0), opts.optimizer, 1.0);
    QddStepResult out;
    out.theta_next = detail::to_maxwellian(r.at.thermal, r.a, in.spacing);
    out.n_next = out.theta_next.density();
    out.a_next = std::move(r.a);
    out.residual = r.residual;
    out.iterations = r.iterations;
    return out;
}

}  // namespace qlbgk
