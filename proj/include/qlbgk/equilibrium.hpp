// equilibrium.hpp: quantum free energy, quantum Maxwellians and the chemical-potential solver.
#pragma once

#include "qlbgk/errors.hpp"
#include "qlbgk/functional.hpp"
#include "qlbgk/grid.hpp"
#include "qlbgk/operators.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace qlbgk {

// theta[A] = exp(-(H + A)/T_e), stored with the potential that generated it.
struct QuantumMaxwellian {
    DensityOperator op;
    Eigen::VectorXd potential;
    double temperature{1.0};
    Eigen::VectorXd levels;  // spectrum of H + diag(A), ascending

    Eigen::VectorXd density() const { return op.matrix.diagonal().real() / op.spacing; }
    // Smallest eigenvalue of theta; strictly positive.
    double min_eigenvalue() const { return std::exp(-levels(levels.size() - 1) / temperature); }
};

namespace detail {

inline QuantumMaxwellian to_maxwellian(const ThermalOperator& th, const Eigen::VectorXd& a, double spacing) {
    return QuantumMaxwellian{DensityOperator{th.matrix.cast<Complex>(), spacing}, a, th.temperature, th.levels};
}

}  // namespace detail

inline QuantumMaxwellian maxwellian_from_potential(const Eigen::VectorXd& a, const Hamiltonian& h, double t_e,
                                                   double spacing) {
    return detail::to_maxwellian(thermal_operator(h, a, t_e), a, spacing);
}

// F(sigma) = T_e Tr(sigma log sigma - sigma) + Tr(H sigma), with 0 log 0 = 0.
inline double free_energy(const CMatrix& sigma, const Hamiltonian& h, double t_e) {
    if (!(t_e > 0.0)) throw InvalidInput("free_energy: temperature must be positive");
    if (sigma.rows() != h.dim()) throw InvalidConfiguration("free_energy: size mismatch");
    require_hermitian(sigma, "free_energy");
    Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitize(sigma), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalFailure("free_energy: eigensolver failed");
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double tr = lam.sum();
    if (lam(0) < -1e-10 * std::abs(tr)) {
        throw InvalidState("free_energy: operator has negative eigenvalue " + std::to_string(lam(0)));
    }
    double entropy = 0.0;
    for (Eigen::Index p = 0; p < lam.size(); ++p) {
        const double l = lam(p);
        if (l <= 0.0) continue;
        entropy += l * std::log(std::max(l, 1e-300)) - l;
    }
    const double energy = (h.matrix().cast<Complex>() * sigma).trace().real();
    return t_e * entropy + energy;
}

struct ChemicalPotentialOptions {
    OptimizerOptions optimizer{OptimizerBackend::newton, 1e-10, 200, 1e-3, 1e-4};
};

struct ChemicalPotentialResult {
    Eigen::VectorXd potential;
    QuantumMaxwellian maxwellian;
    double residual{0.0};  // || density(theta) - n ||_1 (absolute)
    int iterations{0};
};

// Closed form for H = 0 shifted so that the total mass is right for the actual H.
inline Eigen::VectorXd initial_chemical_potential(const Eigen::VectorXd& n_target, const Hamiltonian& h, double t_e,
                                                  double spacing) {
    Eigen::VectorXd a = -t_e * (spacing * n_target).array().log();
    const double mass = spacing * n_target.sum();
    // Tr exp(-(H + a)/T), with the spectrum centered at its lowest level.
    Eigen::MatrixXd m = h.matrix();
    m.diagonal() += a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    const Eigen::VectorXd& lev = es.eigenvalues();
    const double lo = lev(0);
    const double z = (-(lev.array() - lo) / t_e).exp().sum();
    // Tr exp(-(H + a + c)/T) = mass  =>  c = T log(Tr exp(-(H + a)/T) / mass)
    const double shift = -lo + t_e * (std::log(z) - std::log(mass));
    return a.array() + shift;
}

// Solve density(theta[A]) = n_target by minimizing the dual functional
// G(A) = h sum n A + T_e Tr exp(-(H + A)/T_e).
inline ChemicalPotentialResult chemical_potential(const Eigen::VectorXd& n_target, const Hamiltonian& h, double t_e,
                                                  double spacing, const ChemicalPotentialOptions& opts = {},
                                                  const Eigen::VectorXd* warm_start = nullptr) {
    if (n_target.size() != h.dim()) throw InvalidConfiguration("chemical_potential: size mismatch");
    if (!n_target.allFinite() || n_target.minCoeff() <= 0.0) {
        throw InvalidInput("chemical_potential: target density must be positive and finite");
    }
    if (!(t_e > 0.0)) throw InvalidInput("chemical_potential: temperature must be positive");
    DensityBalanceFunctional g(DensityBalanceProblem{&h, nullptr, spacing, t_e, n_target, {}, 0.0});
    Eigen::VectorXd a0 = (warm_start != nullptr && warm_start->size() == n_target.size())
                             ? *warm_start
                             : initial_chemical_potential(n_target, h, t_e, spacing);
    const double scale = spacing * n_target.sum();
    MinimizeResult r = minimize(g, std::move(a0), opts.optimizer, scale);
    ChemicalPotentialResult out;
    out.maxwellian = detail::to_maxwellian(r.at.thermal, r.a, spacing);
    out.potential = std::move(r.a);
    out.residual = r.residual;
    out.iterations = r.iterations;
    return out;
}

// The map n -> theta[n].
inline QuantumMaxwellian equilibrium(const Eigen::VectorXd& n_target, const Hamiltonian& h, double t_e, double spacing,
                                     const ChemicalPotentialOptions& opts = {}) {
    return chemical_potential(n_target, h, t_e, spacing, opts).maxwellian;
}

}  // namespace qlbgk
