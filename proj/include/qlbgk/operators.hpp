// operators.hpp: density operators, observables, norms and free propagators.
//
// Kernel scaling: a density operator is stored as the matrix rho_ij = h * rho(x_i, x_j),
// so Tr(rho) is the total mass and the local density is diag(rho) / h.
#pragma once

#include "qlbgk/errors.hpp"
#include "qlbgk/grid.hpp"

#include <Eigen/Dense>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <complex>

namespace qlbgk {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;

inline constexpr double kHermitianTolerance = 1e-12;

inline double max_abs(const CMatrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline double hermiticity_residual(const CMatrix& m) { return max_abs(m - m.adjoint()); }

inline CMatrix hermitize(const CMatrix& m) { return 0.5 * (m + m.adjoint()); }

inline void require_hermitian(const CMatrix& m, const char* where) {
    if (m.rows() != m.cols()) throw InvalidState(std::string(where) + ": operator is not square");
    const double res = hermiticity_residual(m);
    if (res > kHermitianTolerance * std::max(max_abs(m), 1e-300) && res > 0.0) {
        throw InvalidState(std::string(where) + ": operator is not Hermitian (residual " + std::to_string(res) + ")");
    }
}

// A Hermitian operator on a grid, in kernel scaling.
struct DensityOperator {
    CMatrix matrix;
    double spacing{1.0};

    double trace() const { return matrix.trace().real(); }
    int dim() const { return static_cast<int>(matrix.rows()); }
};

struct SpectralDecomposition {
    Eigen::VectorXd eigenvalues;  // descending
    CMatrix eigenvectors;         // orthonormal columns
};

inline SpectralDecomposition spectral_decomposition(const CMatrix& sigma) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitize(sigma));
    if (es.info() != Eigen::Success) throw NumericalFailure("spectral_decomposition: eigensolver failed");
    const Eigen::Index n = sigma.rows();
    SpectralDecomposition out{Eigen::VectorXd(n), CMatrix(n, n)};
    for (Eigen::Index p = 0; p < n; ++p) {
        out.eigenvalues(p) = es.eigenvalues()(n - 1 - p);
        out.eigenvectors.col(p) = es.eigenvectors().col(n - 1 - p);
    }
    return out;
}

inline double min_eigenvalue(const CMatrix& sigma) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitize(sigma), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalFailure("min_eigenvalue: eigensolver failed");
    return es.eigenvalues()(0);
}

// ---------------------------------------------------------------- observables

inline Eigen::VectorXd density(const CMatrix& rho, double spacing) {
    require_hermitian(rho, "density");
    return rho.diagonal().real() / spacing;
}

// j_i = (2/h) Im (D rho)_ii, which equals 2 Im sum_p lambda_p conj(psi_p) D psi_p.
inline Eigen::VectorXd current(const CMatrix& rho, const DerivativeOperator& d, double spacing) {
    if (rho.rows() != rho.cols()) throw InvalidState("current: operator is not square");
    const Eigen::Index n = rho.rows();
    if (d.matrix.rows() != n) throw InvalidConfiguration("current: derivative/operator size mismatch");
    Eigen::VectorXd j(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        j(i) = 2.0 * (d.matrix.row(i).cast<Complex>() * rho.col(i)).value().imag() / spacing;
    }
    return j;
}

inline Eigen::VectorXd div_current(const CMatrix& rho, const DerivativeOperator& d, double spacing) {
    return d.matrix * current(rho, d, spacing);
}

inline double l1_norm(const Eigen::VectorXd& v, double spacing) { return spacing * v.cwiseAbs().sum(); }

inline CMatrix commutator(const CMatrix& a, const CMatrix& b) {
    if (a.rows() != a.cols() || a.rows() != b.rows() || b.rows() != b.cols()) {
        throw InvalidConfiguration("commutator: shape mismatch");
    }
    return a * b - b * a;
}

// ---------------------------------------------------------------------- norms

inline double trace_norm(const CMatrix& sigma) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitize(sigma), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalFailure("trace_norm: eigensolver failed");
    return es.eigenvalues().cwiseAbs().sum();
}

// Tr|sigma| + Tr(H0 |sigma| H0) = sum_p |lambda_p| (1 + |H0 psi_p|^2)
inline double e2_norm(const CMatrix& sigma, const Eigen::MatrixXd& h0) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitize(sigma));
    if (es.info() != Eigen::Success) throw NumericalFailure("e2_norm: eigensolver failed");
    const CMatrix w = h0.cast<Complex>() * es.eigenvectors();
    double s = 0.0;
    for (Eigen::Index p = 0; p < sigma.rows(); ++p) {
        s += std::abs(es.eigenvalues()(p)) * (1.0 + w.col(p).squaredNorm());
    }
    return s;
}

// ---------------------------------------------------------------- propagators

inline CMatrix conjugate(const CMatrix& u, const CMatrix& sigma) { return u * sigma * u.adjoint(); }

// e^{-i t H} from the cached eigendecomposition.
inline CMatrix exact_propagator(const Hamiltonian& h, double t) {
    const Eigen::Index n = h.dim();
    const CMatrix v = h.eigenvectors().cast<Complex>();
    Eigen::VectorXcd phase(n);
    for (Eigen::Index p = 0; p < n; ++p) phase(p) = std::polar(1.0, -t * h.eigenvalues()(p));
    return v * phase.asDiagonal() * v.adjoint();
}

// e^{-i t H} sigma e^{i t H}, evaluated in the eigenbasis of H.
inline CMatrix propagate_exact(const CMatrix& sigma, const Hamiltonian& h, double t) {
    const Eigen::Index n = h.dim();
    if (sigma.rows() != n || sigma.cols() != n) throw InvalidConfiguration("propagate_exact: size mismatch");
    if (t == 0.0) return sigma;
    const CMatrix v = h.eigenvectors().cast<Complex>();
    CMatrix s = v.adjoint() * sigma * v;
    for (Eigen::Index q = 0; q < n; ++q) {
        for (Eigen::Index p = 0; p < n; ++p) {
            s(p, q) *= std::polar(1.0, -t * (h.eigenvalues()(p) - h.eigenvalues()(q)));
        }
    }
    return v * s * v.adjoint();
}

// Cayley form [(I + i tau' H/2)^{-1} (I - i tau' H/2)]^substeps, tau' = tau/substeps.
inline CMatrix crank_nicolson_propagator(const Hamiltonian& h, double tau, int substeps = 1) {
    if (substeps < 1) throw InvalidConfiguration("crank_nicolson_propagator: substeps must be >= 1");
    if (!std::isfinite(tau)) throw InvalidConfiguration("crank_nicolson_propagator: non-finite step");
    const Eigen::Index n = h.dim();
    const CMatrix eye = CMatrix::Identity(n, n);
    if (tau == 0.0) return eye;
    const double sub = tau / substeps;
    const CMatrix half = Complex(0.0, 0.5 * sub) * h.matrix().cast<Complex>();
    Eigen::PartialPivLU<CMatrix> lu(eye + half);
    const CMatrix step = lu.solve(eye - half);
    if (!step.allFinite()) throw NumericalFailure("crank_nicolson_propagator: singular solve");
    CMatrix u = step;
    for (int k = 1; k < substeps; ++k) u = step * u;
    return u;
}

inline double unitarity_residual(const CMatrix& u) {
    return max_abs(u.adjoint() * u - CMatrix::Identity(u.rows(), u.cols()));
}

}  // namespace qlbgk
