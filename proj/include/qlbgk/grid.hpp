// grid.hpp: periodic 1-D grid, derivative/Laplacian matrices, Hamiltonians.
#pragma once

#include "qlbgk/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

namespace qlbgk {

struct GridSpec {
    int n_points{0};
    double length{0.0};
    double spacing{0.0};

    double node(int i) const { return static_cast<double>(i) * spacing; }

    Eigen::VectorXd nodes() const {
        Eigen::VectorXd x(n_points);
        for (int i = 0; i < n_points; ++i) x(i) = node(i);
        return x;
    }

    // Wavenumber of Fourier mode k on this periodic domain.
    double wavenumber(int k) const { return 2.0 * std::numbers::pi * k / length; }
};

inline GridSpec build_grid(int n_points, double length) {
    if (n_points < 2) {
        throw InvalidConfiguration("build_grid: n_points must be >= 2, got " + std::to_string(n_points));
    }
    if (!(length > 0.0) || !std::isfinite(length)) {
        throw InvalidConfiguration("build_grid: length must be positive and finite");
    }
    return GridSpec{n_points, length, length / n_points};
}

enum class DiffMethod { spectral, central_difference };

inline std::string_view to_string(DiffMethod m) {
    return m == DiffMethod::spectral ? "spectral" : "central-difference";
}

inline DiffMethod parse_diff_method(std::string_view s) {
    if (s == "spectral") return DiffMethod::spectral;
    if (s == "central-difference" || s == "central_difference") return DiffMethod::central_difference;
    throw InvalidConfiguration("unknown discretization '" + std::string(s) + "'");
}

struct DerivativeOperator {
    Eigen::MatrixXd matrix;
    DiffMethod method{DiffMethod::spectral};

    Eigen::VectorXd apply(const Eigen::VectorXd& u) const { return matrix * u; }
};

namespace detail {

inline void check_grid(const GridSpec& g) {
    if (g.n_points < 2 || !(g.length > 0.0) ||
        std::abs(g.spacing * g.n_points - g.length) > 1e-12 * g.length) {
        throw InvalidConfiguration("invalid grid");
    }
}

// Highest Fourier mode kept by the derivative; the Nyquist mode of an even
// grid is dropped so the matrix stays real.
inline int highest_resolved_mode(int n) { return (n - 1) / 2; }

}  // namespace detail

inline DerivativeOperator build_derivative(const GridSpec& grid, DiffMethod method = DiffMethod::spectral) {
    detail::check_grid(grid);
    const int n = grid.n_points;
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);

    if (method == DiffMethod::spectral) {
        // D_jl = (1/N) sum_k i k e^{i k (x_j - x_l)} = -(2/N) sum_{k>0} k sin(k (x_j - x_l))
        const int m = detail::highest_resolved_mode(n);
        for (int j = 0; j < n; ++j) {
            for (int l = 0; l < n; ++l) {
                const int dist = ((j - l) % n + n) % n;
                double s = 0.0;
                for (int k = 1; k <= m; ++k) {
                    s += grid.wavenumber(k) * std::sin(2.0 * std::numbers::pi * k * dist / n);
                }
                d(j, l) = -2.0 * s / n;
            }
        }
        d = 0.5 * (d - d.transpose()).eval();
    } else {
        const double c = 0.5 / grid.spacing;
        for (int j = 0; j < n; ++j) {
            d(j, (j + 1) % n) += c;
            d(j, (j + n - 1) % n) -= c;
        }
    }
    return DerivativeOperator{std::move(d), method};
}

// -Laplacian with periodic closure. The spectral version keeps the Nyquist
// multiplier (N/2)^2 (2 pi / L)^2.
inline Eigen::MatrixXd build_negative_laplacian(const GridSpec& grid, DiffMethod method = DiffMethod::spectral) {
    detail::check_grid(grid);
    const int n = grid.n_points;
    Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);

    if (method == DiffMethod::spectral) {
        const int m = detail::highest_resolved_mode(n);
        const bool has_nyquist = (n % 2 == 0);
        for (int j = 0; j < n; ++j) {
            for (int l = 0; l < n; ++l) {
                const int dist = ((j - l) % n + n) % n;
                double s = 0.0;
                for (int k = 1; k <= m; ++k) {
                    const double kk = grid.wavenumber(k);
                    s += 2.0 * kk * kk * std::cos(2.0 * std::numbers::pi * k * dist / n);
                }
                if (has_nyquist) {
                    const double kn = grid.wavenumber(n / 2);
                    s += kn * kn * ((dist % 2 == 0) ? 1.0 : -1.0);
                }
                lap(j, l) = s / n;
            }
        }
        lap = 0.5 * (lap + lap.transpose()).eval();
    } else {
        const double c = 1.0 / (grid.spacing * grid.spacing);
        for (int j = 0; j < n; ++j) {
            lap(j, j) += 2.0 * c;
            lap(j, (j + 1) % n) -= c;
            lap(j, (j + n - 1) % n) -= c;
        }
    }
    return lap;
}

// Real symmetric matrix with its eigendecomposition computed once at
// construction (eigenvalues ascending, orthonormal eigenvector columns).
class Hamiltonian {
public:
    Hamiltonian() = default;

    explicit Hamiltonian(Eigen::MatrixXd m) : matrix_(std::move(m)) {
        if (matrix_.rows() != matrix_.cols() || matrix_.rows() == 0) {
            throw InvalidConfiguration("Hamiltonian: matrix must be square and non-empty");
        }
        if (!matrix_.allFinite()) throw InvalidConfiguration("Hamiltonian: non-finite entries");
        const double scale = std::max(1.0, matrix_.cwiseAbs().maxCoeff());
        if ((matrix_ - matrix_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
            throw InvalidConfiguration("Hamiltonian: matrix is not symmetric");
        }
        matrix_ = 0.5 * (matrix_ + matrix_.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix_);
        if (es.info() != Eigen::Success) throw NumericalFailure("Hamiltonian: eigendecomposition failed");
        eigenvalues_ = es.eigenvalues();
        eigenvectors_ = es.eigenvectors();
    }

    const Eigen::MatrixXd& matrix() const { return matrix_; }
    const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
    const Eigen::MatrixXd& eigenvectors() const { return eigenvectors_; }
    int dim() const { return static_cast<int>(matrix_.rows()); }

private:
    Eigen::MatrixXd matrix_;
    Eigen::VectorXd eigenvalues_;
    Eigen::MatrixXd eigenvectors_;
};

struct HamiltonianSet {
    Hamiltonian h0;             // -Laplacian
    Eigen::VectorXd potential;  // V at the nodes
    Hamiltonian h;              // h0 + diag(V)
};

inline HamiltonianSet build_hamiltonians(const GridSpec& grid, const Eigen::VectorXd& potential,
                                         DiffMethod method = DiffMethod::spectral) {
    detail::check_grid(grid);
    if (potential.size() != grid.n_points) {
        throw InvalidConfiguration("build_hamiltonians: potential has " + std::to_string(potential.size()) +
                                   " entries, grid has " + std::to_string(grid.n_points));
    }
    if (!potential.allFinite()) throw InvalidConfiguration("build_hamiltonians: potential is not finite");
    Eigen::MatrixXd h0 = build_negative_laplacian(grid, method);
    Eigen::MatrixXd h = h0;
    h.diagonal() += potential;
    return HamiltonianSet{Hamiltonian(std::move(h0)), potential, Hamiltonian(std::move(h))};
}

}  // namespace qlbgk
