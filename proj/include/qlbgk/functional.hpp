// functional.hpp: the strictly convex density-balance functional and its minimizers.
//
//   J(A) = (xi/2) h sum n_prev (D A)^2 + h sum (n_prev + f) A + T_e Tr exp(-(H + A)/T_e)
//
// With xi = 0 and f = 0 this is the dual of the constrained free-energy
// minimization (its stationary point gives density(theta[A]) = n_prev).
#pragma once

#include "qlbgk/errors.hpp"
#include "qlbgk/grid.hpp"
#include "qlbgk/operators.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace qlbgk {

// exp(-(H + diag(A))/T_e) together with the spectral data needed for derivatives.
struct ThermalOperator {
    Eigen::VectorXd levels;   // eigenvalues of H + diag(A), ascending
    Eigen::MatrixXd modes;    // orthonormal eigenvectors
    Eigen::VectorXd weights;  // exp(-levels / T_e)
    Eigen::MatrixXd matrix;   // modes * diag(weights) * modes^T
    double temperature{1.0};

    double trace() const { return weights.sum(); }
};

inline constexpr double kMaxExponent = 700.0;

inline ThermalOperator thermal_operator(const Hamiltonian& h, const Eigen::VectorXd& a, double t_e) {
    if (!(t_e > 0.0)) throw InvalidInput("temperature must be positive");
    if (a.size() != h.dim()) throw InvalidConfiguration("chemical potential size does not match Hamiltonian");
    if (!a.allFinite()) throw InvalidInput("chemical potential has non-finite entries");
    Eigen::MatrixXd m = h.matrix();
    m.diagonal() += a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw NumericalFailure("thermal_operator: eigendecomposition failed");
    ThermalOperator out;
    out.levels = es.eigenvalues();
    out.modes = es.eigenvectors();
    out.temperature = t_e;
    const double worst = -out.levels(0) / t_e;
    if (worst > kMaxExponent) {
        throw NumericalFailure("thermal_operator: exp overflow at eigenvalue " + std::to_string(out.levels(0)));
    }
    out.weights = (-out.levels / t_e).array().exp();
    out.matrix = out.modes * out.weights.asDiagonal() * out.modes.transpose();
    return out;
}

// Second derivative of T_e Tr exp(-(H + A)/T_e) with respect to A, i.e. minus the
// Frechet derivative of diag(theta), from the divided differences of exp(-x/T_e).
inline Eigen::MatrixXd thermal_hessian(const ThermalOperator& th) {
    const Eigen::Index n = th.levels.size();
    const double t = th.temperature;
    Eigen::MatrixXd k(n, n * n);
    Eigen::VectorXd w(n * n);
    for (Eigen::Index p = 0; p < n; ++p) {
        for (Eigen::Index q = 0; q < n; ++q) {
            const Eigen::Index c = p * n + q;
            k.col(c) = th.modes.col(p).cwiseProduct(th.modes.col(q));
            const double lo = std::min(th.levels(p), th.levels(q));
            const double gap = std::abs(th.levels(p) - th.levels(q));
            const double base = std::exp(-lo / t);
            // -(f(a) - f(b))/(a - b) with f = exp(-x/T), always positive
            w(c) = gap > 0.0 ? -base * std::expm1(-gap / t) / gap : base / t;
        }
    }
    return k * w.asDiagonal() * k.transpose();
}

struct DensityBalanceProblem {
    const Hamiltonian* hamiltonian{nullptr};
    const DerivativeOperator* derivative{nullptr};  // required when xi > 0
    double spacing{1.0};
    double temperature{1.0};
    Eigen::VectorXd n_prev;
    Eigen::VectorXd source;  // empty means zero
    double xi{0.0};

    Eigen::Index dim() const { return n_prev.size(); }

    Eigen::VectorXd rhs_density() const { return source.size() == 0 ? n_prev : Eigen::VectorXd(n_prev + source); }
};

struct FunctionalEvaluation {
    double value{0.0};
    Eigen::VectorXd gradient;
    ThermalOperator thermal;
};

class DensityBalanceFunctional {
public:
    explicit DensityBalanceFunctional(DensityBalanceProblem problem) : p_(std::move(problem)) {
        if (p_.hamiltonian == nullptr) throw InvalidConfiguration("functional: missing Hamiltonian");
        if (p_.n_prev.size() != p_.hamiltonian->dim()) throw InvalidConfiguration("functional: size mismatch");
        if (p_.source.size() != 0 && p_.source.size() != p_.n_prev.size()) {
            throw InvalidConfiguration("functional: source size mismatch");
        }
        if (p_.xi < 0.0) throw InvalidInput("functional: xi must be nonnegative");
        if (p_.xi > 0.0 && p_.derivative == nullptr) throw InvalidConfiguration("functional: xi > 0 needs a derivative");
        rhs_ = p_.rhs_density();
    }

    const DensityBalanceProblem& problem() const { return p_; }

    FunctionalEvaluation evaluate(const Eigen::VectorXd& a) const {
        FunctionalEvaluation ev;
        ev.thermal = thermal_operator(*p_.hamiltonian, a, p_.temperature);
        const double h = p_.spacing;
        ev.value = h * rhs_.dot(a) + p_.temperature * ev.thermal.trace();
        ev.gradient = h * rhs_ - ev.thermal.matrix.diagonal();
        if (p_.xi > 0.0) {
            const Eigen::VectorXd da = p_.derivative->matrix * a;
            const Eigen::VectorXd flux = p_.n_prev.cwiseProduct(da);
            ev.value += 0.5 * p_.xi * h * da.dot(flux);
            ev.gradient += p_.xi * h * (p_.derivative->matrix.transpose() * flux);
        }
        return ev;
    }

    double value(const Eigen::VectorXd& a) const { return evaluate(a).value; }
    Eigen::VectorXd gradient(const Eigen::VectorXd& a) const { return evaluate(a).gradient; }

    Eigen::MatrixXd hessian(const FunctionalEvaluation& ev) const {
        Eigen::MatrixXd hess = thermal_hessian(ev.thermal);
        if (p_.xi > 0.0) {
            const Eigen::MatrixXd& d = p_.derivative->matrix;
            hess += p_.xi * p_.spacing * d.transpose() * p_.n_prev.asDiagonal() * d;
        }
        return hess;
    }

    // L1 residual of the Euler-Lagrange equation in density units:
    // sum_i |grad_i| = h sum_i |n_next - n_prev + xi D(n_prev D A) - f|.
    static double residual(const FunctionalEvaluation& ev) { return ev.gradient.cwiseAbs().sum(); }

private:
    DensityBalanceProblem p_;
    Eigen::VectorXd rhs_;
};

// ------------------------------------------------------------------ minimizer

enum class OptimizerBackend { newton, gradient_descent, hybrid };

inline OptimizerBackend parse_optimizer(const std::string& s) {
    if (s == "newton") return OptimizerBackend::newton;
    if (s == "gradient-descent" || s == "gradient_descent") return OptimizerBackend::gradient_descent;
    if (s == "hybrid") return OptimizerBackend::hybrid;
    throw InvalidConfiguration("unknown optimizer '" + s + "'");
}

struct OptimizerOptions {
    OptimizerBackend backend{OptimizerBackend::newton};
    double tolerance{1e-10};       // on the L1 residual, multiplied by the scale passed to minimize()
    int max_iterations{200};
    double newton_switch{1e-3};    // hybrid: residual below which Newton takes over
    double armijo{1e-4};
};

struct MinimizeResult {
    Eigen::VectorXd a;
    FunctionalEvaluation at;
    double residual{0.0};
    int iterations{0};
    int newton_steps{0};
    int gradient_steps{0};
};

namespace detail {

struct LineSearchOutcome {
    bool accepted{false};
    Eigen::VectorXd a;
    FunctionalEvaluation ev;
};

// Backtracking along dir. Close to the minimizer the decrease in J drops below
// roundoff, so a step that halves the residual is accepted as well.
inline LineSearchOutcome backtrack(const DensityBalanceFunctional& f, const Eigen::VectorXd& a,
                                   const FunctionalEvaluation& cur, const Eigen::VectorXd& dir, double step,
                                   double armijo) {
    const double slope = cur.gradient.dot(dir);
    const double cur_res = DensityBalanceFunctional::residual(cur);
    const double slack = 16.0 * std::numeric_limits<double>::epsilon() * (std::abs(cur.value) + 1.0);
    LineSearchOutcome out;
    for (int k = 0; k < 60; ++k, step *= 0.5) {
        Eigen::VectorXd trial = a + step * dir;
        FunctionalEvaluation ev;
        try {
            ev = f.evaluate(trial);
        } catch (const NumericalFailure&) {
            continue;
        }
        const bool decrease = ev.value <= cur.value + armijo * step * slope + slack;
        const bool better = DensityBalanceFunctional::residual(ev) <= 0.5 * cur_res;
        if (decrease || better) {
            out.accepted = true;
            out.a = std::move(trial);
            out.ev = std::move(ev);
            return out;
        }
    }
    return out;
}

}  // namespace detail

inline MinimizeResult minimize(const DensityBalanceFunctional& f, Eigen::VectorXd a0, const OptimizerOptions& opts,
                               double scale = 1.0) {
    MinimizeResult r;
    r.a = std::move(a0);
    r.at = f.evaluate(r.a);
    r.residual = DensityBalanceFunctional::residual(r.at);
    const double target = opts.tolerance * scale;

    Eigen::VectorXd prev_a, prev_g;
    double bb_step = 0.0;

    while (r.residual > target) {
        if (r.iterations >= opts.max_iterations) {
            throw NonConvergence("density-balance minimization did not converge", r.residual, r.iterations);
        }
        ++r.iterations;

        const bool use_newton = opts.backend == OptimizerBackend::newton ||
                                (opts.backend == OptimizerBackend::hybrid && r.residual < opts.newton_switch * scale);
        detail::LineSearchOutcome ls;
        if (use_newton) {
            const Eigen::MatrixXd hess = f.hessian(r.at);
            Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
            Eigen::VectorXd dir = -ldlt.solve(r.at.gradient);
            if (ldlt.info() == Eigen::Success && dir.allFinite() && r.at.gradient.dot(dir) < 0.0) {
                ls = detail::backtrack(f, r.a, r.at, dir, 1.0, opts.armijo);
                if (ls.accepted) ++r.newton_steps;
            }
        }
        if (!ls.accepted) {
            // Barzilai-Borwein seeded steepest descent.
            double step = bb_step;
            if (!(step > 0.0) || !std::isfinite(step)) {
                step = 1.0 / std::max(r.at.gradient.lpNorm<Eigen::Infinity>(), 1e-12);
                step = std::min(step, 1.0);
            }
            ls = detail::backtrack(f, r.a, r.at, -r.at.gradient, step, opts.armijo);
            if (!ls.accepted) {
                throw NonConvergence("density-balance line search failed", r.residual, r.iterations);
            }
            ++r.gradient_steps;
        }
        prev_a = r.a;
        prev_g = r.at.gradient;
        r.a = std::move(ls.a);
        r.at = std::move(ls.ev);
        r.residual = DensityBalanceFunctional::residual(r.at);

        const Eigen::VectorXd s = r.a - prev_a;
        const Eigen::VectorXd y = r.at.gradient - prev_g;
        const double sy = s.dot(y);
        bb_step = sy > 0.0 ? s.squaredNorm() / sy : 0.0;
    }
    // A constant shift of A rescales theta and leaves D A alone; use it to make
    // Tr theta equal the target mass to rounding.
    const double mass = f.problem().spacing * f.problem().rhs_density().sum();
    const double trace = r.at.thermal.trace();
    if (mass > 0.0 && trace > 0.0 && std::isfinite(trace)) {
        r.a.array() += f.problem().temperature * std::log(trace / mass);
        r.at = f.evaluate(r.a);
        r.residual = DensityBalanceFunctional::residual(r.at);
    }
    return r;
}

}  // namespace qlbgk
