// kernels.hpp: scalar time kernels of the relaxation dynamics and the damped free evolution.
//
// All kernels depend on x = tau / eps^2. Below x = 1 they are evaluated from
// their Taylor series (the closed forms cancel catastrophically there); above
// they use expm1/exp forms that never overflow.
#pragma once

#include "qlbgk/errors.hpp"
#include "qlbgk/grid.hpp"
#include "qlbgk/operators.hpp"

#include <cmath>
#include <string>

namespace qlbgk {

struct KernelParams {
    double epsilon{1.0};
    double dt{0.0};

    void validate() const {
        if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InvalidConfiguration("epsilon must be positive");
        if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidConfiguration("dt must be positive");
    }
    double stiffness() const { return dt / (epsilon * epsilon); }
};

namespace detail {

inline constexpr double kSeriesCutoff = 1.0;
inline constexpr int kSeriesTerms = 40;

// sum_{m>=start} c(m) x^m / m!  with the alternating sign pattern supplied by c.
template <class Coeff>
double factorial_series(double x, int start, Coeff c) {
    double term = 1.0;  // x^m / m!
    for (int m = 1; m < start; ++m) term *= x / m;
    double sum = 0.0;
    for (int m = start; m < start + kSeriesTerms; ++m) {
        term *= x / m;
        const double add = c(m) * term;
        sum += add;
        if (std::abs(add) <= 1e-18 * std::abs(sum)) break;
    }
    return sum;
}

inline void require_nonnegative(double v, const char* what) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput(std::string(what) + " must be a finite nonnegative number");
}

}  // namespace detail

// 1 - e^{-x} - x e^{-x},  x = tau/eps^2
inline double kappa(double epsilon, double tau) {
    detail::require_nonnegative(tau, "kappa: tau");
    const double x = tau / (epsilon * epsilon);
    if (x < detail::kSeriesCutoff) {
        // sum_{m>=2} (-1)^m (m-1) x^m / m!
        return detail::factorial_series(x, 2, [](int m) { return (m % 2 == 0 ? 1.0 : -1.0) * (m - 1); });
    }
    return -std::expm1(-x) - x * std::exp(-x);
}

// integral_0^dt kappa(r) dr = dt (1 + e^{-x}) - 2 eps^2 (1 - e^{-x})
inline double xi(double epsilon, double dt) {
    detail::require_nonnegative(dt, "xi: dt");
    const double e2 = epsilon * epsilon;
    const double x = dt / e2;
    if (x < detail::kSeriesCutoff) {
        // eps^2 sum_{m>=3} (-1)^{m+1} (m-2) x^m / m!
        return e2 * detail::factorial_series(x, 3, [](int m) { return (m % 2 == 0 ? -1.0 : 1.0) * (m - 2); });
    }
    return dt * (1.0 + std::exp(-x)) + 2.0 * e2 * std::expm1(-x);
}

// Mean of r under the weight e^{-r/eps^2} on [0, dt]:
//   eps^2 - dt / (e^{x} - 1) = eps^2 (e^x - 1 - x) / (e^x - 1).
inline double a_weighted(double epsilon, double dt) {
    detail::require_nonnegative(dt, "a_weighted: dt");
    const double e2 = epsilon * epsilon;
    const double x = dt / e2;
    if (x == 0.0) return 0.0;
    if (x < detail::kSeriesCutoff) {
        const double num = detail::factorial_series(x, 2, [](int) { return 1.0; });
        return e2 * num / std::expm1(x);
    }
    return e2 * (1.0 - x * std::exp(-x) / (-std::expm1(-x)));
}

// 1 - e^{-x}
inline double relaxation_weight(double epsilon, double dt) { return -std::expm1(-dt / (epsilon * epsilon)); }

// S_{eps,tau}(sigma) = e^{-tau} e^{-i eps tau H} sigma e^{i eps tau H}
inline CMatrix damped_free_map(const CMatrix& sigma, double epsilon, double tau, const Hamiltonian& h) {
    detail::require_nonnegative(tau, "damped_free_map: tau");
    require_hermitian(sigma, "damped_free_map");
    return std::exp(-tau) * propagate_exact(sigma, h, epsilon * tau);
}

// Discrete counterpart: e^{-dt/eps^2} U sigma U^*, U the Crank-Nicolson
// approximation of e^{-i dt H/eps} with the given number of substeps.
inline CMatrix discrete_damped_free_map(const CMatrix& sigma, double epsilon, double dt, const Hamiltonian& h,
                                        int substeps = 1) {
    detail::require_nonnegative(dt, "discrete_damped_free_map: dt");
    require_hermitian(sigma, "discrete_damped_free_map");
    if (dt == 0.0) return sigma;
    const CMatrix u = crank_nicolson_propagator(h, dt / epsilon, substeps);
    return std::exp(-dt / (epsilon * epsilon)) * conjugate(u, sigma);
}

}  // namespace qlbgk
