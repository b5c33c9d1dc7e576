#include "qlbgk/config.hpp"
#include "qlbgk/solvers.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>

using namespace qlbgk;

namespace {

PhysicalSetup small_setup(int n = 16, double amplitude = 0.0) {
    const GridSpec g = build_grid(n, 2 * std::numbers::pi);
    return make_setup(g, amplitude * g.nodes().array().cos().matrix(), 1.0);
}

Eigen::VectorXd cosine_density(const GridSpec& g, double amplitude = 0.5) {
    return (1.0 + amplitude * g.nodes().array().cos()).matrix() / g.length;
}

CMatrix theta_of(const PhysicalSetup& s, const Eigen::VectorXd& n) {
    return equilibrium(n, s.h(), s.temperature, s.spacing()).op.matrix;
}

CMatrix perturbed_state(const PhysicalSetup& s) {
    return ill_prepared_state(s, cosine_density(s.grid), 0.2, 3, 99);
}

}  // namespace

TEST(StepCount, FloorsWithGuard) {
    EXPECT_EQ(step_count(0.2, 0.01), 20);
    EXPECT_EQ(step_count(1.0, 0.1), 10);
    EXPECT_EQ(step_count(0.25, 0.1), 2);
    EXPECT_EQ(step_count(0.0, 0.1), 0);
}

TEST(TrajectoryIndex, FindsSamplesAndRejectsGaps) {
    Trajectory t;
    for (int k = 0; k <= 10; ++k) t.push(0.1 * k, Eigen::VectorXd::Zero(1), CMatrix::Zero(1, 1));
    EXPECT_EQ(t.index_of(0.3), 3u);
    EXPECT_EQ(t.index_of(1.0), 10u);
    EXPECT_THROW(t.index_of(0.35), InvalidInput);
}

TEST(ApScheme, PreservesTraceAndHermiticity) {
    const PhysicalSetup s = small_setup(16, 0.5);
    const ApRunResult r = ap_run(s, perturbed_state(s), 0.3, 0.01, 0.2);
    ASSERT_EQ(r.records.size(), 20u);
    for (const StepRecord& rec : r.records) {
        EXPECT_NEAR(rec.mass, 1.0, 1e-10) << rec.step;
        EXPECT_NEAR(rec.density_mass, 1.0, 1e-10) << rec.step;
        EXPECT_LE(rec.hermiticity_residual, 1e-12) << rec.step;
        EXPECT_LE(rec.el_residual, 1e-9) << rec.step;
    }
    EXPECT_EQ(hermiticity_residual(r.final_state.rho), 0.0);
}

TEST(ApScheme, EquilibriumIsFixedPoint) {
    const PhysicalSetup s = small_setup(16);
    const Eigen::VectorXd nbar = Eigen::VectorXd::Constant(16, 1.0 / s.grid.length);
    const CMatrix theta = theta_of(s, nbar);
    const ApRunResult r = ap_run(s, theta, 0.1, 0.01, 1.0);
    ASSERT_EQ(r.trajectory.size(), 101u);
    double drift = 0.0, op_drift = 0.0;
    for (std::size_t k = 0; k < r.trajectory.size(); ++k) {
        drift = std::max(drift, (r.trajectory.densities[k] - nbar).cwiseAbs().maxCoeff());
        op_drift = std::max(op_drift, max_abs(r.trajectory.operators[k] - theta));
    }
    EXPECT_LE(drift, 1e-9);
    EXPECT_LE(op_drift, 1e-9);
}

TEST(ApScheme, LocalErrorIsSecondOrderAtUnitEpsilon) {
    const PhysicalSetup s = small_setup(16, 0.5);
    const CMatrix rho0 = perturbed_state(s);
    double prev = 0.0;
    for (double dt : {4e-3, 2e-3, 1e-3}) {
        SplitOptions so;
        so.substep = dt / 200.0;
        const SplitRunResult ref = splitstep_run(s, rho0, 1.0, dt, dt, so);
        const ApRunResult ap = ap_run(s, rho0, 1.0, dt, dt);
        const double err = e2_norm(ap.trajectory.operators.back() - ref.trajectory.operators.back(), s.h0().matrix());
        if (prev > 0.0) {
            EXPECT_GT(prev / err, 3.5) << dt;
        }
        prev = err;
    }
}

TEST(ApScheme, SourceQuadraturesAgreeForSmallSteps) {
    const PhysicalSetup s = small_setup(16, 0.5);
    const CMatrix rho0 = perturbed_state(s);
    ApOptions mid, exact;
    exact.quadrature = SourceQuadrature::exact;
    for (double dt : {1e-3, 1e-4}) {
        const ApSolver a(s, 1.0, dt, mid), b(s, 1.0, dt, exact);
        const Eigen::VectorXd fa = a.transport_source(rho0), fb = b.transport_source(rho0);
        EXPECT_LE(l1_norm(fa - fb, s.spacing()), 10.0 * dt * dt * l1_norm(fb, s.spacing())) << dt;
    }
}

TEST(ApScheme, CrankNicolsonBackendTracksExactPropagator) {
    const PhysicalSetup s = small_setup(16, 0.5);
    const CMatrix rho0 = perturbed_state(s);
    ApOptions cn;
    cn.propagator = PropagatorBackend::crank_nicolson;
    cn.cn_substeps = 64;
    const ApRunResult a = ap_run(s, rho0, 1.0, 0.01, 0.05);
    const ApRunResult b = ap_run(s, rho0, 1.0, 0.01, 0.05, cn);
    EXPECT_LE(l1_norm(a.final_state.density - b.final_state.density, s.spacing()), 1e-3);
    ApOptions bad;
    bad.cn_substeps = 0;
    EXPECT_THROW(ApSolver(s, 1.0, 0.01, bad), InvalidConfiguration);
}

TEST(ApScheme, RejectsBadParameters) {
    const PhysicalSetup s = small_setup(8);
    EXPECT_ANY_THROW(ApSolver(s, 0.0, 0.01));
    EXPECT_ANY_THROW(ApSolver(s, 1.0, -0.01));
    EXPECT_THROW(ap_run(s, CMatrix::Identity(7, 7), 1.0, 0.01, 0.1), InvalidConfiguration);
}

TEST(ApScheme, PositivityFailureIsReported) {
    const PhysicalSetup s = small_setup(8);
    CMatrix rho = theta_of(s, Eigen::VectorXd::Constant(8, 1.0 / s.grid.length));
    CMatrix bump = CMatrix::Zero(8, 8);
    bump(1, 2) = Complex(0.0, 0.5);
    bump(2, 1) = Complex(0.0, -0.5);
    rho += bump;
    ApOptions strict;
    strict.fail_on_positivity = true;
    EXPECT_THROW(ap_run(s, rho, 1.0, 1e-3, 1e-3, strict), NumericalFailure);
    const ApRunResult lax = ap_run(s, rho, 1.0, 1e-3, 1e-3);
    EXPECT_TRUE(lax.records.front().positivity_violation);
    EXPECT_TRUE(std::isnan(lax.records.front().free_energy));
}

TEST(SplitStep, ConstantEquilibriumIsStationary) {
    const PhysicalSetup s = small_setup(16);
    const CMatrix theta = theta_of(s, Eigen::VectorXd::Constant(16, 1.0 / s.grid.length));
    const SplitRunResult r = splitstep_run(s, theta, 0.2, 0.1, 0.05);
    EXPECT_LE(max_abs(r.trajectory.operators.back() - theta), 1e-12);
}

TEST(SplitStep, ConservesTraceAndPositivity) {
    const PhysicalSetup s = small_setup(16, 0.5);
    const SplitRunResult r = splitstep_run(s, perturbed_state(s), 0.3, 0.1, 0.02);
    EXPECT_TRUE(r.warnings.empty());
    for (const CMatrix& rho : r.trajectory.operators) {
        EXPECT_NEAR(rho.trace().real(), 1.0, 1e-12);
        EXPECT_GE(min_eigenvalue(rho), -1e-12);
        EXPECT_EQ(hermiticity_residual(rho), 0.0);
    }
}

TEST(SplitStep, SecondOrderSelfConvergence) {
    const PhysicalSetup s = small_setup(16, 0.5);
    const CMatrix rho0 = perturbed_state(s);
    auto final_op = [&](double sub) {
        SplitOptions o;
        o.substep = sub;
        return splitstep_run(s, rho0, 0.5, 0.05, 0.05, o).trajectory.operators.back();
    };
    const CMatrix a = final_op(0.01), b = final_op(0.005), c = final_op(0.0025);
    const double ratio = e2_norm(a - b, s.h0().matrix()) / e2_norm(b - c, s.h0().matrix());
    EXPECT_NEAR(ratio, 4.0, 0.3);
}

TEST(SplitStep, WarnsWhenStiffnessIsUnresolved) {
    const PhysicalSetup s = small_setup(8);
    SplitOptions o;
    o.substep = 0.01;
    const SplitRunResult r = splitstep_run(s, perturbed_state(s), 0.1, 0.01, 0.01, o);
    EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(QddLimit, ConstantDensityIsStationary) {
    const PhysicalSetup s = small_setup(16);
    const Eigen::VectorXd nbar = Eigen::VectorXd::Constant(16, 1.0 / s.grid.length);
    const QddRunResult r = qdd_limit_run(s, nbar, 0.01, 0.1);
    EXPECT_LE((r.trajectory.densities.back() - nbar).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(QddLimit, ConservesMassAndDissipatesFreeEnergy) {
    const PhysicalSetup s = small_setup(16, 0.5);
    const QddRunResult r = qdd_limit_run(s, cosine_density(s.grid), 0.01, 0.1);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < r.trajectory.size(); ++k) {
        EXPECT_NEAR(s.spacing() * r.trajectory.densities[k].sum(), 1.0, 1e-10);
        const double f = free_energy(r.trajectory.operators[k], s.h(), s.temperature);
        EXPECT_LE(f, prev + 1e-12) << k;
        prev = f;
    }
    for (double res : r.residuals) EXPECT_LE(res, 1e-10);
}

TEST(Sigma1, VanishesAtZeroGapAndRequiresResolution) {
    const PhysicalSetup s = small_setup(12, 0.5);
    SplitOptions o;
    o.substep = 1e-4;
    const SplitRunResult ref = splitstep_run(s, perturbed_state(s), 0.3, 0.02, 0.01, o);
    const Sigma1Residual zero = sigma1_residual(s, ref.trajectory, 0.01, 0.01, 0.3);
    EXPECT_EQ(zero.e2_norm_value, 0.0);
    EXPECT_EQ(zero.div_current_l1, 0.0);
    const Sigma1Residual r = sigma1_residual(s, ref.trajectory, 0.01, 0.02, 0.3);
    EXPECT_GT(r.e2_norm_value, 0.0);
    EXPECT_THROW(sigma1_residual(s, ref.trajectory, 0.0, 0.01, 0.01), InvalidInput);
    EXPECT_THROW(sigma1_residual(s, ref.trajectory, 0.02, 0.01, 0.3), InvalidInput);
}

TEST(ErrorMetrics, ZeroForIdenticalAndTriangleInequality) {
    const PhysicalSetup s = small_setup(12, 0.5);
    const CMatrix rho0 = perturbed_state(s);
    const Trajectory a = ap_run(s, rho0, 0.5, 0.02, 0.1).trajectory;
    const Trajectory b = ap_run(s, rho0, 0.5, 0.01, 0.1).trajectory;
    SplitOptions o;
    o.substep = 2e-4;
    const Trajectory c = splitstep_run(s, rho0, 0.5, 0.1, 0.02, o).trajectory;
    const ErrorSeries self = error_metrics(a, a, s.h0().matrix());
    EXPECT_EQ(self.max_l1(), 0.0);
    EXPECT_EQ(self.max_e2(), 0.0);
    const ErrorSeries ab = error_metrics(a, b, s.h0().matrix());
    const ErrorSeries ac = error_metrics(a, c, s.h0().matrix());
    const ErrorSeries cb = error_metrics(c, b, s.h0().matrix());
    ASSERT_EQ(ab.times.size(), 6u);
    ASSERT_EQ(cb.times, ab.times);
    for (std::size_t k = 0; k < ab.times.size(); ++k) {
        EXPECT_LE(ac.l1_density[k], ab.l1_density[k] + cb.l1_density[k] + 1e-14);
        EXPECT_LE(ac.e2_operator[k], ab.e2_operator[k] + cb.e2_operator[k] + 1e-12);
    }
    EXPECT_GT(ac.max_l1(), 0.0);
}

TEST(FittedOrder, RecoversPowerLaw) {
    for (double p : {0.5, 1.0, 2.0}) {
        std::vector<double> dts{0.02, 0.01, 0.005}, errs;
        for (double dt : dts) errs.push_back(3.7 * std::pow(dt, p));
        EXPECT_NEAR(fitted_order(dts, errs), p, 1e-12);
    }
    EXPECT_TRUE(std::isnan(fitted_order({0.1}, {0.2})));
    EXPECT_TRUE(std::isnan(fitted_order({0.1, 0.05}, {0.2})));
}
