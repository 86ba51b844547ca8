#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "epmc/simulate.hpp"
#include "epmc/solver.hpp"
#include "epmc/stats.hpp"

using namespace epmc;

namespace {

ControlProblem brownian(double sigma, int steps, double T = 1.0) {
    // b = u with box {0}: uncontrolled diffusion
    return make_lq_problem(0.0, 1.0, T, sigma, 0.0, steps, DistributionSpec::dirac(Vec::Zero(1)));
}

}  // namespace

TEST_CASE("frozen dynamics keep every path at the start point") {
    ControlProblem p = brownian(0.0, 10);
    p.initial = DistributionSpec::dirac(Vec::Constant(1, 3.25));
    const auto policy = constant_policy(Vec::Zero(1), p.box);
    const PathEnsemble e = simulate_ensemble(p, *policy, 50, 0);
    for (std::size_t i = 0; i < e.n_paths; ++i)
        for (int m = 0; m <= 10; ++m) CHECK(e.state(i, m, 0) == 3.25);
}

TEST_CASE("brownian terminal variance") {
    const ControlProblem p = brownian(1.0, 100);
    const auto policy = constant_policy(Vec::Zero(1), p.box);
    const std::size_t n = 20000;
    const PathEnsemble e = simulate_ensemble(p, *policy, n, 1);
    double v = 0.0, m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += e.state(i, 100, 0);
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) v += sqr(e.state(i, 100, 0) - m);
    v /= static_cast<double>(n);
    CHECK(std::abs(v - 1.0) <= 3.0 * std::sqrt(2.0 / static_cast<double>(n)));

    SUBCASE("terminal law is close to standard normal in KS distance") {
        std::vector<double> xs(n), w(n, 1.0 / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) xs[i] = e.state(i, 100, 0);
        const double ks = weighted_ks(xs, w, [](double x) { return normal_cdf(x); });
        CHECK(ks <= 1.63 / std::sqrt(static_cast<double>(n)));  // 1% Kolmogorov level
    }
}

TEST_CASE("noiseless linear drift matches the ODE limit") {
    ControlProblem p = brownian(0.0, 1000);
    p.dynamics.drift = [](double, const Vec& x, const Vec&) -> Vec { return -x; };
    p.dynamics.form = DriftForm::general;
    p.initial = DistributionSpec::dirac(Vec::Ones(1));
    const auto policy = constant_policy(Vec::Zero(1), p.box);
    const PathEnsemble e = simulate_ensemble(p, *policy, 3, 0);
    CHECK(std::abs(e.state(0, 1000, 0) - std::exp(-1.0)) < 1e-2);
}

TEST_CASE("identical seed and inputs give identical ensembles") {
    const ControlProblem p = brownian(0.7, 25);
    const auto policy = constant_policy(Vec::Zero(1), p.box);
    const PathEnsemble a = simulate_ensemble(p, *policy, 500, 42);
    const PathEnsemble b = simulate_ensemble(p, *policy, 500, 42);
    CHECK(a.states == b.states);
    CHECK(a.increments == b.increments);
    const PathEnsemble c = simulate_ensemble(p, *policy, 500, 43);
    CHECK(a.states != c.states);
}

TEST_CASE("exploding drift reports the failing path and step") {
    ControlProblem p = brownian(0.0, 40);
    p.dynamics.drift = [](double, const Vec& x, const Vec&) -> Vec { return 1e200 * (x + Vec::Ones(1)); };
    const auto policy = constant_policy(Vec::Zero(1), p.box);
    CHECK_THROWS_AS(simulate_ensemble(p, *policy, 4, 0), SimulationError);
}

TEST_CASE("path cost accumulation") {
    SUBCASE("constant rate integrates to f*T") {
        ControlProblem p = brownian(1.0, 20, 2.0);
        p.cost.running = [](double, const Vec&, const Vec&) { return 1.0; };
        const auto policy = constant_policy(Vec::Zero(1), p.box);
        const PathEnsemble e = simulate_ensemble(p, *policy, 10, 0);
        const PathCostVector phi = accumulate_path_cost(p, e, *policy);
        for (double v : phi.values) CHECK(v == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("terminal-only costs") {
        ControlProblem p = brownian(0.0, 5);
        p.cost.running = [](double, const Vec&, const Vec&) { return 0.0; };
        p.cost.terminal = [](const Vec& x) { return x.squaredNorm(); };
        p.initial = DistributionSpec::dirac(Vec::Constant(1, -1.0));
        const auto policy = constant_policy(Vec::Zero(1), p.box);
        const PathEnsemble e = simulate_ensemble(p, *policy, 2, 0);
        const PathCostVector phi = accumulate_path_cost(p, e, *policy);
        CHECK(phi.values[0] == doctest::Approx(1.0));
        CHECK(phi.values[1] == doctest::Approx(1.0));
    }
    SUBCASE("path costs respect the declared bound") {
        const ControlProblem p = build_hvac_instance(HvacParams::defaults(3));
        const auto policy = constant_policy(Vec::Zero(3), p.box);
        const PathEnsemble e = simulate_ensemble(p, *policy, 200, 7);
        const PathCostVector phi = accumulate_path_cost(p, e, *policy);
        for (double v : phi.values) {
            CHECK(v >= 0.0);
            CHECK(v <= p.cost.f_max * p.grid.t_end);
        }
    }
}

TEST_CASE("re-simulation with the same policy reproduces states exactly") {
    const ControlProblem p = build_hvac_instance(HvacParams::defaults(2));
    const auto policy = constant_policy(Vec::Constant(2, 0.4), p.box);
    const PathEnsemble a = simulate_ensemble(p, *policy, 300, 5);
    const PathEnsemble b = simulate_ensemble(p, *policy, 300, 5);
    CHECK(a.states == b.states);  // common random numbers from the counter generator
}

TEST_CASE("empirical marginal") {
    ControlProblem p = brownian(1.0, 8);
    const auto policy = constant_policy(Vec::Zero(1), p.box);
    const PathEnsemble e = simulate_ensemble(p, *policy, 100, 2);
    SUBCASE("time zero returns the initial samples") {
        const EmpiricalDistribution d = empirical_marginal(e, 0);
        for (long i = 0; i < d.samples.rows(); ++i) CHECK(d.samples(i, 0) == 0.0);
    }
    SUBCASE("uniform weights leave the mean unchanged") {
        std::vector<double> w(100, 1.0 / 100.0);
        const EmpiricalDistribution d = empirical_marginal(e, 8, &w);
        double mw = 0.0, mu = 0.0;
        for (long i = 0; i < 100; ++i) {
            mw += w[i] * d.samples(i, 0);
            mu += d.samples(i, 0) / 100.0;
        }
        CHECK(mw == doctest::Approx(mu).epsilon(1e-12));
    }
    SUBCASE("out-of-range index") {
        CHECK_THROWS_AS(empirical_marginal(e, 9), ParameterError);
    }
}
