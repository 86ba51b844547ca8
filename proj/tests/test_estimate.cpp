#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "epmc/estimate.hpp"
#include "epmc/rng.hpp"
#include "epmc/simulate.hpp"
#include "epmc/solver.hpp"

using namespace epmc;

namespace {

Mat column(const std::vector<double>& v) {
    Mat m(static_cast<long>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<long>(i), 0) = v[i];
    return m;
}

}  // namespace

TEST_CASE("constant responses are reproduced by every method") {
    std::vector<double> xs, y;
    for (int i = 0; i < 500; ++i) {
        xs.push_back(uniform_at(1, RngStream::fuzz, i, 0));
        y.push_back(3.7);
    }
    const Mat x = column(xs);
    const Mat q = column({0.1, 0.5, 0.9});
    for (auto method : {RegressionConfig::Method::knn, RegressionConfig::Method::gaussian_kernel}) {
        RegressionConfig cfg;
        cfg.method = method;
        cfg.k = 25;
        const auto out = conditional_expectation(x, y, nullptr, q, cfg);
        for (double v : out) CHECK(v == doctest::Approx(3.7).epsilon(1e-12));
    }
}

TEST_CASE("identity function on a uniform grid") {
    std::vector<double> xs, y;
    const int n = 101;
    for (int i = 0; i < n; ++i) {
        xs.push_back(i / (n - 1.0));
        y.push_back(xs.back());
    }
    RegressionConfig cfg;
    cfg.k = 3;
    cfg.min_neighbors = 1;
    const auto out = conditional_expectation(column(xs), y, nullptr, column({0.5}), cfg);
    CHECK(std::abs(out[0] - 0.5) <= 1.0 / (n - 1.0));
}

TEST_CASE("noisy quadratic fixture") {
    const std::size_t n = 10000;
    std::vector<double> xs(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = 2.0 * uniform_at(2, RngStream::fuzz, i, 0);
        y[i] = xs[i] * xs[i] + 0.1 * normal_at(2, RngStream::fuzz, i, 1);
    }
    RegressionConfig cfg;
    cfg.k = 100;
    const auto out = conditional_expectation(column(xs), y, nullptr, column({1.0}), cfg);
    CHECK(std::abs(out[0] - 1.0) <= 0.05);
}

TEST_CASE("knn output stays inside the response range") {
    const std::size_t n = 400;
    std::vector<double> xs(n), y(n);
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = normal_at(3, RngStream::fuzz, i, 0);
        y[i] = std::sin(3.0 * xs[i]) + normal_at(3, RngStream::fuzz, i, 1);
        lo = std::min(lo, y[i]);
        hi = std::max(hi, y[i]);
    }
    RegressionConfig cfg;
    cfg.k = 11;
    std::vector<double> qs;
    for (int i = 0; i < 50; ++i) qs.push_back(3.0 * uniform_at(4, RngStream::fuzz, i, 0) - 1.5);
    const auto out = conditional_expectation(column(xs), y, nullptr, column(qs), cfg);
    for (double v : out) {
        CHECK(v >= lo);
        CHECK(v <= hi);
    }
}

TEST_CASE("density ratio self-consistency") {
    const std::size_t n = 10000;
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = normal_at(5, RngStream::fuzz, i, 0);
    const Mat samples = column(xs);
    RegressionConfig cfg;

    SUBCASE("identity tilt against the analytic law") {
        const auto lam = density_ratio(DistributionSpec::gaussian(Vec::Zero(1), Vec::Ones(1)),
                                       samples, cfg);
        double mean = 0.0;
        for (double v : lam) mean += v;
        mean /= static_cast<double>(n);
        CHECK(std::abs(mean - 1.0) < 0.1);
        // weighted resampling preserves the first moment
        double sw = 0.0, swx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sw += lam[i];
            swx += lam[i] * xs[i];
        }
        CHECK(std::abs(swx / sw) <= 3.0 / std::sqrt(static_cast<double>(n)) + 0.02);
    }
    SUBCASE("gaussian mean shift") {
        const auto lam = density_ratio(DistributionSpec::gaussian(Vec::Constant(1, 1.0), Vec::Ones(1)),
                                       samples, cfg);
        double sw = 0.0, swx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sw += lam[i];
            swx += lam[i] * xs[i];
        }
        CHECK(std::abs(swx / sw - 1.0) <= 3.0 / std::sqrt(1000.0) + 0.05);
    }
    SUBCASE("empirical self-target ratio is exactly one") {
        const auto lam = density_ratio(DistributionSpec::empirical(samples), samples, cfg);
        for (std::size_t i = 0; i < 100; ++i) CHECK(lam[i] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("nelson drift") {
    SUBCASE("constant drift is recovered") {
        ControlProblem p = make_lq_problem(0.0, 1.0, 1.0, 0.05, 3.0, 10,
                                           DistributionSpec::gaussian(Vec::Zero(1), Vec::Ones(1)));
        const auto policy = constant_policy(Vec::Constant(1, 0.8), p.box);
        auto e = std::make_shared<const PathEnsemble>(simulate_ensemble(p, *policy, 5000, 3));
        std::vector<double> w(e->n_paths, 1.0 / static_cast<double>(e->n_paths));
        RegressionConfig cfg;
        cfg.k = 200;
        const DriftField f = nelson_drift(e, w, cfg, p);
        const double bound = 3.0 * 0.05 / std::sqrt(200.0 * 0.1);
        for (double x : {-0.5, 0.0, 0.5})
            CHECK(std::abs(f(4, Vec::Constant(1, x))[0] - 0.8) <= bound + 1e-9);
    }
    SUBCASE("zero-noise ensemble recovers the policy drift exactly at support points") {
        ControlProblem p = make_lq_problem(0.0, 1.0, 1.0, 0.0, 3.0, 10,
                                           DistributionSpec::gaussian(Vec::Zero(1), Vec::Ones(1)));
        const auto policy = constant_policy(Vec::Constant(1, 0.6), p.box);
        auto e = std::make_shared<const PathEnsemble>(simulate_ensemble(p, *policy, 300, 4));
        std::vector<double> w(e->n_paths, 1.0 / static_cast<double>(e->n_paths));
        RegressionConfig cfg;
        cfg.k = 16;
        cfg.min_neighbors = 1;
        const DriftField f = nelson_drift(e, w, cfg, p);
        CHECK(f(2, e->state_vec(0, 2))[0] == doctest::Approx(0.6).epsilon(1e-12));
    }
    SUBCASE("ornstein-uhlenbeck drift field within 0.1 everywhere on [-1, 1]") {
        // euler increments make E[(X_{m+1}-X_m)/dt | X_m = x] = -x exactly,
        // so a single wide step isolates the estimator error
        ControlProblem p = make_lq_problem(0.0, 1.0, 5.0, 1.0, 0.0, 1,
                                           DistributionSpec::gaussian(Vec::Zero(1), Vec::Ones(1)));
        p.dynamics.drift = [](double, const Vec& x, const Vec&) -> Vec { return -x; };
        p.dynamics.form = DriftForm::general;
        const auto policy = constant_policy(Vec::Zero(1), p.box);
        auto e = std::make_shared<const PathEnsemble>(simulate_ensemble(p, *policy, 100000, 5));
        std::vector<double> w(e->n_paths, 1.0 / static_cast<double>(e->n_paths));
        RegressionConfig cfg;
        cfg.k = 500;
        const DriftField f = nelson_drift(e, w, cfg, p);
        double max_err = 0.0;
        for (int q = 0; q <= 20; ++q) {
            const double x = -1.0 + 0.1 * q;
            max_err = std::max(max_err, std::abs(f(0, Vec::Constant(1, x))[0] + x));
        }
        CHECK(max_err <= 0.1);
    }
    SUBCASE("vanishing tilt matches the uniform-weight estimate") {
        ControlProblem p = make_lq_problem(1.0, 1.0, 1.0, 1.0, 2.0, 8,
                                           DistributionSpec::dirac(Vec::Zero(1)));
        const auto policy = constant_policy(Vec::Zero(1), p.box);
        auto e = std::make_shared<const PathEnsemble>(simulate_ensemble(p, *policy, 2000, 6));
        const PathCostVector phi = accumulate_path_cost(p, *e, *policy);
        const TwistResult tiny = twist_unconstrained(phi, 1e-12);
        std::vector<double> uniform(e->n_paths, 1.0 / static_cast<double>(e->n_paths));
        RegressionConfig cfg;
        cfg.k = 100;
        const DriftField ft = nelson_drift(e, tiny.weights.w, cfg, p);
        const DriftField fu = nelson_drift(e, uniform, cfg, p);
        for (double x : {-0.3, 0.0, 0.4})
            CHECK(ft(3, Vec::Constant(1, x))[0] ==
                  doctest::Approx(fu(3, Vec::Constant(1, x))[0]).epsilon(1e-9));
    }
    SUBCASE("starved neighborhoods widen once and then fail") {
        ControlProblem p = make_lq_problem(0.0, 1.0, 1.0, 1.0, 1.0, 4,
                                           DistributionSpec::dirac(Vec::Zero(1)));
        const auto policy = constant_policy(Vec::Zero(1), p.box);
        auto e = std::make_shared<const PathEnsemble>(simulate_ensemble(p, *policy, 200, 7));
        std::vector<double> w(e->n_paths, 0.0);
        w[0] = 1.0;  // single atom: neighborhood ESS is 1 everywhere
        RegressionConfig cfg;
        cfg.k = 50;
        cfg.min_neighbors = 5;
        const DriftField f = nelson_drift(e, w, cfg, p);
        CHECK_THROWS_AS(f(1, Vec::Zero(1)), EstimationError);
    }
}
