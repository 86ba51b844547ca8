#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "epmc/rng.hpp"
#include "epmc/twist.hpp"

using namespace epmc;

TEST_CASE("constant costs give the uniform twist") {
    PathCostVector phi{{2.5, 2.5, 2.5, 2.5}};
    const TwistResult r = twist_unconstrained(phi, 2.0);
    for (double w : r.weights.w) CHECK(w == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(r.value == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(r.entropy == doctest::Approx(0.0));
}

TEST_CASE("two-point closed form") {
    PathCostVector phi{{0.0, 1.0}};
    const TwistResult r = twist_unconstrained(phi, 1.0);
    CHECK(r.weights.w[0] == doctest::Approx(0.731059).epsilon(1e-6));
    CHECK(r.weights.w[1] == doctest::Approx(0.268941).epsilon(1e-6));
    CHECK(r.value == doctest::Approx(0.379885).epsilon(1e-5));
    CHECK(r.value == doctest::Approx(r.expected_cost + r.entropy / 1.0).epsilon(1e-12));
}

TEST_CASE("saturation does not overflow") {
    PathCostVector phi{{0.0, 1e6}};
    const TwistResult r = twist_unconstrained(phi, 1.0);
    CHECK(r.weights.w[0] == doctest::Approx(1.0));
    CHECK(r.weights.w[1] == doctest::Approx(0.0));
    CHECK(r.value == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("value is shift-equivariant with unchanged weights") {
    PathCostVector a{{0.4, 1.1, 0.2, 3.0, 0.9}};
    PathCostVector b = a;
    for (double& v : b.values) v += 7.5;
    const TwistResult ra = twist_unconstrained(a, 0.7);
    const TwistResult rb = twist_unconstrained(b, 0.7);
    CHECK(rb.value - ra.value == doctest::Approx(7.5).epsilon(1e-12));
    for (std::size_t i = 0; i < a.values.size(); ++i)
        CHECK(ra.weights.w[i] == doctest::Approx(rb.weights.w[i]).epsilon(1e-14));
}

TEST_CASE("rejects nonpositive eps and non-finite costs") {
    PathCostVector phi{{0.0, 1.0}};
    CHECK_THROWS_AS(twist_unconstrained(phi, 0.0), ParameterError);
    CHECK_THROWS_AS(twist_unconstrained(phi, -1.0), ParameterError);
    PathCostVector bad{{0.0, std::numeric_limits<double>::quiet_NaN()}};
    CHECK_THROWS_AS(twist_unconstrained(bad, 1.0), ParameterError);
}

TEST_CASE("entropy from weights") {
    SUBCASE("uniform weights have zero entropy") {
        WeightVector w;
        w.w = {0.25, 0.25, 0.25, 0.25};
        CHECK(entropy_from_weights(w) == 0.0);
    }
    SUBCASE("point mass against uniform") {
        WeightVector w;
        w.w = {1.0, 0.0};
        CHECK(entropy_from_weights(w) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("nonnegative on fuzzed weight vectors") {
        for (int trial = 0; trial < 300; ++trial) {
            WeightVector w;
            double s = 0.0;
            for (int i = 0; i < 16; ++i) {
                w.w.push_back(uniform_at(trial, RngStream::fuzz, 77, i));
                s += w.w.back();
            }
            for (double& v : w.w) v /= s;
            CHECK(entropy_from_weights(w) >= 0.0);
        }
    }
}

TEST_CASE("entropy of the twist is nondecreasing in eps") {
    PathCostVector phi;
    for (int i = 0; i < 200; ++i)
        phi.values.push_back(2.0 * uniform_at(3, RngStream::fuzz, 5, i));
    double prev = -1.0;
    for (double eps : {0.05, 0.1, 0.3, 0.7, 1.5, 3.0, 6.0}) {
        const double h = twist_unconstrained(phi, eps).entropy;
        CHECK(h >= prev - 1e-12);
        prev = h;
    }
}

TEST_CASE("donsker-varadhan gap and bound") {
    SUBCASE("constant costs give zero gap and bound") {
        PathCostVector phi{{1.5, 1.5, 1.5}};
        const DvGap g = dv_gap_check(phi, 1.0);
        CHECK(g.gap == doctest::Approx(0.0));
        CHECK(g.bound == doctest::Approx(0.0));
    }
    SUBCASE("two-point arithmetic") {
        PathCostVector phi{{0.0, 1.0}};
        const DvGap g = dv_gap_check(phi, 1.0);
        CHECK(g.gap == doctest::Approx(0.120115).epsilon(1e-5));
        CHECK(g.bound == doctest::Approx(0.125).epsilon(1e-12));
        CHECK(g.gap <= g.bound);
    }
    SUBCASE("gaussian costs saturate the bound at the population level") {
        // for eta ~ N(0,1): E[eta] - (-(1/eps) log E exp(-eps eta)) = eps/2 exactly
        const double eps = 0.5;
        PathCostVector phi;
        const std::size_t n = 200000;
        for (std::size_t i = 0; i < n; ++i)
            phi.values.push_back(normal_at(12, RngStream::fuzz, i, 0));
        const DvGap g = dv_gap_check(phi, eps);
        CHECK(std::abs(g.gap - eps / 2.0) <= 3.0 * g.se);
        CHECK(g.gap >= -3.0 * g.se);
        CHECK(g.gap <= g.bound + 3.0 * g.se);
    }
}

TEST_CASE("terminal-law reweighting") {
    const std::size_t n = 10000;
    Mat xT(n, 1);
    for (std::size_t i = 0; i < n; ++i) xT(static_cast<long>(i), 0) = normal_at(8, RngStream::fuzz, i, 1);
    PathCostVector phi;
    phi.values.assign(n, 0.0);
    RegressionConfig cfg;
    cfg.k = 500;

    SUBCASE("empirical self-target gives near-uniform weights and value near zero") {
        const auto target = DistributionSpec::empirical(xT);
        const TwistResult r = twist_terminal_law(phi, xT, target, 1.0, cfg);
        CHECK(r.weights.ess > 0.97 * static_cast<double>(n));
        CHECK(std::abs(r.value) < 0.02);
    }
    SUBCASE("gaussian mean shift is matched by the weighted mean") {
        const auto target = DistributionSpec::gaussian(Vec::Constant(1, 1.0), Vec::Ones(1));
        const TwistResult r = twist_terminal_law(phi, xT, target, 1.0, cfg);
        double wm = 0.0;
        for (std::size_t i = 0; i < n; ++i) wm += r.weights.w[i] * xT(static_cast<long>(i), 0);
        double wv = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            wv += r.weights.w[i] * sqr(xT(static_cast<long>(i), 0) - wm);
        const double se = std::sqrt(wv / r.weights.ess);
        CHECK(std::abs(wm - 1.0) <= 3.0 * se + 0.05);  // 3 SE plus kernel bias allowance
    }
    SUBCASE("invalid eps is rejected") {
        const auto target = DistributionSpec::gaussian(Vec::Zero(1), Vec::Ones(1));
        CHECK_THROWS_AS(twist_terminal_law(phi, xT, target, -1.0, cfg), ParameterError);
    }
}
