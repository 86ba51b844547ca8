#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "epmc/oracle.hpp"
#include "epmc/rng.hpp"
#include "epmc/twist.hpp"

using namespace epmc;

TEST_CASE("drift-shift analytic entropy") {
    SUBCASE("identical drifts") {
        DriftShiftSpec s{Vec::Ones(2), Vec::Ones(2), Mat::Identity(2, 2), 1.0};
        CHECK(entropy_drift_shift_analytic(s) == 0.0);
    }
    SUBCASE("scalar fixture 0.125") {
        DriftShiftSpec s{Vec::Zero(1), Vec::Constant(1, 0.5), Mat::Identity(1, 1), 1.0};
        CHECK(entropy_drift_shift_analytic(s) == doctest::Approx(0.125));
    }
    SUBCASE("linearity in the horizon") {
        DriftShiftSpec s{Vec::Zero(1), Vec::Constant(1, 0.5), Mat::Identity(1, 1), 2.0};
        CHECK(entropy_drift_shift_analytic(s) == doctest::Approx(0.25));
    }
    SUBCASE("anisotropic two-dimensional case") {
        Mat sig = Mat::Zero(2, 2);
        sig(0, 0) = 1.0;
        sig(1, 1) = 2.0;
        DriftShiftSpec s{Vec::Zero(2), Vec::Ones(2), sig, 1.0};
        CHECK(entropy_drift_shift_analytic(s) == doctest::Approx(0.625));
    }
}

TEST_CASE("poisson analytic entropy") {
    CHECK(entropy_poisson_analytic({1.0, 1.0, 1.0}) == 0.0);
    CHECK(entropy_poisson_analytic({1.0, 2.0, 1.0}) == doctest::Approx(2.0 * std::log(2.0) - 1.0));
    CHECK(entropy_poisson_analytic({2.0, 1.0, 1.0}) == doctest::Approx(1.0 - std::log(2.0)));
    CHECK(entropy_poisson_analytic({1.0, 4.0, 0.5}) ==
          doctest::Approx(0.5 * (4.0 * std::log(4.0) - 3.0)));
    SUBCASE("nonnegative over a parameter grid with equality only on the diagonal") {
        for (double l1 : {0.3, 1.0, 2.5})
            for (double l2 : {0.3, 1.0, 2.5}) {
                const double h = entropy_poisson_analytic({l1, l2, 1.3});
                CHECK(h >= 0.0);
                if (l1 == l2)
                    CHECK(h == 0.0);
                else
                    CHECK(h > 0.0);
            }
    }
}

TEST_CASE("monte-carlo drift entropy matches the closed form") {
    SUBCASE("equal drifts give a pathwise-zero log-likelihood ratio") {
        DriftShiftSpec s{Vec::Ones(1), Vec::Ones(1), Mat::Identity(1, 1), 1.0};
        const McEstimate e = entropy_mc_drift(s, 2000, 50, 3);
        CHECK(std::abs(e.estimate) < 1e-12);
        CHECK(e.se < 1e-12);
    }
    SUBCASE("scalar fixture") {
        DriftShiftSpec s{Vec::Zero(1), Vec::Constant(1, 0.5), Mat::Identity(1, 1), 1.0};
        const McEstimate e = entropy_mc_drift(s, 100000, 200, 4);
        CHECK(e.se < 0.005);
        CHECK(std::abs(e.estimate - 0.125) <= 3.0 * e.se);
    }
    SUBCASE("anisotropic fixture") {
        Mat sig = Mat::Zero(2, 2);
        sig(0, 0) = 1.0;
        sig(1, 1) = 2.0;
        DriftShiftSpec s{Vec::Zero(2), Vec::Ones(2), sig, 1.0};
        const McEstimate e = entropy_mc_drift(s, 100000, 200, 5);
        CHECK(std::abs(e.estimate - 0.625) <= 3.0 * e.se);
    }
}

TEST_CASE("monte-carlo poisson entropy") {
    SUBCASE("identical intensities are exactly zero") {
        const McEstimate e = entropy_mc_poisson({2.0, 2.0, 1.0}, 5000, 6);
        CHECK(e.estimate == 0.0);
    }
    SUBCASE("doubling fixture") {
        const McEstimate e = entropy_mc_poisson({1.0, 2.0, 1.0}, 100000, 7);
        CHECK(std::abs(e.estimate - (2.0 * std::log(2.0) - 1.0)) <= 3.0 * e.se);
    }
    SUBCASE("halving fixture") {
        const McEstimate e = entropy_mc_poisson({2.0, 1.0, 1.0}, 100000, 8);
        CHECK(std::abs(e.estimate - (1.0 - std::log(2.0))) <= 3.0 * e.se);
    }
}

TEST_CASE("gaussian relative entropy") {
    CHECK(gaussian_entropy(Vec::Zero(3), Vec::Ones(3), Vec::Zero(3), Vec::Ones(3)) == 0.0);
    CHECK(gaussian_entropy(Vec::Constant(1, 1.0), Vec::Ones(1), Vec::Zero(1), Vec::Ones(1)) ==
          doctest::Approx(0.5));
    CHECK(gaussian_entropy(Vec::Zero(1), Vec::Constant(1, 2.0), Vec::Zero(1), Vec::Ones(1)) ==
          doctest::Approx(0.5 * (2.0 - 1.0 - std::log(2.0))));
    CHECK_THROWS_AS(gaussian_entropy(Vec::Zero(1), Vec::Zero(1), Vec::Zero(1), Vec::Ones(1)),
                    ParameterError);
}

TEST_CASE("exponential lower bounds used by the jump estimates") {
    // theta(z) = e^z - z - 1 >= |z|/e outside [-1,1]; inside, the Taylor
    // form e^{xi z} z^2/2 gives z^2/2 for z >= 0 but only z^2/(2e) for z < 0
    // (theta(-1) = 1/e < 1/2, so the symmetric z^2/2 bound cannot hold there)
    for (int i = 0; i < 1000; ++i) {
        const double z = 10.0 * uniform_at(4, RngStream::fuzz, i, 0) - 5.0;
        const double theta = std::exp(z) - z - 1.0;
        double bound;
        if (std::abs(z) > 1.0)
            bound = std::abs(z) / M_E;
        else if (z >= 0.0)
            bound = 0.5 * z * z;
        else
            bound = 0.5 * z * z / M_E;
        CHECK(theta >= bound - 1e-12);
    }
}

TEST_CASE("pathwise likelihood weights reproduce the analytic entropy") {
    DriftShiftSpec s{Vec::Zero(1), Vec::Constant(1, 0.5), Mat::Identity(1, 1), 1.0};
    const std::size_t n = 100000;
    WeightVector wv;
    wv.log_unnormalized = drift_shift_log_weights(s, n, 200, 9);
    wv.finalize_from_logs();
    const double h = entropy_from_weights(wv);
    // self-normalized estimator of H(P2|P1) from P1 samples; allow 3 effective SEs
    const double se = 3.0 * 0.5 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(h - 0.125) <= 3.0 * 0.005 + se);
}

TEST_CASE("fuzzed oracle equivalence grid") {
    for (int i = 0; i < 10; ++i) {
        DriftShiftSpec s;
        const int d = 1 + static_cast<int>(uniform_at(50 + i, RngStream::fuzz, 0, 0) * 2);
        s.b1 = Vec(d);
        s.b2 = Vec(d);
        Mat sig = Mat::Zero(d, d);
        for (int c = 0; c < d; ++c) {
            s.b1[c] = uniform_at(50 + i, RngStream::fuzz, 1, c) - 0.5;
            s.b2[c] = uniform_at(50 + i, RngStream::fuzz, 2, c) - 0.5;
            sig(c, c) = 0.6 + uniform_at(50 + i, RngStream::fuzz, 3, c);
        }
        s.sigma = sig;
        s.T = 0.5 + uniform_at(50 + i, RngStream::fuzz, 4, 0);
        const double analytic = entropy_drift_shift_analytic(s);
        CHECK(analytic >= 0.0);
        const McEstimate mc = entropy_mc_drift(s, 20000, 100, 60 + i);
        CHECK(std::abs(mc.estimate - analytic) <= 3.0 * mc.se + 1e-9);

        PoissonShiftSpec ps;
        ps.lambda1 = 0.4 + 2.0 * uniform_at(80 + i, RngStream::fuzz, 0, 0);
        ps.lambda2 = 0.4 + 2.0 * uniform_at(80 + i, RngStream::fuzz, 1, 0);
        ps.T = 0.5 + uniform_at(80 + i, RngStream::fuzz, 2, 0);
        const double pa = entropy_poisson_analytic(ps);
        CHECK(pa >= 0.0);
        const McEstimate pmc = entropy_mc_poisson(ps, 20000, 90 + i);
        CHECK(std::abs(pmc.estimate - pa) <= 3.0 * pmc.se + 1e-9);
    }
}
