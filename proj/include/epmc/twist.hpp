#pragma once

#include "epmc/estimate.hpp"
#include "epmc/problem.hpp"
#include "epmc/simulate.hpp"

namespace epmc {

/// Normalized importance weights representing dQ/dP on the ensemble.
struct WeightVector {
    std::vector<double> w;                 // sums to one
    std::vector<double> log_unnormalized;  // kept for numerics
    double ess = 0.0;                      // 1 / sum w_i^2

    std::size_t size() const { return w.size(); }
    void finalize_from_logs();             // normalize via max shift, fill w and ess
};

struct TwistResult {
    WeightVector weights;
    double value = 0.0;          // J_eps(Q*, P) on the empirical measure
    double entropy = 0.0;        // H(Q*|P) estimate, sum w log(N w)
    double expected_cost = 0.0;  // E^{Q*}[phi]
    // terminal-law extras
    double target_cost_estimate = 0.0;  // (1/eps) sum w log(lambda/gamma)
    std::size_t starved_samples = 0;
    bool ess_warning = false;
};

/// Empirical relative entropy of the weighted measure against the
/// uniform one: sum w_i log(N w_i), with 0 log 0 = 0. Always >= 0.
double entropy_from_weights(const WeightVector& w);

/// Donsker-Varadhan / exponential-twist minimizer of
/// E^Q[phi] + H(Q|P)/eps over all Q << P, in closed form on the ensemble.
TwistResult twist_unconstrained(const PathCostVector& phi, double eps);

/// Minimizer under the terminal-law constraint Q_T = target:
/// log w_i ~ -eps phi_i + log lambda(X_T^i) - log gamma_eps(X_T^i),
/// with lambda a KDE density ratio and gamma_eps a regression of
/// exp(-eps phi) on X_T.
TwistResult twist_terminal_law(const PathCostVector& phi, const Mat& terminal_states,
                               const DistributionSpec& target, double eps,
                               const RegressionConfig& est, double ess_floor = 0.0);

/// Gap between E[phi] and the twist value plus its variance bound
/// (eps/2) Var[phi]; the gap lies in [0, bound] at population level.
struct DvGap {
    double gap = 0.0;
    double bound = 0.0;
    double se = 0.0;  // delta-method standard error of the gap
};
DvGap dv_gap_check(const PathCostVector& phi, double eps);

}  // namespace epmc
