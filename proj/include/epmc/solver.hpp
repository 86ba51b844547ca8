#pragma once

#include "epmc/estimate.hpp"
#include "epmc/mvi.hpp"
#include "epmc/twist.hpp"

namespace epmc {

struct SolverConfig {
    double eps = 1.0;
    std::size_t n_paths = 10'000;
    int n_iterations = 10;
    RegressionConfig regression;
    int mvi_grid = 33;
    bool common_random_numbers = true;
    std::uint64_t seed = 0;
    double ess_floor_fraction = 0.01;

    // policy representation
    int policy_cells = 1500;             // support points per time slice
    int policy_smoothing_neighbors = 8;  // inverse-distance cells per query (1 = nearest cell)
    int moment_polish_rounds = 2;        // gaussian terminal targets only

    bool early_stop = false;  // stop when |d penalized| < 3 SE for 5 iterations

    void check() const {
        if (!(eps > 0.0)) throw ParameterError("SolverConfig: eps must be positive");
        if (n_paths < 100) throw ParameterError("SolverConfig: need at least 100 paths");
        if (n_iterations < 1) throw ParameterError("SolverConfig: need at least one iteration");
        regression.check();
    }
};

/// State carried between the two half-steps of one iteration.
struct Iterate {
    int k = 0;
    std::shared_ptr<const MarkovPolicy> policy;
    std::shared_ptr<const PathEnsemble> ensemble;
    PathCostVector phi;
};

struct IterateReport {
    int k = 0;
    double J = 0.0;              // mean path cost under P^k
    double J_se = 0.0;
    double penalized = 0.0;      // J_eps(Q^{k+1}, P^k)
    double penalized_se = 0.0;
    double entropy = 0.0;        // H(Q^{k+1} | P^k)
    double expected_cost_q = 0.0;
    double ess = 0.0;
    std::vector<double> terminal_fit;    // per-dim KS of the weighted terminal marginal
    std::vector<double> terminal_fit_p;  // per-dim KS of the simulated (unweighted) marginal
    double admissibility = 0.0;  // = entropy, to compare against eps * penalized
    double var_bound = 0.0;      // (eps/2) Var[phi]
    double sandwich_gap = 0.0;   // estimate of J(Q,P^{k+1}) - J(Q,P^k); <= 0 at an exact P-step
    double sandwich_se = 0.0;
    long drift_fallbacks = 0;    // starved drift neighborhoods served with uniform weights
    bool ess_warning = false;
    double wall_simulate = 0.0, wall_qstep = 0.0, wall_pstep = 0.0;
};

struct RunResult {
    std::vector<IterateReport> reports;
    std::shared_ptr<const MarkovPolicy> final_policy;
    std::shared_ptr<const PathEnsemble> final_ensemble;
    WeightVector final_weights;
    SolverConfig config;
    bool aborted = false;
    std::string abort_reason;
};

/// Q-step: closed-form minimizer of J_eps(., P^k) over the constraint
/// set, evaluated on the ensemble. Terminal-law targets with diagonal
/// gaussian law get a per-dimension moment-matching polish (a further
/// tilt in X_T, so the minimizer family is preserved).
TwistResult step_q(const Iterate& it, const ControlProblem& p, const SolverConfig& cfg);

/// P-step: Nelson-derivative drift of the reweighted measure, then a
/// pointwise MVI solve on a per-slice support cloud; returns the new
/// policy. `sandwich_*` outputs estimate the P-step improvement
/// E^Q int [G(u_new) - G(u_old)] dt (nonpositive when the solves succeed).
std::shared_ptr<MarkovPolicy> step_p(const Iterate& it, const WeightVector& weights,
                                     const ControlProblem& p, const SolverConfig& cfg,
                                     double* sandwich_gap = nullptr, double* sandwich_se = nullptr,
                                     long* drift_fallbacks = nullptr);

/// Fills the per-iteration report from the half-step outputs.
IterateReport diagnostics(const Iterate& it, const TwistResult& twist,
                          const ControlProblem& p, const SolverConfig& cfg);

/// The alternating minimization loop.
RunResult run_alternating(const ControlProblem& p, const SolverConfig& cfg,
                          std::shared_ptr<const MarkovPolicy> initial_policy = nullptr,
                          const std::function<void(const IterateReport&)>& on_iterate = nullptr);

// ---- scalar LQ reference (independent oracle) -------------------------------

struct LqSpec {
    double q = 1.0, r = 1.0;
    double T = 1.0;
    double sigma = 1.0;
    double x0_mean = 0.0, x0_var = 0.0;
    int steps = 2000;  // Riccati integration grid
};

struct LqReference {
    double J_star = 0.0;
    std::vector<double> gain;  // K(t) on the integration grid, u*(t,x) = -K(t) x
    double dt = 0.0;
    bool box_warning = false;

    double feedback(double t, double x) const;
};

/// Backward RK4 on the Riccati ODE P' = P^2/r - q, P(T) = 0;
/// J* = 0.5 P(0) E[X0^2] + 0.5 sigma^2 int_0^T P dt.
LqReference reference_lq_solution(const LqSpec& lq, double box_halfwidth = 1e300);

// ---- builtin experiment problems --------------------------------------------

ControlProblem make_lq_problem(double q, double r, double T, double sigma,
                               double box_halfwidth, int steps,
                               DistributionSpec initial);

ControlProblem make_bridge_problem(double target_mean, double target_var, double T,
                                   double sigma, double box_halfwidth, int steps);

}  // namespace epmc
