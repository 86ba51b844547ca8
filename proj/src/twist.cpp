#include "epmc/twist.hpp"

namespace epmc {

void WeightVector::finalize_from_logs() {
    const std::size_t n = log_unnormalized.size();
    w.assign(n, 0.0);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : log_unnormalized) m = std::max(m, v);
    if (!std::isfinite(m)) throw EstimationError("WeightVector: all log-weights are -inf");
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = std::exp(log_unnormalized[i] - m);
        z += w[i];
    }
    double s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] /= z;
        s2 += w[i] * w[i];
    }
    ess = s2 > 0.0 ? 1.0 / s2 : 0.0;
}

double entropy_from_weights(const WeightVector& wv) {
    const double n = static_cast<double>(wv.size());
    double h = 0.0;
    for (double w : wv.w)
        if (w > 0.0) h += w * std::log(n * w);
    return std::max(h, 0.0);
}

TwistResult twist_unconstrained(const PathCostVector& phi, double eps) {
    if (!(eps > 0.0)) throw ParameterError("twist_unconstrained: eps must be positive");
    const std::size_t n = phi.values.size();
    if (n == 0) throw ParameterError("twist_unconstrained: empty cost vector");
    TwistResult r;
    r.weights.log_unnormalized.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(phi.values[i]))
            throw ParameterError("twist_unconstrained: non-finite path cost");
        r.weights.log_unnormalized[i] = -eps * phi.values[i];
    }
    r.weights.finalize_from_logs();
    r.value = -(log_sum_exp(r.weights.log_unnormalized) - std::log(static_cast<double>(n))) / eps;
    r.entropy = entropy_from_weights(r.weights);
    r.expected_cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) r.expected_cost += r.weights.w[i] * phi.values[i];
    return r;
}

TwistResult twist_terminal_law(const PathCostVector& phi, const Mat& terminal_states,
                               const DistributionSpec& target, double eps,
                               const RegressionConfig& est, double ess_floor) {
    if (!(eps > 0.0)) throw ParameterError("twist_terminal_law: eps must be positive");
    const auto n = static_cast<std::size_t>(terminal_states.rows());
    if (phi.values.size() != n)
        throw StructuralError("twist_terminal_law: phi and terminal states disagree");
    if (!target.density_evaluable())
        throw ParameterError("twist_terminal_law: target density not evaluable");

    const std::vector<double> log_lambda = density_ratio_log(target, terminal_states, est);

    std::vector<double> neg_eps_phi(n);
    for (std::size_t i = 0; i < n; ++i) neg_eps_phi[i] = -eps * phi.values[i];
    const std::vector<double> log_gamma =
        conditional_log_mean_exp(terminal_states, neg_eps_phi, terminal_states, est);

    TwistResult r;
    r.weights.log_unnormalized.resize(n);
    std::size_t starved = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(log_lambda[i])) ++starved;
        r.weights.log_unnormalized[i] = neg_eps_phi[i] + log_lambda[i] - log_gamma[i];
    }
    r.starved_samples = starved;
    if (starved == n)
        throw EstimationError("twist_terminal_law: every sample starved (target outside the simulated support)");
    if (starved > 0)
        for (auto& lw : r.weights.log_unnormalized)
            if (!std::isfinite(lw)) lw = -std::numeric_limits<double>::max();
    r.weights.finalize_from_logs();
    r.entropy = entropy_from_weights(r.weights);
    r.expected_cost = 0.0;
    r.target_cost_estimate = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        r.expected_cost += r.weights.w[i] * phi.values[i];
        r.target_cost_estimate += r.weights.w[i] * (log_lambda[i] - log_gamma[i]) / eps;
    }
    r.value = r.expected_cost + r.entropy / eps;
    r.ess_warning = ess_floor > 0.0 && r.weights.ess < ess_floor;
    return r;
}

DvGap dv_gap_check(const PathCostVector& phi, double eps) {
    if (!(eps > 0.0)) throw ParameterError("dv_gap_check: eps must be positive");
    const std::size_t n = phi.values.size();
    auto [m1, var] = mean_var(phi.values);
    DvGap g;
    g.bound = 0.5 * eps * var;

    double shift = -std::numeric_limits<double>::infinity();
    for (double p : phi.values) shift = std::max(shift, -eps * p);
    double m2 = 0.0;
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = std::exp(-eps * phi.values[i] - shift);
        m2 += v[i];
    }
    m2 /= static_cast<double>(n);
    const double value = -(shift + std::log(m2)) / eps;
    g.gap = m1 - value;

    // delta method: gap = mean(phi) + (1/eps) log mean(exp(-eps phi))
    double s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        s2 += sqr(phi.values[i] - m1 + (v[i] - m2) / (eps * m2));
    g.se = std::sqrt(s2 / static_cast<double>(n) / static_cast<double>(n));
    return g;
}

}  // namespace epmc
