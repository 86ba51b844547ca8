#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "epmc/common.hpp"
#include "epmc/rng.hpp"

namespace epmc {

/// Uniform grid on [0, T] with M steps.
struct TimeGrid {
    double t_end = 1.0;
    int steps = 100;

    double dt() const { return t_end / steps; }
    double t(int m) const { return t_end * m / steps; }

    void check() const {
        if (t_end <= 0.0) throw ParameterError("TimeGrid: horizon must be positive");
        if (steps < 1) throw ParameterError("TimeGrid: need at least one step");
    }
};

/// Compact box of admissible controls in R^p.
struct ControlBox {
    Vec lower, upper;

    int dim() const { return static_cast<int>(lower.size()); }

    static ControlBox cube(int p, double lo, double hi) {
        ControlBox b;
        b.lower = Vec::Constant(p, lo);
        b.upper = Vec::Constant(p, hi);
        b.check();
        return b;
    }

    void check() const {
        if (lower.size() != upper.size() || lower.size() == 0)
            throw StructuralError("ControlBox: bound dimensions disagree");
        for (int i = 0; i < lower.size(); ++i) {
            if (!(lower[i] <= upper[i]))
                throw ParameterError("ControlBox: lower bound exceeds upper bound");
            if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]))
                throw ParameterError("ControlBox: bounds must be finite");
        }
    }

    Vec midpoint() const { return 0.5 * (lower + upper); }

    Vec project(const Vec& v) const {
        return v.cwiseMax(lower).cwiseMin(upper);
    }
    bool contains(const Vec& v, double tol = 1e-12) const {
        for (int i = 0; i < v.size(); ++i)
            if (v[i] < lower[i] - tol || v[i] > upper[i] + tol) return false;
        return true;
    }
};

enum class DriftForm { general, linear_in_control };

/// Controlled drift/diffusion pair with declared bounds.
struct DynamicsSpec {
    std::function<Vec(double, const Vec&, const Vec&)> drift;
    std::function<Mat(double, const Vec&)> diffusion;
    DriftForm form = DriftForm::general;
    // for form == linear_in_control: drift(t,x,u) = gamma(t,x) + control_matrix * u
    std::function<Vec(double, const Vec&)> gamma;
    Mat control_matrix;

    double b_max = 1e6;    // declared sup |b|
    double c_sigma = 0.0;  // declared ellipticity constant

    Mat sigma_sq(double t, const Vec& x) const {
        const Mat s = diffusion(t, x);
        return s * s.transpose();
    }
};

/// Running + terminal costs with declared bounds.
struct CostSpec {
    std::function<double(double, const Vec&, const Vec&)> running;
    std::function<double(const Vec&)> terminal;  // empty => g = 0
    double f_max = 1e6;
    double g_max = 0.0;
    bool convex_in_control = false;  // declared; enables the convex MVI path

    double g(const Vec& x) const { return terminal ? terminal(x) : 0.0; }
};

/// Initial or target law: dirac, diagonal gaussian, or an empirical cloud.
struct DistributionSpec {
    struct Dirac { Vec x0; };
    struct DiagGaussian { Vec mean, variance; };
    struct Empirical { Mat samples; };  // rows are samples
    std::variant<Dirac, DiagGaussian, Empirical> kind;

    static DistributionSpec dirac(Vec x0) { return {Dirac{std::move(x0)}}; }
    static DistributionSpec gaussian(Vec mean, Vec variance) {
        for (int i = 0; i < variance.size(); ++i)
            if (!(variance[i] > 0.0)) throw ParameterError("DistributionSpec: gaussian variance must be positive");
        return {DiagGaussian{std::move(mean), std::move(variance)}};
    }
    static DistributionSpec empirical(Mat samples) {
        if (samples.rows() == 0) throw ParameterError("DistributionSpec: empirical sample set is empty");
        return {Empirical{std::move(samples)}};
    }

    int dim() const;
    bool has_log_density() const { return std::holds_alternative<DiagGaussian>(kind); }
    /// gaussian targets have a closed-form density; empirical targets get one
    /// through the same kernel estimator used for the sample cloud
    bool density_evaluable() const { return !std::holds_alternative<Dirac>(kind); }
    /// log density (diagonal gaussian only).
    double log_density(const Vec& x) const;
    /// per-dimension CDF, for marginal fit statistics.
    double marginal_cdf(int d, double v) const;
    /// deterministic sample #i from the seeded counter stream.
    Vec sample(std::uint64_t seed, std::uint64_t i) const;
};

struct ConstraintSet {
    enum class Kind { unconstrained, terminal_law };
    Kind kind = Kind::unconstrained;
    std::optional<DistributionSpec> target;

    static ConstraintSet none() { return {}; }
    static ConstraintSet terminal_law(DistributionSpec t) {
        if (!t.density_evaluable())
            throw ParameterError("ConstraintSet: terminal-law target needs an evaluable density");
        return {Kind::terminal_law, std::move(t)};
    }
};

/// Box from which validation and fuzz tests draw states.
struct StateRange {
    Vec lo, hi;
};

struct ControlProblem {
    TimeGrid grid;
    ControlBox box;
    DynamicsSpec dynamics;
    CostSpec cost;
    DistributionSpec initial;
    ConstraintSet constraint;
    StateRange probe;  // declared state range for hypothesis sampling

    int state_dim() const { return initial.dim(); }
    int control_dim() const { return box.dim(); }

    double eval_cost_rate(double t, const Vec& x, const Vec& u) const;
    Vec eval_drift(double t, const Vec& x, const Vec& u) const;
};

/// Demand-side-management instance: d clusters of thermostatic loads.
struct HvacParams {
    int d = 5;
    Vec theta;       // thermal constants [1/h]
    Vec x_out;       // outdoor temperatures [C]
    Vec kappa;       // heat exchange [C/kWh]
    Vec p_max;       // max power [kW]
    Vec sigma;       // volatility [C/sqrt(h)]
    Vec x_min, x_max;  // comfort band [C]
    double c_track = 10.0;
    Vec gamma_cost;  // per-cluster control weight
    Vec lambda_cost; // per-cluster comfort weight
    double r0 = 0.3, r1 = 0.7;  // tracking ramp endpoints
    Vec target_mean;
    Vec target_var;
    double horizon = 2.0;
    int steps = 50;

    /// Documented defaults spread across clusters.
    static HvacParams defaults(int d = 5);

    Vec rho() const { return p_max / p_max.sum(); }
    double r(double t) const { return r0 + (r1 - r0) * t / horizon; }
    void check() const;
};

ControlProblem build_hvac_instance(const HvacParams& params);

/// Linear feedback that holds each cluster at the target mean and
/// variance under the uncontrolled-noise dynamics; used to initialize
/// the demand-side-management runs.
Vec hvac_holding_control(const HvacParams& params, const Vec& x);

struct ValidationCheck {
    std::string name;
    bool pass;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    bool ok() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

/// Samples (t, x, u) from declared ranges and spot-checks the structural
/// hypotheses: cost sign and bounds, drift bound, uniform ellipticity.
ValidationReport validate_problem(const ControlProblem& p, int n_samples = 1000,
                                  std::uint64_t seed = 0);

}  // namespace epmc
