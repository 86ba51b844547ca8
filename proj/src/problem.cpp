#include "epmc/problem.hpp"

#include <Eigen/Cholesky>

namespace epmc {

int DistributionSpec::dim() const {
    if (auto* d = std::get_if<Dirac>(&kind)) return static_cast<int>(d->x0.size());
    if (auto* g = std::get_if<DiagGaussian>(&kind)) return static_cast<int>(g->mean.size());
    return static_cast<int>(std::get<Empirical>(kind).samples.cols());
}

double DistributionSpec::log_density(const Vec& x) const {
    const auto* g = std::get_if<DiagGaussian>(&kind);
    if (!g) throw ParameterError("DistributionSpec: log-density only available for gaussian laws");
    double s = 0.0;
    for (int i = 0; i < g->mean.size(); ++i)
        s += -0.5 * sqr(x[i] - g->mean[i]) / g->variance[i] - 0.5 * std::log(2.0 * M_PI * g->variance[i]);
    return s;
}

double DistributionSpec::marginal_cdf(int d, double v) const {
    if (auto* di = std::get_if<Dirac>(&kind)) return v >= di->x0[d] ? 1.0 : 0.0;
    if (auto* g = std::get_if<DiagGaussian>(&kind))
        return normal_cdf((v - g->mean[d]) / std::sqrt(g->variance[d]));
    const auto& s = std::get<Empirical>(kind).samples;
    long c = 0;
    for (long i = 0; i < s.rows(); ++i)
        if (s(i, d) <= v) ++c;
    return static_cast<double>(c) / static_cast<double>(s.rows());
}

Vec DistributionSpec::sample(std::uint64_t seed, std::uint64_t i) const {
    if (auto* d = std::get_if<Dirac>(&kind)) return d->x0;
    if (auto* g = std::get_if<DiagGaussian>(&kind)) {
        Vec x(g->mean.size());
        for (int c = 0; c < x.size(); ++c)
            x[c] = g->mean[c] + std::sqrt(g->variance[c]) * normal_at(seed, RngStream::initial_state, i, c);
        return x;
    }
    const auto& s = std::get<Empirical>(kind).samples;
    const auto row = static_cast<long>(detail::hash4(seed, static_cast<std::uint64_t>(RngStream::initial_state), i, 0)
                                       % static_cast<std::uint64_t>(s.rows()));
    return s.row(row);
}

double ControlProblem::eval_cost_rate(double t, const Vec& x, const Vec& u) const {
    if (!box.contains(u)) throw ParameterError("eval_cost_rate: control outside the admissible box");
    return cost.running(t, x, u);
}

Vec ControlProblem::eval_drift(double t, const Vec& x, const Vec& u) const {
    if (!box.contains(u)) throw ParameterError("eval_drift: control outside the admissible box");
    return dynamics.drift(t, x, u);
}

HvacParams HvacParams::defaults(int d) {
    if (d < 1) throw ParameterError("HvacParams: need at least one cluster");
    auto spread = [d](double lo, double hi) {
        Vec v(d);
        for (int i = 0; i < d; ++i) v[i] = d == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (d - 1);
        return v;
    };
    HvacParams p;
    p.d = d;
    p.theta = spread(0.3, 0.7);
    p.x_out = Vec::Constant(d, 30.0);
    p.p_max = spread(4.0, 6.0);
    p.kappa = spread(8.0, 12.0).cwiseQuotient(p.p_max);  // kappa_i * P_max_i in [8, 12] C/h
    p.sigma = spread(0.3, 0.6);
    p.x_min = Vec::Constant(d, 18.0);
    p.x_max = Vec::Constant(d, 24.0);
    p.gamma_cost = Vec::Ones(d);
    p.lambda_cost = Vec::Ones(d);
    p.target_mean = Vec::Constant(d, 21.0);
    p.target_var = Vec::Ones(d);
    return p;
}

void HvacParams::check() const {
    auto positive = [](const Vec& v, const char* what) {
        for (int i = 0; i < v.size(); ++i)
            if (!(v[i] > 0.0)) throw ParameterError(std::string("HvacParams: ") + what + " must be positive");
    };
    if (theta.size() != d || kappa.size() != d || p_max.size() != d || sigma.size() != d)
        throw StructuralError("HvacParams: per-cluster vectors must have length d");
    positive(theta, "theta");
    positive(kappa, "kappa");
    positive(p_max, "P_max");
    positive(sigma, "sigma");
    if (c_track < 0.0) throw ParameterError("HvacParams: C must be nonnegative");
    for (int i = 0; i < d; ++i) {
        if (gamma_cost[i] < 0.0 || lambda_cost[i] < 0.0)
            throw ParameterError("HvacParams: cost weights must be nonnegative");
        if (!(x_min[i] < x_max[i])) throw ParameterError("HvacParams: empty comfort band");
    }
    const double rs = rho().sum();
    if (std::abs(rs - 1.0) > 1e-12) throw ParameterError("HvacParams: rho must sum to one");
}

ControlProblem build_hvac_instance(const HvacParams& params) {
    params.check();
    const int d = params.d;
    const HvacParams p = params;  // capture by value: problem objects are immutable
    const Vec rho = p.rho();
    const Vec kp = p.kappa.cwiseProduct(p.p_max);

    ControlProblem cp;
    cp.grid = TimeGrid{p.horizon, p.steps};
    cp.box = ControlBox::cube(d, 0.0, 1.0);

    cp.dynamics.form = DriftForm::linear_in_control;
    cp.dynamics.gamma = [p](double, const Vec& x) -> Vec {
        return -p.theta.cwiseProduct(x - p.x_out);
    };
    cp.dynamics.control_matrix = (-kp).asDiagonal();
    cp.dynamics.drift = [p, kp](double, const Vec& x, const Vec& u) -> Vec {
        return -p.theta.cwiseProduct(x - p.x_out) - kp.cwiseProduct(u);
    };
    cp.dynamics.diffusion = [p](double, const Vec&) -> Mat {
        return p.sigma.asDiagonal();
    };
    // |b| <= |theta|.|x - x_out| + |kP| over the probe range below
    cp.dynamics.c_sigma = p.sigma.minCoeff() * p.sigma.minCoeff();

    cp.cost.running = [p, rho, d](double t, const Vec& x, const Vec& u) -> double {
        const double track = p.c_track * sqr(rho.dot(u) - p.r(t));
        double s = 0.0;
        for (int i = 0; i < d; ++i) {
            s += p.gamma_cost[i] * sqr(rho[i] * u[i]);
            s += p.lambda_cost[i] * sqr(std::max(x[i] - p.x_max[i], 0.0));
            s += p.lambda_cost[i] * sqr(std::max(p.x_min[i] - x[i], 0.0));
        }
        return track + s / d;
    };

    cp.cost.convex_in_control = true;

    cp.initial = DistributionSpec::gaussian(p.target_mean, p.target_var);
    cp.constraint = ConstraintSet::terminal_law(
        DistributionSpec::gaussian(p.target_mean, p.target_var));

    cp.probe.lo = Vec::Constant(d, 10.0);
    cp.probe.hi = Vec::Constant(d, 35.0);
    const double xdev = (cp.probe.hi - p.x_out).cwiseAbs().cwiseMax((cp.probe.lo - p.x_out).cwiseAbs()).maxCoeff();
    cp.dynamics.b_max = (p.theta * xdev + kp).norm();
    // f <= C + max band violation over probe range + gamma term
    double band = 0.0;
    for (int i = 0; i < d; ++i)
        band = std::max(band, std::max(sqr(cp.probe.hi[i] - p.x_max[i]), sqr(p.x_min[i] - cp.probe.lo[i])));
    cp.cost.f_max = p.c_track + band + 1.0;
    return cp;
}

Vec hvac_holding_control(const HvacParams& params, const Vec& x) {
    const Vec kp = params.kappa.cwiseProduct(params.p_max);
    Vec u(params.d);
    for (int i = 0; i < params.d; ++i) {
        const double base = params.theta[i] * (params.target_mean[i] - params.x_out[i]) / (-kp[i]);
        const double slope = (0.5 * sqr(params.sigma[i]) / params.target_var[i] - params.theta[i]) / kp[i];
        u[i] = std::clamp(base + slope * (x[i] - params.target_mean[i]), 0.0, 1.0);
    }
    return u;
}

ValidationReport validate_problem(const ControlProblem& p, int n_samples, std::uint64_t seed) {
    ValidationReport rep;
    const int d = p.state_dim();
    const int pc = p.control_dim();

    // structural: dimension consistency
    {
        bool ok = true;
        std::string detail;
        try {
            const Vec x0 = p.initial.sample(seed, 0);
            if (x0.size() != d) { ok = false; detail = "initial law dimension"; }
            const Vec u = p.box.midpoint();
            const Vec b = p.dynamics.drift(0.0, x0, u);
            if (b.size() != d) { ok = false; detail = "drift output dimension"; }
            const Mat s = p.dynamics.diffusion(0.0, x0);
            if (s.rows() != d || s.cols() != d) { ok = false; detail = "diffusion shape"; }
            if (p.probe.lo.size() != d || p.probe.hi.size() != d) { ok = false; detail = "probe range dimension"; }
            if (p.constraint.kind == ConstraintSet::Kind::terminal_law &&
                p.constraint.target->dim() != d) { ok = false; detail = "terminal target dimension"; }
            (void)pc;
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        if (!ok) throw StructuralError("validate_problem: " + detail);
        rep.checks.push_back({"dimensions", true, ""});
    }

    auto draw = [&](std::uint64_t i) {
        const double t = p.grid.t_end * uniform_at(seed, RngStream::validation, i, 0);
        Vec x(d), u(pc);
        for (int c = 0; c < d; ++c)
            x[c] = p.probe.lo[c] + (p.probe.hi[c] - p.probe.lo[c]) * uniform_at(seed, RngStream::validation, i, 1 + c);
        for (int c = 0; c < pc; ++c)
            u[c] = p.box.lower[c] + (p.box.upper[c] - p.box.lower[c]) * uniform_at(seed, RngStream::validation, i, 1 + d + c);
        return std::make_tuple(t, x, u);
    };

    double f_min = std::numeric_limits<double>::infinity(), f_obs_max = 0.0;
    double b_obs_max = 0.0, ell_min = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n_samples; ++i) {
        auto [t, x, u] = draw(i);
        const double f = p.cost.running(t, x, u);
        f_min = std::min(f_min, f);
        f_obs_max = std::max(f_obs_max, f);
        b_obs_max = std::max(b_obs_max, p.dynamics.drift(t, x, u).norm());
        const Mat S = p.dynamics.sigma_sq(t, x);
        Vec xi(d);
        for (int c = 0; c < d; ++c) xi[c] = normal_at(seed, RngStream::validation, 1'000'000 + i, c);
        xi.normalize();
        ell_min = std::min(ell_min, xi.dot(S * xi));
        if (p.cost.terminal) {
            const double g = p.cost.terminal(x);
            if (g < 0.0 || g > p.cost.g_max + 1e-12) {
                rep.checks.push_back({"terminal_cost_bounds", false,
                                      "g outside [0, g_max] at a sampled state"});
            }
        }
    }
    rep.checks.push_back({"running_cost_nonnegative", f_min >= 0.0,
                          "min sampled f = " + std::to_string(f_min)});
    rep.checks.push_back({"running_cost_bounded", f_obs_max <= p.cost.f_max + 1e-9,
                          "max sampled f = " + std::to_string(f_obs_max) +
                              " vs declared " + std::to_string(p.cost.f_max)});
    rep.checks.push_back({"drift_bounded", b_obs_max <= p.dynamics.b_max + 1e-9,
                          "max sampled |b| = " + std::to_string(b_obs_max) +
                              " vs declared " + std::to_string(p.dynamics.b_max)});
    rep.checks.push_back({"uniform_ellipticity", ell_min >= p.dynamics.c_sigma - 1e-12 && p.dynamics.c_sigma > 0.0,
                          "min sampled xi'Sigma xi = " + std::to_string(ell_min) +
                              " vs declared c_sigma = " + std::to_string(p.dynamics.c_sigma)});
    return rep;
}

}  // namespace epmc
