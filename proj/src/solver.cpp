#include "epmc/solver.hpp"

#include <Eigen/Cholesky>
#include <chrono>

#include "epmc/kdtree.hpp"
#include "epmc/stats.hpp"

namespace epmc {

namespace {

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

/// Piecewise control field over per-slice support clouds, interpolated
/// by inverse distance over the nearest cells.
class CloudPolicy final : public MarkovPolicy {
public:
    CloudPolicy(int M, int d, int p, ControlBox box, int smoothing)
        : M_(M), d_(d), p_(p), box_(std::move(box)), smoothing_(std::max(1, smoothing)) {
        xs_.resize(M);
        us_.resize(M);
        if (d_ == 1)
            lines_.resize(M);
        else
            trees_.resize(M);
    }

    void set_slice(int m, std::vector<double> positions, std::vector<double> controls) {
        xs_[m] = std::move(positions);
        us_[m] = std::move(controls);
        if (d_ == 1)
            lines_[m].build(xs_[m]);
        else
            trees_[m].build(xs_[m].data(), xs_[m].size() / d_, d_);
    }

    Vec at(int t_index, const Vec& x) const override {
        const int m = std::clamp(t_index, 0, M_ - 1);
        const std::size_t n_cells = xs_[m].size() / d_;
        const int k = std::min<std::size_t>(smoothing_, n_cells);
        thread_local std::vector<int> nb;
        thread_local std::vector<std::pair<double, int>> heap;
        thread_local std::vector<double> d2s;
        nb.clear();
        d2s.clear();
        if (d_ == 1) {
            lines_[m].knn(x[0], k, nb);
            for (int j : nb) d2s.push_back(sqr(x[0] - xs_[m][j]));
        } else {
            trees_[m].knn(x.data(), k, heap);
            for (const auto& [d2, j] : heap) {
                nb.push_back(j);
                d2s.push_back(d2);
            }
        }
        Vec u = Vec::Zero(p_);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_q = 0;
        for (std::size_t q = 0; q < nb.size(); ++q)
            if (d2s[q] < best) { best = d2s[q]; best_q = q; }
        if (best < 1e-24) {
            u = Eigen::Map<const Vec>(&us_[m][static_cast<std::size_t>(nb[best_q]) * p_], p_);
            return box_.project(u);
        }
        double sw = 0.0;
        for (std::size_t q = 0; q < nb.size(); ++q) {
            const double w = 1.0 / std::sqrt(d2s[q]);
            sw += w;
            u += w * Eigen::Map<const Vec>(&us_[m][static_cast<std::size_t>(nb[q]) * p_], p_);
        }
        return box_.project(u / sw);
    }

    void evaluate_batch(int t_index, const double* states, std::size_t n, int dim,
                        double* controls, int p) const override {
        parallel_for(n, [&](std::size_t i) {
            const Vec x = Eigen::Map<const Vec>(states + i * dim, dim);
            Eigen::Map<Vec>(controls + i * p, p) = at(t_index, x);
        });
    }

    std::string representation() const override { return "cloud_backed"; }

private:
    int M_, d_, p_;
    ControlBox box_;
    int smoothing_;
    std::vector<std::vector<double>> xs_, us_;
    std::vector<KdTree> trees_;
    std::vector<Sorted1d> lines_;
};

std::vector<double> terminal_column(const PathEnsemble& e, int c) {
    std::vector<double> v(e.n_paths);
    for (std::size_t i = 0; i < e.n_paths; ++i) v[i] = e.state(i, e.grid.steps, c);
    return v;
}

/// Extra tilt in X_T matching the weighted per-dimension moments to a
/// diagonal gaussian target. Keeps the exp(-eps phi) rho(X_T) form of
/// the constrained minimizer.
void moment_polish(TwistResult& r, const PathEnsemble& e, const DistributionSpec& target,
                   int rounds) {
    const auto* g = std::get_if<DistributionSpec::DiagGaussian>(&target.kind);
    if (!g || rounds <= 0) return;
    const int d = e.dim;
    const int M = e.grid.steps;
    const std::size_t n = e.n_paths;
    for (int round = 0; round < rounds; ++round) {
        Vec wm = Vec::Zero(d), wv = Vec::Zero(d);
        for (std::size_t i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) wm[c] += r.weights.w[i] * e.state(i, M, c);
        for (std::size_t i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) wv[c] += r.weights.w[i] * sqr(e.state(i, M, c) - wm[c]);
        bool degenerate = false;
        for (int c = 0; c < d; ++c)
            if (!(wv[c] > 1e-12)) degenerate = true;
        if (degenerate) break;
        for (std::size_t i = 0; i < n; ++i) {
            double tilt = 0.0;
            for (int c = 0; c < d; ++c) {
                const double x = e.state(i, M, c);
                tilt += -0.5 * sqr(x - g->mean[c]) / g->variance[c] + 0.5 * sqr(x - wm[c]) / wv[c];
            }
            r.weights.log_unnormalized[i] += tilt;
        }
        r.weights.finalize_from_logs();
    }
}

double penalized_batch_se(const std::vector<double>& phi, const std::vector<double>& lw,
                          double eps, int batches = 32) {
    const std::size_t n = phi.size();
    const int B = std::min<int>(batches, static_cast<int>(n));
    std::vector<double> pens(B);
    for (int b = 0; b < B; ++b) {
        const std::size_t lo = n * b / B, hi = n * (b + 1) / B;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t i = lo; i < hi; ++i) m = std::max(m, lw[i]);
        double z = 0.0;
        for (std::size_t i = lo; i < hi; ++i) z += std::exp(lw[i] - m);
        const double nb = static_cast<double>(hi - lo);
        double cost = 0.0, ent = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            const double w = std::exp(lw[i] - m) / z;
            cost += w * phi[i];
            if (w > 0.0) ent += w * std::log(nb * w);
        }
        pens[b] = cost + std::max(ent, 0.0) / eps;
    }
    double g = 0.0;
    for (double p : pens) g += p;
    g /= B;
    double s2 = 0.0;
    for (double p : pens) s2 += sqr(p - g);
    return std::sqrt(s2 / (B - 1.0) / B);
}

}  // namespace

TwistResult step_q(const Iterate& it, const ControlProblem& p, const SolverConfig& cfg) {
    if (p.constraint.kind == ConstraintSet::Kind::unconstrained)
        return twist_unconstrained(it.phi, cfg.eps);

    const int M = it.ensemble->grid.steps;
    Mat xT(static_cast<long>(it.ensemble->n_paths), it.ensemble->dim);
    for (std::size_t i = 0; i < it.ensemble->n_paths; ++i)
        for (int c = 0; c < it.ensemble->dim; ++c) xT(static_cast<long>(i), c) = it.ensemble->state(i, M, c);
    TwistResult r = twist_terminal_law(it.phi, xT, *p.constraint.target, cfg.eps, cfg.regression,
                                       cfg.ess_floor_fraction * static_cast<double>(it.ensemble->n_paths));
    moment_polish(r, *it.ensemble, *p.constraint.target, cfg.moment_polish_rounds);
    // refresh the derived quantities after the extra tilt
    r.entropy = entropy_from_weights(r.weights);
    r.expected_cost = 0.0;
    for (std::size_t i = 0; i < it.phi.values.size(); ++i)
        r.expected_cost += r.weights.w[i] * it.phi.values[i];
    r.value = r.expected_cost + r.entropy / cfg.eps;
    r.ess_warning = r.weights.ess < cfg.ess_floor_fraction * static_cast<double>(it.ensemble->n_paths);
    return r;
}

std::shared_ptr<MarkovPolicy> step_p(const Iterate& it, const WeightVector& weights,
                                     const ControlProblem& p, const SolverConfig& cfg,
                                     double* sandwich_gap, double* sandwich_se,
                                     long* drift_fallbacks) {
    const auto& e = *it.ensemble;
    const int M = e.grid.steps;
    const int d = e.dim;
    const int pc = p.control_dim();
    const double dt = e.grid.dt();
    const auto n = e.n_paths;
    const std::size_t C = std::min<std::size_t>(cfg.policy_cells, n);

    RegressionConfig drift_cfg = cfg.regression;
    drift_cfg.on_starved = RegressionConfig::Starved::uniform_fallback;
    DriftField field = nelson_drift(it.ensemble, weights.w, drift_cfg, p);

    auto policy = std::make_shared<CloudPolicy>(M, d, pc, p.box, cfg.policy_smoothing_neighbors);
    std::vector<std::size_t> cell_path(C);
    for (std::size_t c = 0; c < C; ++c) cell_path[c] = c * n / C;

    const bool convex = p.cost.convex_in_control;
    if (!convex && p.dynamics.form != DriftForm::linear_in_control)
        throw SolverError("step_p: problem declares neither convex running costs nor control-affine drift");

    std::vector<double> dG(C, 0.0);  // per-cell integral of G(u_new) - G(u_old)
    for (int m = 0; m < M; ++m) {
        const double t = e.grid.t(m);
        std::vector<double> positions(C * static_cast<std::size_t>(d));
        std::vector<double> controls(C * static_cast<std::size_t>(pc));
        std::string first_error;
        std::mutex err_mu;
        parallel_for(C, [&](std::size_t c) {
            try {
                const Vec x = e.state_vec(cell_path[c], m);
                MviQuery q{t, x, field(m, x), cfg.eps};
                const MviSolution sol = convex ? solve_mvi_convex(q, p)
                                               : solve_mvi_linear(q, p, cfg.mvi_grid);
                for (int cc = 0; cc < d; ++cc) positions[c * d + cc] = x[cc];
                for (int cc = 0; cc < pc; ++cc) controls[c * pc + cc] = sol.u_bar[cc];
                // improvement against the generating policy at the same cell
                const Vec u_old = it.policy->at(m, x);
                const Mat S = p.dynamics.sigma_sq(t, x);
                Eigen::LLT<Mat> llt(S);
                const Vec r_old = p.dynamics.drift(t, x, u_old) - q.delta;
                const double g_old =
                    p.cost.running(t, x, u_old) + 0.5 * r_old.dot(llt.solve(r_old)) / cfg.eps;
                dG[c] += (sol.g_value - g_old) * dt;
            } catch (const std::exception& ex) {
                std::lock_guard<std::mutex> g(err_mu);
                if (first_error.empty())
                    first_error = std::string(ex.what()) + " [t_index=" + std::to_string(m) + "]";
            }
        });
        if (!first_error.empty()) throw SolverError("step_p: " + first_error);
        policy->set_slice(m, std::move(positions), std::move(controls));
    }

    if (drift_fallbacks) *drift_fallbacks = field.starved_fallbacks();
    if (sandwich_gap) {
        double sw = 0.0, gap = 0.0;
        for (std::size_t c = 0; c < C; ++c) sw += weights.w[cell_path[c]];
        for (std::size_t c = 0; c < C; ++c) gap += weights.w[cell_path[c]] / sw * dG[c];
        *sandwich_gap = gap;
        if (sandwich_se) {
            double s2 = 0.0;
            for (std::size_t c = 0; c < C; ++c)
                s2 += sqr(weights.w[cell_path[c]] / sw) * sqr(dG[c] - gap);
            *sandwich_se = std::sqrt(s2);
        }
    }
    return policy;
}

IterateReport diagnostics(const Iterate& it, const TwistResult& twist,
                          const ControlProblem& p, const SolverConfig& cfg) {
    IterateReport rep;
    rep.k = it.k;
    auto [J, var] = mean_var(it.phi.values);
    rep.J = J;
    rep.J_se = batch_se(it.phi.values);
    rep.penalized = twist.value;
    rep.penalized_se = penalized_batch_se(it.phi.values, twist.weights.log_unnormalized, cfg.eps);
    rep.entropy = twist.entropy;
    rep.expected_cost_q = twist.expected_cost;
    rep.ess = twist.weights.ess;
    rep.admissibility = twist.entropy;
    rep.var_bound = 0.5 * cfg.eps * var;
    rep.ess_warning = twist.ess_warning;
    if (p.constraint.kind == ConstraintSet::Kind::terminal_law) {
        const auto& target = *p.constraint.target;
        rep.terminal_fit.resize(it.ensemble->dim);
        rep.terminal_fit_p.resize(it.ensemble->dim);
        const std::vector<double> uniform(it.ensemble->n_paths,
                                          1.0 / static_cast<double>(it.ensemble->n_paths));
        for (int c = 0; c < it.ensemble->dim; ++c) {
            const std::vector<double> col = terminal_column(*it.ensemble, c);
            auto cdf = [&](double v) { return target.marginal_cdf(c, v); };
            rep.terminal_fit[c] = weighted_ks(col, twist.weights.w, cdf);
            rep.terminal_fit_p[c] = weighted_ks(col, uniform, cdf);
        }
    }
    return rep;
}

RunResult run_alternating(const ControlProblem& p, const SolverConfig& cfg,
                          std::shared_ptr<const MarkovPolicy> initial_policy,
                          const std::function<void(const IterateReport&)>& on_iterate) {
    cfg.check();
    if (p.constraint.kind == ConstraintSet::Kind::terminal_law &&
        !p.constraint.target->density_evaluable())
        throw SolverError("run_alternating: terminal-law target density not evaluable");

    RunResult out;
    out.config = cfg;
    std::shared_ptr<const MarkovPolicy> policy =
        initial_policy ? initial_policy : constant_policy(p.box.midpoint(), p.box);

    int consecutive_starved = 0;
    int flat = 0;
    double prev_pen = std::numeric_limits<double>::infinity();
    for (int k = 0; k < cfg.n_iterations; ++k) {
        try {
            Iterate it;
            it.k = k;
            it.policy = policy;
            const std::uint64_t seed_k = cfg.common_random_numbers ? cfg.seed : cfg.seed + static_cast<std::uint64_t>(k);
            double t0 = now_s();
            it.ensemble = std::make_shared<const PathEnsemble>(
                simulate_ensemble(p, *policy, cfg.n_paths, seed_k));
            it.phi = accumulate_path_cost(p, *it.ensemble, *policy);
            const double t1 = now_s();
            const TwistResult twist = step_q(it, p, cfg);
            const double t2 = now_s();
            IterateReport rep = diagnostics(it, twist, p, cfg);
            std::shared_ptr<MarkovPolicy> next =
                step_p(it, twist.weights, p, cfg, &rep.sandwich_gap, &rep.sandwich_se,
                       &rep.drift_fallbacks);
            const double t3 = now_s();
            rep.wall_simulate = t1 - t0;
            rep.wall_qstep = t2 - t1;
            rep.wall_pstep = t3 - t2;
            out.reports.push_back(rep);
            if (on_iterate) on_iterate(rep);

            out.final_policy = next;
            out.final_ensemble = it.ensemble;
            out.final_weights = twist.weights;
            policy = next;

            consecutive_starved = rep.ess_warning ? consecutive_starved + 1 : 0;
            if (consecutive_starved >= 3) {
                out.aborted = true;
                out.abort_reason = "effective sample size below the floor for 3 consecutive iterations";
                break;
            }
            if (cfg.early_stop) {
                flat = std::abs(rep.penalized - prev_pen) < 3.0 * rep.penalized_se ? flat + 1 : 0;
                prev_pen = rep.penalized;
                if (flat >= 5) break;
            } else {
                prev_pen = rep.penalized;
            }
        } catch (const Error& e) {
            throw SolverError("iteration " + std::to_string(k) + ": " + e.what());
        }
    }
    return out;
}

double LqReference::feedback(double t, double x) const {
    const auto idx = static_cast<std::size_t>(std::clamp(t / dt, 0.0, static_cast<double>(gain.size() - 1)));
    return -gain[idx] * x;
}

LqReference reference_lq_solution(const LqSpec& lq, double box_halfwidth) {
    if (!(lq.r > 0.0) || lq.q < 0.0 || !(lq.T > 0.0))
        throw ParameterError("reference_lq_solution: need r > 0, q >= 0, T > 0");
    const int n = lq.steps;
    const double dt = lq.T / n;
    auto rhs = [&](double P) { return P * P / lq.r - lq.q; };
    std::vector<double> P(n + 1);
    P[n] = 0.0;
    double integral = 0.0;
    for (int i = n; i > 0; --i) {
        const double k1 = rhs(P[i]);
        const double k2 = rhs(P[i] - 0.5 * dt * k1);
        const double k3 = rhs(P[i] - 0.5 * dt * k2);
        const double k4 = rhs(P[i] - dt * k3);
        P[i - 1] = P[i] - dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        integral += 0.5 * (P[i] + P[i - 1]) * dt;
    }
    LqReference ref;
    ref.dt = dt;
    ref.gain.resize(n + 1);
    for (int i = 0; i <= n; ++i) ref.gain[i] = P[i] / lq.r;
    const double ex2 = sqr(lq.x0_mean) + lq.x0_var;
    ref.J_star = 0.5 * P[0] * ex2 + 0.5 * sqr(lq.sigma) * integral;
    // flag if the optimal feedback would leave the box on a plausible state range
    const double x_range = std::abs(lq.x0_mean) + 4.0 * std::sqrt(lq.x0_var + sqr(lq.sigma) * lq.T);
    double kmax = 0.0;
    for (double g : ref.gain) kmax = std::max(kmax, std::abs(g));
    ref.box_warning = kmax * x_range > box_halfwidth;
    return ref;
}

ControlProblem make_lq_problem(double q, double r, double T, double sigma,
                               double box_halfwidth, int steps, DistributionSpec initial) {
    ControlProblem cp;
    cp.grid = TimeGrid{T, steps};
    cp.box = ControlBox::cube(1, -box_halfwidth, box_halfwidth);
    cp.dynamics.form = DriftForm::linear_in_control;
    cp.dynamics.gamma = [](double, const Vec&) { return Vec::Zero(1); };
    cp.dynamics.control_matrix = Mat::Identity(1, 1);
    cp.dynamics.drift = [](double, const Vec&, const Vec& u) { return u; };
    cp.dynamics.diffusion = [sigma](double, const Vec&) { return Mat::Constant(1, 1, sigma); };
    cp.dynamics.b_max = box_halfwidth;
    cp.dynamics.c_sigma = sigma * sigma;
    cp.cost.running = [q, r](double, const Vec& x, const Vec& u) {
        return 0.5 * (q * x.squaredNorm() + r * u.squaredNorm());
    };
    cp.cost.convex_in_control = true;
    cp.cost.f_max = 0.5 * (q * 100.0 + r * sqr(box_halfwidth));
    cp.initial = std::move(initial);
    cp.constraint = ConstraintSet::none();
    cp.probe.lo = Vec::Constant(1, -10.0);
    cp.probe.hi = Vec::Constant(1, 10.0);
    return cp;
}

ControlProblem make_bridge_problem(double target_mean, double target_var, double T,
                                   double sigma, double box_halfwidth, int steps) {
    ControlProblem cp = make_lq_problem(0.0, 1.0, T, sigma, box_halfwidth, steps,
                                        DistributionSpec::dirac(Vec::Zero(1)));
    cp.constraint = ConstraintSet::terminal_law(
        DistributionSpec::gaussian(Vec::Constant(1, target_mean), Vec::Constant(1, target_var)));
    return cp;
}

}  // namespace epmc
