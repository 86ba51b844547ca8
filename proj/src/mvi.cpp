#include "epmc/mvi.hpp"

#include <Eigen/Cholesky>

namespace epmc {

namespace {

struct Potential {
    const ControlProblem& p;
    const MviQuery& q;
    Eigen::LLT<Mat> llt;
    bool linear;
    Vec gamma;  // linear form: b = gamma + B u
    Mat B;

    explicit Potential(const MviQuery& query, const ControlProblem& prob)
        : p(prob), q(query) {
        const Mat S = p.dynamics.sigma_sq(q.t, q.x);
        llt.compute(S);
        if (llt.info() != Eigen::Success)
            throw ParameterError("mvi: Sigma(t,x) is not positive definite");
        linear = p.dynamics.form == DriftForm::linear_in_control;
        if (linear) {
            gamma = p.dynamics.gamma ? p.dynamics.gamma(q.t, q.x)
                                     : p.dynamics.drift(q.t, q.x, Vec::Zero(p.control_dim()));
            B = p.dynamics.control_matrix.size() > 0
                    ? p.dynamics.control_matrix
                    : Mat(Mat::Identity(q.x.size(), p.control_dim()));
        }
    }

    Vec drift(const Vec& u) const {
        return linear ? Vec(gamma + B * u) : p.dynamics.drift(q.t, q.x, u);
    }

    double quad(const Vec& v) const { return v.dot(llt.solve(v)); }

    double operator()(const Vec& u) const {
        const Vec r = drift(u) - q.delta;
        return p.cost.running(q.t, q.x, u) + 0.5 * quad(r) / q.eps;
    }

    Vec grad(const Vec& u) const {
        const int pc = static_cast<int>(u.size());
        Vec g(pc);
        if (linear) {
            // analytic twist part, finite differences on f only
            const Vec r = drift(u) - q.delta;
            g = B.transpose() * llt.solve(r) / q.eps;
            Vec up = u, dn = u;
            for (int i = 0; i < pc; ++i) {
                const double h = fd_step(i);
                up[i] = u[i] + h;
                dn[i] = u[i] - h;
                g[i] += (p.cost.running(q.t, q.x, up) - p.cost.running(q.t, q.x, dn)) / (2 * h);
                up[i] = u[i];
                dn[i] = u[i];
            }
        } else {
            Vec up = u, dn = u;
            for (int i = 0; i < pc; ++i) {
                const double h = fd_step(i);
                up[i] = u[i] + h;
                dn[i] = u[i] - h;
                g[i] = ((*this)(up) - (*this)(dn)) / (2 * h);
                up[i] = u[i];
                dn[i] = u[i];
            }
        }
        return g;
    }

    double fd_step(int i) const {
        const double w = p.box.upper[i] - p.box.lower[i];
        return std::max(1e-7, 1e-7 * w);
    }
};

/// Lipschitz estimate for the gradient from a few Halton pairs.
double lipschitz_estimate(const Potential& G, const ControlBox& box) {
    const int pc = box.dim();
    double L = 1e-8;
    std::vector<double> buf(pc);
    Vec a(pc), b(pc);
    for (int s = 0; s < 4; ++s) {
        halton_point(2 * s, pc, buf.data());
        for (int i = 0; i < pc; ++i) a[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * buf[i];
        halton_point(2 * s + 1, pc, buf.data());
        for (int i = 0; i < pc; ++i) b[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * buf[i];
        const double dn = (a - b).norm();
        if (dn < 1e-12) continue;
        L = std::max(L, (G.grad(a) - G.grad(b)).norm() / dn);
    }
    return 1.5 * L;
}

struct DescentOut {
    Vec u;
    double g;
    int iterations;
};

DescentOut projected_descent(const Potential& G, const ControlBox& box, Vec u, double L) {
    double step = 1.0 / L;
    double g = G(u);
    if (!std::isfinite(g)) throw ParameterError("mvi: potential not finite at the start point");
    int it = 0;
    for (; it < 10'000; ++it) {
        const Vec grad = G.grad(u);
        Vec next = box.project(u - step * grad);
        double gn = G(next);
        int halvings = 0;
        while (gn > g + 1e-14 && halvings < 60) {
            step *= 0.5;
            next = box.project(u - step * grad);
            gn = G(next);
            ++halvings;
        }
        const double move = (next - u).norm();
        u = next;
        g = gn;
        if (move <= 1e-8) break;
    }
    return {u, g, it + 1};
}

Vec best_start(const Potential& G, const ControlProblem& p, const MviQuery& q) {
    std::vector<Vec> cand;
    cand.push_back(p.box.midpoint());
    if (G.linear) {
        // control that matches the target drift in least squares
        const Vec rhs = q.delta - G.gamma;
        Vec u = G.B.completeOrthogonalDecomposition().solve(rhs);
        cand.push_back(p.box.project(u));
    }
    Vec best = cand.front();
    double bg = G(best);
    for (std::size_t i = 1; i < cand.size(); ++i) {
        const double g = G(cand[i]);
        if (g < bg) { bg = g; best = cand[i]; }
    }
    return best;
}

}  // namespace

double mvi_residual(const Vec& u_bar, const MviQuery& q, const ControlProblem& p,
                    int grid_per_dim) {
    if (!p.box.contains(u_bar, 1e-9))
        throw ParameterError("mvi_residual: u_bar outside the control box");
    Potential G(q, p);
    const int pc = p.control_dim();
    const double f_bar = p.cost.running(q.t, q.x, u_bar);
    const Vec b_bar = G.drift(u_bar);
    const Vec lhs_vec = G.llt.solve(b_bar - q.delta) / q.eps;

    auto lhs = [&](const Vec& u) {
        return p.cost.running(q.t, q.x, u) - f_bar + lhs_vec.dot(G.drift(u) - b_bar);
    };

    double total = 1.0;
    for (int i = 0; i < pc; ++i) {
        total *= grid_per_dim;
        if (total > 1e5) break;
    }
    double best = 0.0;  // u = u_bar gives 0
    Vec u(pc);
    if (total <= 1e5) {
        std::vector<int> idx(pc, 0);
        const long npts = static_cast<long>(std::round(std::pow(grid_per_dim, pc)));
        for (long n = 0; n < npts; ++n) {
            long rem = n;
            for (int i = 0; i < pc; ++i) {
                const int gi = static_cast<int>(rem % grid_per_dim);
                rem /= grid_per_dim;
                u[i] = grid_per_dim == 1
                           ? 0.5 * (p.box.lower[i] + p.box.upper[i])
                           : p.box.lower[i] + (p.box.upper[i] - p.box.lower[i]) * gi / (grid_per_dim - 1.0);
            }
            best = std::min(best, lhs(u));
        }
    } else {
        std::vector<double> buf(pc);
        for (long n = 0; n < 100'000; ++n) {
            halton_point(static_cast<std::size_t>(n), pc, buf.data());
            for (int i = 0; i < pc; ++i)
                u[i] = p.box.lower[i] + (p.box.upper[i] - p.box.lower[i]) * buf[i];
            best = std::min(best, lhs(u));
        }
    }
    return best;
}

MviSolution solve_mvi_convex(const MviQuery& q, const ControlProblem& p) {
    if (!p.cost.convex_in_control)
        throw ParameterError("solve_mvi_convex: problem does not declare convex running costs");
    for (int i = 0; i < q.delta.size(); ++i)
        if (!std::isfinite(q.delta[i])) throw ParameterError("solve_mvi_convex: non-finite drift target");
    Potential G(q, p);
    const Vec u0 = best_start(G, p, q);
    const double L = lipschitz_estimate(G, p.box);
    auto out = projected_descent(G, p.box, u0, L);
    MviSolution s;
    s.u_bar = out.u;
    s.iterations = out.iterations;
    s.g_value = out.g;
    return s;
}

MviSolution solve_mvi_linear(const MviQuery& q, const ControlProblem& p, int cert_grid_per_dim) {
    if (p.dynamics.form != DriftForm::linear_in_control)
        throw ParameterError("solve_mvi_linear: drift is not control-affine");
    Potential G(q, p);
    const int pc = p.control_dim();
    const double L = lipschitz_estimate(G, p.box);

    const int n_starts = std::min(1 << std::min(pc, 6), 64);
    std::vector<double> buf(pc);
    Vec u0(pc);
    DescentOut best{best_start(G, p, q), 0.0, 0};
    best = projected_descent(G, p.box, best.u, L);
    int iters = best.iterations;
    for (int s = 0; s < n_starts; ++s) {
        halton_point(100 + s, pc, buf.data());
        for (int i = 0; i < pc; ++i)
            u0[i] = p.box.lower[i] + (p.box.upper[i] - p.box.lower[i]) * buf[i];
        auto cand = projected_descent(G, p.box, u0, L);
        iters += cand.iterations;
        if (cand.g < best.g) best = cand;
    }

    const double tol = 1e-6 * (1.0 + std::abs(p.cost.running(q.t, q.x, best.u)));
    double res = mvi_residual(best.u, q, p, cert_grid_per_dim);
    if (res < -tol) {
        // refinement pass: dense Halton sweep, descend from the best point found
        double bg = best.g;
        Vec bu = best.u;
        Vec u(pc);
        for (int n = 0; n < 4096; ++n) {
            halton_point(10'000 + n, pc, buf.data());
            for (int i = 0; i < pc; ++i)
                u[i] = p.box.lower[i] + (p.box.upper[i] - p.box.lower[i]) * buf[i];
            const double g = G(u);
            if (g < bg) { bg = g; bu = u; }
        }
        auto refined = projected_descent(G, p.box, bu, L);
        iters += refined.iterations;
        if (refined.g < best.g) best = refined;
        res = mvi_residual(best.u, q, p, cert_grid_per_dim);
        if (res < -tol)
            throw MviError("solve_mvi_linear: residual certification failed (residual = " +
                           std::to_string(res) + ", best G = " + std::to_string(best.g) + ")");
    }
    MviSolution s;
    s.u_bar = best.u;
    s.residual = res;
    s.iterations = iters;
    s.g_value = best.g;
    return s;
}

}  // namespace epmc
