#pragma once

#include <optional>

#include "epmc/problem.hpp"

namespace epmc {

/// Pointwise mixed-variational-inequality query: find u_bar in the box with
///   f(t,x,u) - f(t,x,u_bar)
///     + (1/eps) < Sigma^{-1}(t,x) (b(t,x,u_bar) - delta), b(t,x,u) - b(t,x,u_bar) >  >= 0
/// for all admissible u.
struct MviQuery {
    double t = 0.0;
    Vec x;
    Vec delta;
    double eps = 1.0;
};

struct MviSolution {
    Vec u_bar;
    std::optional<double> residual;  // certified grid minimum of the MVI left-hand side
    int iterations = 0;
    double g_value = 0.0;  // potential f + |sigma^{-1}(b - delta)|^2 / (2 eps) at u_bar
};

/// Minimum over a control grid of the MVI left-hand side at u_bar
/// (tensor grid up to 1e5 points, Halton beyond).
double mvi_residual(const Vec& u_bar, const MviQuery& q, const ControlProblem& p,
                    int grid_per_dim);

/// Projected gradient descent on the potential
///   G(u) = f(t,x,u) + |sigma^{-1}(t,x)(b(t,x,u) - delta)|^2 / (2 eps)
/// over the box. Requires declared convex costs with control-affine drift;
/// the minimizer then solves the MVI.
MviSolution solve_mvi_convex(const MviQuery& q, const ControlProblem& p);

/// Multi-start minimization of the same potential for control-affine
/// drift without convexity of f. The candidate is certified against
/// mvi_residual and refined once before failing.
MviSolution solve_mvi_linear(const MviQuery& q, const ControlProblem& p,
                             int cert_grid_per_dim = 33);

}  // namespace epmc
