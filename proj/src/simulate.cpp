#include "epmc/simulate.hpp"

#include <atomic>

namespace epmc {

PathEnsemble simulate_ensemble(const ControlProblem& p, const MarkovPolicy& policy,
                               std::size_t n_paths, std::uint64_t seed) {
    if (n_paths < 1) throw ParameterError("simulate_ensemble: need at least one path");
    p.grid.check();
    const int d = p.state_dim();
    const int pc = p.control_dim();
    const int M = p.grid.steps;
    const double dt = p.grid.dt();
    const double sdt = std::sqrt(dt);

    PathEnsemble e;
    e.n_paths = n_paths;
    e.dim = d;
    e.grid = p.grid;
    e.seed = seed;
    e.states.resize(n_paths * static_cast<std::size_t>(M + 1) * d);
    e.increments.resize(n_paths * static_cast<std::size_t>(M) * d);

    parallel_for(n_paths, [&](std::size_t i) {
        const Vec x0 = p.initial.sample(seed, i);
        double* s0 = e.state_ptr(i, 0);
        for (int c = 0; c < d; ++c) s0[c] = x0[c];
        for (int m = 0; m < M; ++m)
            for (int c = 0; c < d; ++c)
                e.increments[(i * M + m) * d + c] = normal_at(seed, RngStream::increments, i, static_cast<std::uint64_t>(m) * d + c);
    });

    std::vector<double> controls(n_paths * pc);
    std::vector<double> slice(n_paths * static_cast<std::size_t>(d));
    for (int m = 0; m < M; ++m) {
        parallel_for(n_paths, [&](std::size_t i) {
            const double* s = e.state_ptr(i, m);
            for (int c = 0; c < d; ++c) slice[i * d + c] = s[c];
        });
        policy.evaluate_batch(m, slice.data(), n_paths, d, controls.data(), pc);
        const double t = p.grid.t(m);
        std::atomic<long> bad{-1};
        parallel_for(n_paths, [&](std::size_t i) {
            const Vec x = Eigen::Map<const Vec>(e.state_ptr(i, m), d);
            const Vec u = Eigen::Map<const Vec>(&controls[i * pc], pc);
            const Vec b = p.dynamics.drift(t, x, u);
            const Mat sig = p.dynamics.diffusion(t, x);
            const Eigen::Map<const Vec> xi(&e.increments[(i * M + m) * d], d);
            const Vec next = x + b * dt + sig * (sdt * xi);
            double* out = e.state_ptr(i, m + 1);
            for (int c = 0; c < d; ++c) {
                if (!std::isfinite(next[c])) bad.store(static_cast<long>(i));
                out[c] = next[c];
            }
        });
        if (bad.load() >= 0)
            throw SimulationError("simulate_ensemble: non-finite state at path " +
                                  std::to_string(bad.load()) + ", step " + std::to_string(m + 1));
    }
    return e;
}

PathCostVector accumulate_path_cost(const ControlProblem& p, const PathEnsemble& e,
                                    const MarkovPolicy& policy) {
    if (e.grid.steps != p.grid.steps || e.grid.t_end != p.grid.t_end)
        throw StructuralError("accumulate_path_cost: ensemble grid differs from problem grid");
    const int d = e.dim;
    const int pc = p.control_dim();
    const int M = e.grid.steps;
    const double dt = e.grid.dt();
    PathCostVector phi;
    phi.values.assign(e.n_paths, 0.0);

    std::vector<double> controls(e.n_paths * pc);
    std::vector<double> slice(e.n_paths * static_cast<std::size_t>(d));
    for (int m = 0; m < M; ++m) {
        parallel_for(e.n_paths, [&](std::size_t i) {
            const double* s = e.state_ptr(i, m);
            for (int c = 0; c < d; ++c) slice[i * d + c] = s[c];
        });
        policy.evaluate_batch(m, slice.data(), e.n_paths, d, controls.data(), pc);
        const double t = e.grid.t(m);
        parallel_for(e.n_paths, [&](std::size_t i) {
            const Vec x = Eigen::Map<const Vec>(e.state_ptr(i, m), d);
            const Vec u = Eigen::Map<const Vec>(&controls[i * pc], pc);
            phi.values[i] += p.cost.running(t, x, u) * dt;
        });
    }
    if (p.cost.terminal) {
        parallel_for(e.n_paths, [&](std::size_t i) {
            phi.values[i] += p.cost.terminal(e.state_vec(i, M));
        });
    }
    return phi;
}

EmpiricalDistribution empirical_marginal(const PathEnsemble& e, int t_index,
                                         const std::vector<double>* weights) {
    if (t_index < 0 || t_index > e.grid.steps)
        throw ParameterError("empirical_marginal: time index out of range");
    EmpiricalDistribution out;
    out.samples.resize(static_cast<long>(e.n_paths), e.dim);
    for (std::size_t i = 0; i < e.n_paths; ++i)
        for (int c = 0; c < e.dim; ++c) out.samples(static_cast<long>(i), c) = e.state(i, t_index, c);
    if (weights) out.weights = *weights;
    return out;
}

}  // namespace epmc
