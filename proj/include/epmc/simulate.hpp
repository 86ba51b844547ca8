#pragma once

#include <memory>

#include "epmc/problem.hpp"

namespace epmc {

/// N Euler-Maruyama trajectories on the problem grid. The Gaussian
/// increments are kept so that a run can be repeated with a new policy
/// under common random numbers, and so estimators can reuse the noise.
struct PathEnsemble {
    std::size_t n_paths = 0;
    int dim = 0;
    TimeGrid grid;
    std::uint64_t seed = 0;
    std::vector<double> states;      // n x (M+1) x d
    std::vector<double> increments;  // n x M x d, standard normals

    double state(std::size_t i, int m, int c) const {
        return states[(i * (grid.steps + 1) + m) * dim + c];
    }
    double* state_ptr(std::size_t i, int m) {
        return &states[(i * (grid.steps + 1) + m) * dim];
    }
    const double* state_ptr(std::size_t i, int m) const {
        return &states[(i * (grid.steps + 1) + m) * dim];
    }
    double increment(std::size_t i, int m, int c) const {
        return increments[(i * grid.steps + m) * dim + c];
    }
    Vec state_vec(std::size_t i, int m) const {
        return Eigen::Map<const Vec>(state_ptr(i, m), dim);
    }
};

struct PathCostVector {
    std::vector<double> values;  // phi_i
};

/// Feedback control u(t_m, x). Policies are immutable once built.
class MarkovPolicy {
public:
    virtual ~MarkovPolicy() = default;
    virtual Vec at(int t_index, const Vec& x) const = 0;
    /// Batch hook used by the simulator: controls is n x p row-major.
    virtual void evaluate_batch(int t_index, const double* states, std::size_t n,
                                int dim, double* controls, int p) const {
        for (std::size_t i = 0; i < n; ++i) {
            const Vec x = Eigen::Map<const Vec>(states + i * dim, dim);
            Eigen::Map<Vec>(controls + i * p, p) = at(t_index, x);
        }
    }
    virtual std::string representation() const { return "closed_form"; }
};

/// Policy from a plain function (t_index, x) -> u.
class ClosedFormPolicy final : public MarkovPolicy {
public:
    ClosedFormPolicy(std::function<Vec(int, const Vec&)> fn, ControlBox box)
        : fn_(std::move(fn)), box_(std::move(box)) {}
    Vec at(int t_index, const Vec& x) const override {
        return box_.project(fn_(t_index, x));
    }

private:
    std::function<Vec(int, const Vec&)> fn_;
    ControlBox box_;
};

inline std::shared_ptr<MarkovPolicy> constant_policy(const Vec& u, const ControlBox& box) {
    return std::make_shared<ClosedFormPolicy>([u](int, const Vec&) { return u; }, box);
}

/// Euler-Maruyama ensemble under `policy`; bitwise reproducible from
/// (problem, policy, n_paths, seed).
PathEnsemble simulate_ensemble(const ControlProblem& p, const MarkovPolicy& policy,
                               std::size_t n_paths, std::uint64_t seed);

/// Left-endpoint running cost plus terminal cost per path.
PathCostVector accumulate_path_cost(const ControlProblem& p, const PathEnsemble& e,
                                    const MarkovPolicy& policy);

struct EmpiricalDistribution {
    Mat samples;                 // n x d
    std::vector<double> weights; // empty => uniform
};

EmpiricalDistribution empirical_marginal(const PathEnsemble& e, int t_index,
                                         const std::vector<double>* weights = nullptr);

}  // namespace epmc
