#pragma once

#include <atomic>
#include <memory>

#include "epmc/problem.hpp"
#include "epmc/simulate.hpp"

namespace epmc {

struct RegressionConfig {
    enum class Method { knn, gaussian_kernel };
    enum class Bandwidth { scott, fixed };

    enum class Starved { error, uniform_fallback };

    Method method = Method::knn;
    int k = 500;
    Bandwidth bandwidth = Bandwidth::scott;
    double fixed_h = 0.0;          // per-dim bandwidth when fixed
    double bandwidth_scale = 1.0;  // multiplier on the Scott rule
    int min_neighbors = 20;
    // a starved neighborhood (local weight ESS below min_neighbors after one
    // widening) either raises EstimationError or falls back to the
    // uniform-weight estimate; the solver uses the fallback since such cells
    // carry no reweighted mass
    Starved on_starved = Starved::error;

    void check() const {
        if (method == Method::knn && k < 1) throw ParameterError("RegressionConfig: k must be >= 1");
        if (method == Method::gaussian_kernel && bandwidth == Bandwidth::fixed && !(fixed_h > 0.0))
            throw ParameterError("RegressionConfig: fixed bandwidth must be positive");
    }
};

struct RegressionDiagnostics {
    std::size_t kernel_fallbacks = 0;  // queries where all kernel mass underflowed
    std::size_t widened = 0;           // knn neighborhoods widened for ESS
};

/// Weighted nonparametric regression of y on x evaluated at `queries`
/// (both row-major n x d). kNN averages the k nearest responses; the
/// kernel method is Nadaraya-Watson with a Gaussian product kernel.
std::vector<double> conditional_expectation(const Mat& x_samples, const std::vector<double>& y,
                                            const std::vector<double>* weights, const Mat& queries,
                                            const RegressionConfig& cfg,
                                            RegressionDiagnostics* diag = nullptr);

/// log E[exp(log_y) | x = query], evaluated stably in log space. Used
/// for the conditional twist factor gamma_eps where exp(-eps phi)
/// underflows.
std::vector<double> conditional_log_mean_exp(const Mat& x_samples, const std::vector<double>& log_y,
                                             const Mat& queries, const RegressionConfig& cfg);

/// log of the self-inclusive Gaussian-kernel density estimate of the
/// sample cloud at each sample point (Scott bandwidth unless fixed).
std::vector<double> kde_log_density(const Mat& samples, const Mat& queries,
                                    const RegressionConfig& cfg);

/// Radon-Nikodym estimate d(target)/d(sample law) at the samples:
/// target density over a self-inclusive Gaussian KDE.
std::vector<double> density_ratio(const DistributionSpec& target, const Mat& samples,
                                  const RegressionConfig& cfg);
/// Same in log space (what the twist actually consumes).
std::vector<double> density_ratio_log(const DistributionSpec& target, const Mat& samples,
                                      const RegressionConfig& cfg);

/// One-dimensional weighted KDE on explicit query points (used for the
/// terminal-density artifacts).
std::vector<double> kde1d(const std::vector<double>& samples, const std::vector<double>* weights,
                          const std::vector<double>& queries, double bandwidth);

/// Drift field of the reweighted measure, estimated per time slice by
/// the forward-increment regression
///   beta(t_m, x) ~ E_w[(X_{m+1} - X_m)/dt | X_m = x].
/// The stored Gaussian increments enter as a mean-zero control variate:
/// the unweighted neighborhood average of sigma xi / sqrt(dt) is
/// subtracted, which removes most of the martingale noise while leaving
/// the weighted tilt intact.
class DriftField {
public:
    DriftField() = default;
    Vec operator()(int t_index, const Vec& x) const { return eval_(t_index, x); }
    int steps() const { return steps_; }
    long starved_fallbacks() const { return fallbacks_ ? fallbacks_->load() : 0; }

    std::function<Vec(int, const Vec&)> eval_;
    int steps_ = 0;
    std::shared_ptr<std::atomic<long>> fallbacks_;
};

class ControlProblem;

DriftField nelson_drift(std::shared_ptr<const PathEnsemble> ensemble,
                        const std::vector<double>& weights, const RegressionConfig& cfg,
                        const ControlProblem& problem);

}  // namespace epmc
