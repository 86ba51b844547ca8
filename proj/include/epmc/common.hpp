#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace epmc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StructuralError : Error { using Error::Error; };   // dimension / config mismatches
struct ParameterError : Error { using Error::Error; };    // invalid numeric parameters
struct SimulationError : Error { using Error::Error; };   // NaN / blow-up during path generation
struct EstimationError : Error { using Error::Error; };   // regression / density estimation failure
struct MviError : Error { using Error::Error; };          // residual certification failure
struct SolverError : Error { using Error::Error; };       // alternating-loop failure with context
struct IoError : Error { using Error::Error; };

/// log(sum(exp(v))) with max shift.
inline double log_sum_exp(std::span<const double> v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

inline double sqr(double x) { return x * x; }

/// Mean and (population, 1/N) variance in one pass.
inline std::pair<double, double> mean_var(std::span<const double> v) {
    const auto n = static_cast<double>(v.size());
    double m = 0.0;
    for (double x : v) m += x;
    m /= n;
    double s = 0.0;
    for (double x : v) s += sqr(x - m);
    return {m, s / n};
}

/// Batch-means standard error of the mean of `v` (B contiguous batches).
inline double batch_se(std::span<const double> v, int batches = 32) {
    const std::size_t n = v.size();
    if (n < 2) return 0.0;
    const int B = std::min<int>(batches, static_cast<int>(n));
    std::vector<double> bm(B, 0.0);
    std::vector<int> cnt(B, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int b = static_cast<int>(i * B / n);
        bm[b] += v[i];
        ++cnt[b];
    }
    double g = 0.0;
    for (int b = 0; b < B; ++b) { bm[b] /= cnt[b]; g += bm[b]; }
    g /= B;
    double s2 = 0.0;
    for (int b = 0; b < B; ++b) s2 += sqr(bm[b] - g);
    s2 /= (B - 1.0);
    return std::sqrt(s2 / B);
}

/// Halton sequence point (index i >= 0) in [0,1)^dim.
inline void halton_point(std::size_t i, int dim, double* out) {
    static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29,
                                     31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
    for (int d = 0; d < dim; ++d) {
        const int base = primes[d % 20];
        double f = 1.0, r = 0.0;
        std::size_t n = i + 1;  // skip the all-zero point
        while (n > 0) {
            f /= base;
            r += f * static_cast<double>(n % base);
            n /= base;
        }
        out[d] = r;
    }
}

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

/// Standard normal density.
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

/// Run fn(i) for i in [0, n). Splits across threads; each index is
/// computed independently so parallel and serial runs agree bitwise.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    unsigned hw = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("EPMC_THREADS")) hw = std::max(1, std::atoi(env));
    if (hw <= 1 || n < 2048) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned nt = std::min<std::size_t>(hw, n);
    std::vector<std::thread> pool;
    pool.reserve(nt);
    std::exception_ptr err;
    std::mutex err_mu;
    for (unsigned t = 0; t < nt; ++t) {
        pool.emplace_back([&, t] {
            const std::size_t lo = n * t / nt, hi = n * (t + 1) / nt;
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> g(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace epmc
