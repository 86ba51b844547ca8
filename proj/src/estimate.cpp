#include "epmc/estimate.hpp"

#include <atomic>
#include <numeric>

#include "epmc/kdtree.hpp"

namespace epmc {

namespace {

constexpr double kKernelRadius = 4.5;  // in bandwidth units; truncates at exp(-10.1)

Vec per_dim_bandwidth(const Mat& samples, const RegressionConfig& cfg) {
    const long n = samples.rows();
    const int d = static_cast<int>(samples.cols());
    Vec h(d);
    if (cfg.bandwidth == RegressionConfig::Bandwidth::fixed) {
        h.setConstant(cfg.fixed_h);
        return h;
    }
    const double rate = std::pow(static_cast<double>(n), -1.0 / (d + 4));
    for (int c = 0; c < d; ++c) {
        const double mu = samples.col(c).mean();
        const double sd = std::sqrt((samples.col(c).array() - mu).square().sum() / n);
        h[c] = std::max(cfg.bandwidth_scale * sd * rate, 1e-12 * (1.0 + std::abs(mu)));
    }
    return h;
}

// ---- one-dimensional binned kernel engine ----------------------------------

struct Binned1d {
    double lo = 0.0, dx = 1.0, h = 1.0;
    double total_mass = 0.0;
    std::vector<double> smooth_mass;  // kernel-convolved mass
    std::vector<double> smooth_num;   // kernel-convolved numerator (optional)

    // samples x_j with mass w_j and optional numerator values a_j (>= 0)
    void build(std::span<const double> xs, const double* w, const double* a, double bandwidth) {
        constexpr int G = 8192;
        h = bandwidth;
        double mn = xs[0], mx = xs[0];
        for (double v : xs) { mn = std::min(mn, v); mx = std::max(mx, v); }
        lo = mn - 6.0 * h;
        const double hi = mx + 6.0 * h;
        dx = (hi - lo) / (G - 1);
        if (!(dx > 0.0)) dx = 1.0;
        std::vector<double> mass(G, 0.0), num(a ? G : 0, 0.0);
        total_mass = 0.0;
        for (std::size_t j = 0; j < xs.size(); ++j) {
            const double wj = w ? w[j] : 1.0;
            int g = static_cast<int>((xs[j] - lo) / dx + 0.5);
            g = std::clamp(g, 0, G - 1);
            mass[g] += wj;
            if (a) num[g] += wj * a[j];
            total_mass += wj;
        }
        const int taps = std::min(G - 1, static_cast<int>(std::ceil(6.0 * h / dx)));
        std::vector<double> ker(taps + 1);
        for (int t = 0; t <= taps; ++t) ker[t] = std::exp(-0.5 * sqr(t * dx / h));
        auto convolve = [&](const std::vector<double>& src) {
            std::vector<double> out(G, 0.0);
            for (int g = 0; g < G; ++g) {
                const double m = src[g];
                if (m == 0.0) continue;
                out[g] += m;
                for (int t = 1; t <= taps; ++t) {
                    const double km = ker[t] * m;
                    if (g - t >= 0) out[g - t] += km;
                    if (g + t < G) out[g + t] += km;
                }
            }
            return out;
        };
        smooth_mass = convolve(mass);
        if (a) smooth_num = convolve(num);
    }

    double interp(const std::vector<double>& v, double x) const {
        const double q = std::clamp((x - lo) / dx, 0.0, static_cast<double>(v.size() - 1));
        const auto g0 = static_cast<std::size_t>(q);
        const std::size_t g1 = std::min(g0 + 1, v.size() - 1);
        const double f = q - static_cast<double>(g0);
        return v[g0] * (1.0 - f) + v[g1] * f;
    }

    double log_density(double x) const {
        const double m = interp(smooth_mass, x);
        return std::log(std::max(m, 1e-300)) - std::log(total_mass) -
               std::log(std::sqrt(2.0 * M_PI) * h);
    }
    // Nadaraya-Watson ratio; false when all mass underflowed
    bool ratio(double x, double& out) const {
        const double den = interp(smooth_mass, x);
        if (!(den > 0.0)) return false;
        out = interp(smooth_num, x) / den;
        return true;
    }
};

// ---- d >= 2 truncated kernel traversal --------------------------------------

struct ScaledKernelEngine {
    KdTree tree;
    std::vector<double> scaled;  // n x d
    Vec h;
    long n = 0;
    int d = 0;

    void build(const Mat& samples, const Vec& bandwidth) {
        n = samples.rows();
        d = static_cast<int>(samples.cols());
        h = bandwidth;
        scaled.resize(static_cast<std::size_t>(n) * d);
        for (long i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) scaled[i * d + c] = samples(i, c) / h[c];
        tree.build(scaled.data(), n, d);
    }

    // accumulate s0 = sum K, s1 = sum K * a_j over points within the radius
    void sums(const double* query_scaled, const double* a, double& s0, double& s1) const {
        s0 = 0.0;
        s1 = 0.0;
        tree.for_each_within(query_scaled, kKernelRadius, [&](int j, double d2) {
            const double k = std::exp(-0.5 * d2);
            s0 += k;
            if (a) s1 += k * a[j];
        });
    }
};

}  // namespace

std::vector<double> conditional_expectation(const Mat& x_samples, const std::vector<double>& y,
                                            const std::vector<double>* weights, const Mat& queries,
                                            const RegressionConfig& cfg,
                                            RegressionDiagnostics* diag) {
    cfg.check();
    const long n = x_samples.rows();
    const int d = static_cast<int>(x_samples.cols());
    if (static_cast<long>(y.size()) != n)
        throw StructuralError("conditional_expectation: x/y size mismatch");
    if (n < cfg.min_neighbors)
        throw ParameterError("conditional_expectation: fewer samples than min_neighbors");
    std::vector<double> out(queries.rows());

    if (cfg.method == RegressionConfig::Method::knn) {
        const int k = std::min<long>(cfg.k, n);
        Sorted1d line;
        KdTree tree;
        std::vector<double> flat(static_cast<std::size_t>(n) * d);
        for (long i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) flat[i * d + c] = x_samples(i, c);
        if (d == 1)
            line.build(flat);
        else
            tree.build(flat.data(), n, d);
        std::atomic<std::size_t> falls{0};
        parallel_for(queries.rows(), [&](std::size_t qi) {
            thread_local std::vector<int> nb;
            thread_local std::vector<std::pair<double, int>> heap;
            const Vec q = queries.row(static_cast<long>(qi));
            if (d == 1) {
                line.knn(q[0], k, nb);
            } else {
                tree.knn(q.data(), k, heap);
                nb.clear();
                for (const auto& [d2, j] : heap) nb.push_back(j);
            }
            double sw = 0.0, sy = 0.0;
            for (int j : nb) {
                const double wj = weights ? (*weights)[j] : 1.0;
                sw += wj;
                sy += wj * y[j];
            }
            if (sw > 0.0) {
                out[qi] = sy / sw;
            } else {
                out[qi] = y[nb.front()];
                ++falls;
            }
        });
        if (diag) diag->kernel_fallbacks += falls.load();
        return out;
    }

    const Vec h = per_dim_bandwidth(x_samples, cfg);
    if (d == 1) {
        std::vector<double> xs(n);
        for (long i = 0; i < n; ++i) xs[i] = x_samples(i, 0);
        // NW handles signed y by splitting into positive and negative parts
        std::vector<double> ypos(n), yneg(n);
        for (long i = 0; i < n; ++i) {
            ypos[i] = std::max(y[i], 0.0);
            yneg[i] = std::max(-y[i], 0.0);
        }
        Binned1d pos, neg;
        pos.build(xs, weights ? weights->data() : nullptr, ypos.data(), h[0]);
        neg.build(xs, weights ? weights->data() : nullptr, yneg.data(), h[0]);
        KdTree tree(xs.data(), n, 1);
        for (long qi = 0; qi < queries.rows(); ++qi) {
            const double q = queries(qi, 0);
            double rp = 0.0, rn = 0.0;
            if (pos.ratio(q, rp) && neg.ratio(q, rn)) {
                out[qi] = rp - rn;
            } else {
                out[qi] = y[tree.nearest(&q)];
                if (diag) ++diag->kernel_fallbacks;
            }
        }
        return out;
    }

    ScaledKernelEngine eng;
    eng.build(x_samples, h);
    std::vector<double> wy(n), wonly(n);
    for (long i = 0; i < n; ++i) {
        wonly[i] = weights ? (*weights)[i] : 1.0;
        wy[i] = wonly[i] * y[i];
    }
    std::atomic<std::size_t> falls{0};
    parallel_for(queries.rows(), [&](std::size_t qi) {
        Vec qs = queries.row(static_cast<long>(qi));
        for (int c = 0; c < d; ++c) qs[c] /= h[c];
        double sw = 0.0, s1 = 0.0;
        eng.tree.for_each_within(qs.data(), kKernelRadius, [&](int j, double d2) {
            const double k = std::exp(-0.5 * d2);
            sw += k * wonly[j];
            s1 += k * wy[j];
        });
        if (sw > 0.0) {
            out[qi] = s1 / sw;
        } else {
            out[qi] = y[eng.tree.nearest(qs.data())];
            ++falls;
        }
    });
    if (diag) diag->kernel_fallbacks += falls.load();
    return out;
}

std::vector<double> conditional_log_mean_exp(const Mat& x_samples, const std::vector<double>& log_y,
                                             const Mat& queries, const RegressionConfig& cfg) {
    cfg.check();
    const long n = x_samples.rows();
    const int d = static_cast<int>(x_samples.cols());
    std::vector<double> out(queries.rows());
    const double shift = *std::max_element(log_y.begin(), log_y.end());

    if (cfg.method == RegressionConfig::Method::knn) {
        const int k = std::min<long>(cfg.k, n);
        Sorted1d line;
        KdTree tree;
        std::vector<double> flat(static_cast<std::size_t>(n) * d);
        for (long i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) flat[i * d + c] = x_samples(i, c);
        if (d == 1)
            line.build(flat);
        else
            tree.build(flat.data(), n, d);
        std::vector<double> ey(n);
        for (long i = 0; i < n; ++i) ey[i] = std::exp(log_y[i] - shift);
        parallel_for(queries.rows(), [&](std::size_t qi) {
            thread_local std::vector<int> nb;
            thread_local std::vector<std::pair<double, int>> heap;
            const Vec q = queries.row(static_cast<long>(qi));
            if (d == 1) {
                line.knn(q[0], k, nb);
            } else {
                tree.knn(q.data(), k, heap);
                nb.clear();
                for (const auto& [d2, j] : heap) nb.push_back(j);
            }
            double s = 0.0;
            for (int j : nb) s += ey[j];
            out[qi] = std::log(std::max(s, 1e-300) / static_cast<double>(nb.size())) + shift;
        });
        return out;
    }

    const Vec h = per_dim_bandwidth(x_samples, cfg);
    std::vector<double> a(n);
    for (long i = 0; i < n; ++i) a[i] = std::exp(log_y[i] - shift);
    if (d == 1) {
        std::vector<double> xs(n);
        for (long i = 0; i < n; ++i) xs[i] = x_samples(i, 0);
        Binned1d eng;
        eng.build(xs, nullptr, a.data(), h[0]);
        KdTree tree(xs.data(), n, 1);
        for (long qi = 0; qi < queries.rows(); ++qi) {
            double r = 0.0;
            if (eng.ratio(queries(qi, 0), r) && r > 0.0)
                out[qi] = std::log(r) + shift;
            else
                out[qi] = log_y[tree.nearest(&queries(qi, 0))];
        }
        return out;
    }
    ScaledKernelEngine eng;
    eng.build(x_samples, h);
    parallel_for(queries.rows(), [&](std::size_t qi) {
        Vec qs = queries.row(static_cast<long>(qi));
        for (int c = 0; c < d; ++c) qs[c] /= h[c];
        double s0 = 0.0, s1 = 0.0;
        eng.sums(qs.data(), a.data(), s0, s1);
        if (s0 > 0.0 && s1 > 0.0)
            out[qi] = std::log(s1 / s0) + shift;
        else
            out[qi] = log_y[eng.tree.nearest(qs.data())];
    });
    return out;
}

std::vector<double> kde_log_density(const Mat& samples, const Mat& queries,
                                    const RegressionConfig& cfg) {
    const long n = samples.rows();
    const int d = static_cast<int>(samples.cols());
    const Vec h = per_dim_bandwidth(samples, cfg);
    std::vector<double> out(queries.rows());
    if (d == 1) {
        std::vector<double> xs(n);
        for (long i = 0; i < n; ++i) xs[i] = samples(i, 0);
        Binned1d eng;
        eng.build(xs, nullptr, nullptr, h[0]);
        for (long qi = 0; qi < queries.rows(); ++qi) out[qi] = eng.log_density(queries(qi, 0));
        return out;
    }
    ScaledKernelEngine eng;
    eng.build(samples, h);
    double log_norm = std::log(static_cast<double>(n));
    for (int c = 0; c < d; ++c) log_norm += std::log(std::sqrt(2.0 * M_PI) * h[c]);
    parallel_for(queries.rows(), [&](std::size_t qi) {
        Vec qs = queries.row(static_cast<long>(qi));
        for (int c = 0; c < d; ++c) qs[c] /= h[c];
        double s0 = 0.0, s1 = 0.0;
        eng.sums(qs.data(), nullptr, s0, s1);
        out[qi] = std::log(std::max(s0, 1e-300)) - log_norm;
    });
    return out;
}

std::vector<double> density_ratio_log(const DistributionSpec& target, const Mat& samples,
                                      const RegressionConfig& cfg) {
    if (!target.density_evaluable())
        throw ParameterError("density_ratio: target density is not evaluable");
    std::vector<double> lk = kde_log_density(samples, samples, cfg);
    std::vector<double> out(lk.size());
    if (const auto* emp = std::get_if<DistributionSpec::Empirical>(&target.kind)) {
        // empirical target: estimate its density with the same kernel rule,
        // so a self-target gives a ratio of exactly one
        const std::vector<double> lt = kde_log_density(emp->samples, samples, cfg);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = lt[i] - lk[i];
        return out;
    }
    for (long i = 0; i < samples.rows(); ++i) {
        const double lt = target.log_density(samples.row(i));
        out[i] = lt - lk[i];
    }
    return out;
}

std::vector<double> density_ratio(const DistributionSpec& target, const Mat& samples,
                                  const RegressionConfig& cfg) {
    std::vector<double> lg = density_ratio_log(target, samples, cfg);
    for (double& v : lg) v = std::exp(v);
    return lg;
}

std::vector<double> kde1d(const std::vector<double>& samples, const std::vector<double>* weights,
                          const std::vector<double>& queries, double bandwidth) {
    Binned1d eng;
    eng.build(samples, weights ? weights->data() : nullptr, nullptr, bandwidth);
    std::vector<double> out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i)
        out[i] = std::exp(eng.log_density(queries[i]));
    return out;
}

DriftField nelson_drift(std::shared_ptr<const PathEnsemble> ensemble,
                        const std::vector<double>& weights, const RegressionConfig& cfg,
                        const ControlProblem& problem) {
    cfg.check();
    if (weights.size() != ensemble->n_paths)
        throw StructuralError("nelson_drift: weights do not match the ensemble");
    const int M = ensemble->grid.steps;
    const int d = ensemble->dim;
    const auto n = static_cast<long>(ensemble->n_paths);

    const bool kernel = cfg.method == RegressionConfig::Method::gaussian_kernel;
    auto trees = std::make_shared<std::vector<KdTree>>();
    auto lines = std::make_shared<std::vector<Sorted1d>>();
    auto hs = std::make_shared<std::vector<Vec>>();  // per-slice kernel bandwidths
    {
        if (kernel) hs->resize(M);
        if (d == 1)
            lines->resize(M);
        else
            trees->resize(M);
        std::vector<double> flat(static_cast<std::size_t>(n) * d);
        Mat slice(n, d);
        for (int m = 0; m < M; ++m) {
            for (long i = 0; i < n; ++i)
                for (int c = 0; c < d; ++c) {
                    flat[i * d + c] = ensemble->state(i, m, c);
                    if (kernel) slice(i, c) = flat[i * d + c];
                }
            if (d == 1)
                (*lines)[m].build(flat);
            else
                (*trees)[m].build(flat.data(), n, d);
            if (kernel) (*hs)[m] = per_dim_bandwidth(slice, cfg);
        }
    }
    auto w = std::make_shared<std::vector<double>>(weights);
    auto diffusion = problem.dynamics.diffusion;
    const double dt = ensemble->grid.dt();
    const double sdt = std::sqrt(dt);
    const RegressionConfig c = cfg;
    auto fallbacks = std::make_shared<std::atomic<long>>(0);

    DriftField field;
    field.steps_ = M;
    field.fallbacks_ = fallbacks;
    field.eval_ = [ensemble, trees, lines, hs, w, diffusion, dt, sdt, c, kernel, M, d,
                   fallbacks](int t_index, const Vec& x) -> Vec {
        const int m = std::clamp(t_index, 0, M - 1);
        const double t = ensemble->grid.t(m);
        const long n = static_cast<long>(ensemble->n_paths);
        thread_local std::vector<int> nb;
        thread_local std::vector<double> kw;
        thread_local std::vector<std::pair<double, int>> heap;

        auto gather_knn = [&](int k) {
            nb.clear();
            if (d == 1) {
                (*lines)[m].knn(x[0], k, nb);
            } else {
                (*trees)[m].knn(x.data(), k, heap);
                for (const auto& [d2, j] : heap) nb.push_back(j);
            }
        };
        auto gather_kernel = [&](double scale) {
            nb.clear();
            kw.clear();
            const Vec& h = (*hs)[m];
            const double radius = 4.5 * scale * h.maxCoeff();
            auto visit = [&](int j) {
                const double* s0 = ensemble->state_ptr(j, m);
                double z2 = 0.0;
                for (int cc = 0; cc < d; ++cc) z2 += sqr((x[cc] - s0[cc]) / (h[cc] * scale));
                if (z2 <= sqr(4.5)) {
                    nb.push_back(j);
                    kw.push_back(std::exp(-0.5 * z2));
                }
            };
            if (d == 1)
                (*lines)[m].for_each_within(x[0], radius, [&](int j, double) { visit(j); });
            else
                (*trees)[m].for_each_within(x.data(), radius, [&](int j, double) { visit(j); });
        };
        auto local_ess = [&]() {
            double sw = 0.0, sw2 = 0.0;
            for (std::size_t q = 0; q < nb.size(); ++q) {
                const double wk = (kernel ? kw[q] : 1.0) * (*w)[nb[q]];
                sw += wk;
                sw2 += wk * wk;
            }
            return sw2 > 0.0 ? sw * sw / sw2 : 0.0;
        };

        bool starved = false;
        if (kernel) {
            gather_kernel(1.0);
            if (local_ess() < c.min_neighbors && nb.size() < static_cast<std::size_t>(n)) {
                gather_kernel(2.0);
                starved = local_ess() < c.min_neighbors;
            }
        } else {
            int k = std::min<long>(c.k, n);
            gather_knn(k);
            if (local_ess() < c.min_neighbors && k < n) {
                gather_knn(std::min<long>(2 * k, n));
                starved = local_ess() < c.min_neighbors;
            }
            kw.assign(nb.size(), 1.0);
        }
        bool use_uniform = false;
        if (starved) {
            if (c.on_starved == RegressionConfig::Starved::error)
                throw EstimationError("nelson_drift: neighborhood ESS below min_neighbors after widening");
            use_uniform = true;
            fallbacks->fetch_add(1);
        }

        Vec num = Vec::Zero(d);
        Vec xi_sum = Vec::Zero(d);
        double sw = 0.0, skw = 0.0;
        for (std::size_t q = 0; q < nb.size(); ++q) {
            const int j = nb[q];
            const double wj = use_uniform ? kw[q] : kw[q] * (*w)[j];
            sw += wj;
            skw += kw[q];
            const double* s0 = ensemble->state_ptr(j, m);
            const double* s1 = ensemble->state_ptr(j, m + 1);
            const double* xi = &ensemble->increments[(static_cast<std::size_t>(j) * M + m) * d];
            for (int cc = 0; cc < d; ++cc) {
                num[cc] += wj * (s1[cc] - s0[cc]) / dt;
                xi_sum[cc] += kw[q] * xi[cc];
            }
        }
        if (!(sw > 0.0) || !(skw > 0.0))
            throw EstimationError("nelson_drift: zero total weight in a neighborhood");
        // sigma at the query point keeps the control variate centered and
        // saves a per-neighbor evaluation
        return num / sw - diffusion(t, x) * xi_sum / (skw * sdt);
    };
    return field;
}

}  // namespace epmc
