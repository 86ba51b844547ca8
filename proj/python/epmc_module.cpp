#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "epmc/artifacts.hpp"
#include "epmc/config.hpp"
#include "epmc/mvi.hpp"
#include "epmc/oracle.hpp"
#include "epmc/solver.hpp"
#include "epmc/stats.hpp"

namespace py = pybind11;
using namespace epmc;

namespace {

py::array_t<double> states_array(const PathEnsemble& e) {
    const auto n = static_cast<py::ssize_t>(e.n_paths);
    const py::ssize_t m = e.grid.steps + 1;
    const py::ssize_t d = e.dim;
    py::array_t<double> a({n, m, d});
    std::copy(e.states.begin(), e.states.end(), a.mutable_data());
    return a;
}

py::array_t<double> increments_array(const PathEnsemble& e) {
    const auto n = static_cast<py::ssize_t>(e.n_paths);
    const py::ssize_t m = e.grid.steps;
    const py::ssize_t d = e.dim;
    py::array_t<double> a({n, m, d});
    std::copy(e.increments.begin(), e.increments.end(), a.mutable_data());
    return a;
}

py::dict report_dict(const IterateReport& r) {
    py::dict d;
    d["k"] = r.k;
    d["J"] = r.J;
    d["J_se"] = r.J_se;
    d["penalized"] = r.penalized;
    d["penalized_se"] = r.penalized_se;
    d["entropy"] = r.entropy;
    d["expected_cost_q"] = r.expected_cost_q;
    d["ess"] = r.ess;
    d["terminal_fit"] = r.terminal_fit;
    d["admissibility"] = r.admissibility;
    d["var_bound"] = r.var_bound;
    d["sandwich_gap"] = r.sandwich_gap;
    d["sandwich_se"] = r.sandwich_se;
    d["ess_warning"] = r.ess_warning;
    return d;
}

RegressionConfig regression_from_kwargs(const std::string& method, int k, double bandwidth,
                                        double bandwidth_scale, int min_neighbors) {
    RegressionConfig c;
    c.method = method == "kernel" ? RegressionConfig::Method::gaussian_kernel
                                  : RegressionConfig::Method::knn;
    c.k = k;
    if (bandwidth > 0.0) {
        c.bandwidth = RegressionConfig::Bandwidth::fixed;
        c.fixed_h = bandwidth;
    }
    c.bandwidth_scale = bandwidth_scale;
    c.min_neighbors = min_neighbors;
    return c;
}

}  // namespace

PYBIND11_MODULE(_epmc, m) {
    m.doc() = "entropy-penalized Monte-Carlo solver for stochastic control with constraints in law";

    py::register_exception<Error>(m, "EpmcError");

    py::class_<TimeGrid>(m, "TimeGrid")
        .def(py::init<double, int>(), py::arg("t_end"), py::arg("steps"))
        .def_readonly("t_end", &TimeGrid::t_end)
        .def_readonly("steps", &TimeGrid::steps)
        .def("dt", &TimeGrid::dt);

    py::class_<ControlProblem>(m, "ControlProblem")
        .def_property_readonly("state_dim", &ControlProblem::state_dim)
        .def_property_readonly("control_dim", &ControlProblem::control_dim)
        .def_property_readonly("steps", [](const ControlProblem& p) { return p.grid.steps; })
        .def_property_readonly("horizon", [](const ControlProblem& p) { return p.grid.t_end; })
        .def("eval_cost_rate", &ControlProblem::eval_cost_rate)
        .def("eval_drift", &ControlProblem::eval_drift);

    py::class_<HvacParams>(m, "HvacParams")
        .def_static("defaults", &HvacParams::defaults, py::arg("d") = 5)
        .def_readwrite("d", &HvacParams::d)
        .def_readwrite("theta", &HvacParams::theta)
        .def_readwrite("x_out", &HvacParams::x_out)
        .def_readwrite("kappa", &HvacParams::kappa)
        .def_readwrite("p_max", &HvacParams::p_max)
        .def_readwrite("sigma", &HvacParams::sigma)
        .def_readwrite("x_min", &HvacParams::x_min)
        .def_readwrite("x_max", &HvacParams::x_max)
        .def_readwrite("c_track", &HvacParams::c_track)
        .def_readwrite("gamma_cost", &HvacParams::gamma_cost)
        .def_readwrite("lambda_cost", &HvacParams::lambda_cost)
        .def_readwrite("r0", &HvacParams::r0)
        .def_readwrite("r1", &HvacParams::r1)
        .def_readwrite("target_mean", &HvacParams::target_mean)
        .def_readwrite("target_var", &HvacParams::target_var)
        .def_readwrite("horizon", &HvacParams::horizon)
        .def_readwrite("steps", &HvacParams::steps);

    m.def("build_hvac_instance", &build_hvac_instance);
    m.def("make_lq_problem",
          [](double q, double r, double T, double sigma, double box, int steps, double x0_mean,
             double x0_var) {
              DistributionSpec init =
                  x0_var > 0.0 ? DistributionSpec::gaussian(Vec::Constant(1, x0_mean),
                                                            Vec::Constant(1, x0_var))
                               : DistributionSpec::dirac(Vec::Constant(1, x0_mean));
              return make_lq_problem(q, r, T, sigma, box, steps, std::move(init));
          },
          py::arg("q") = 1.0, py::arg("r") = 1.0, py::arg("T") = 1.0, py::arg("sigma") = 1.0,
          py::arg("box") = 5.0, py::arg("steps") = 50, py::arg("x0_mean") = 0.0,
          py::arg("x0_var") = 0.0);
    m.def("make_bridge_problem", &make_bridge_problem, py::arg("target_mean") = 1.0,
          py::arg("target_var") = 0.25, py::arg("T") = 1.0, py::arg("sigma") = 1.0,
          py::arg("box") = 6.0, py::arg("steps") = 50);

    m.def("validate_problem",
          [](const ControlProblem& p, int n, std::uint64_t seed) {
              const ValidationReport r = validate_problem(p, n, seed);
              py::list checks;
              for (const auto& c : r.checks) {
                  py::dict d;
                  d["name"] = c.name;
                  d["pass"] = c.pass;
                  d["detail"] = c.detail;
                  checks.append(d);
              }
              py::dict out;
              out["ok"] = r.ok();
              out["checks"] = checks;
              return out;
          },
          py::arg("problem"), py::arg("n_samples") = 1000, py::arg("seed") = 0);

    py::class_<MarkovPolicy, std::shared_ptr<MarkovPolicy>>(m, "MarkovPolicy")
        .def("at", &MarkovPolicy::at)
        .def("representation", &MarkovPolicy::representation);

    m.def("constant_policy",
          [](const ControlProblem& p, const Vec& u) { return constant_policy(u, p.box); });
    m.def("midpoint_policy",
          [](const ControlProblem& p) { return constant_policy(p.box.midpoint(), p.box); });
    m.def("hvac_holding_policy", [](const HvacParams& h, const ControlProblem& p) {
        return std::shared_ptr<MarkovPolicy>(std::make_shared<ClosedFormPolicy>(
            [h](int, const Vec& x) { return hvac_holding_control(h, x); }, p.box));
    });

    py::class_<PathEnsemble, std::shared_ptr<PathEnsemble>>(m, "PathEnsemble")
        .def_property_readonly("n_paths", [](const PathEnsemble& e) { return e.n_paths; })
        .def_property_readonly("dim", [](const PathEnsemble& e) { return e.dim; })
        .def_property_readonly("seed", [](const PathEnsemble& e) { return e.seed; })
        .def_property_readonly("states", &states_array)
        .def_property_readonly("increments", &increments_array);

    m.def("simulate_ensemble",
          [](const ControlProblem& p, const std::shared_ptr<MarkovPolicy>& policy,
             std::size_t n_paths, std::uint64_t seed) {
              return std::make_shared<PathEnsemble>(simulate_ensemble(p, *policy, n_paths, seed));
          });
    m.def("accumulate_path_cost",
          [](const ControlProblem& p, const std::shared_ptr<PathEnsemble>& e,
             const std::shared_ptr<MarkovPolicy>& policy) {
              return accumulate_path_cost(p, *e, *policy).values;
          });
    m.def("empirical_marginal",
          [](const std::shared_ptr<PathEnsemble>& e, int t_index,
             std::optional<std::vector<double>> weights) {
              const EmpiricalDistribution d =
                  empirical_marginal(*e, t_index, weights ? &*weights : nullptr);
              return py::make_tuple(d.samples, d.weights);
          },
          py::arg("ensemble"), py::arg("t_index"), py::arg("weights") = std::nullopt);

    m.def("twist_unconstrained", [](const std::vector<double>& phi, double eps) {
        const TwistResult r = twist_unconstrained(PathCostVector{phi}, eps);
        py::dict d;
        d["weights"] = r.weights.w;
        d["value"] = r.value;
        d["entropy"] = r.entropy;
        d["expected_cost"] = r.expected_cost;
        d["ess"] = r.weights.ess;
        return d;
    });
    m.def("entropy_from_weights", [](const std::vector<double>& w) {
        WeightVector wv;
        wv.w = w;
        return entropy_from_weights(wv);
    });
    m.def("dv_gap_check", [](const std::vector<double>& phi, double eps) {
        const DvGap g = dv_gap_check(PathCostVector{phi}, eps);
        return py::make_tuple(g.gap, g.bound, g.se);
    });

    m.def("conditional_expectation",
          [](const Mat& x, const std::vector<double>& y, std::optional<std::vector<double>> w,
             const Mat& q, const std::string& method, int k, double bandwidth,
             double bandwidth_scale, int min_neighbors) {
              const RegressionConfig cfg =
                  regression_from_kwargs(method, k, bandwidth, bandwidth_scale, min_neighbors);
              return conditional_expectation(x, y, w ? &*w : nullptr, q, cfg);
          },
          py::arg("x_samples"), py::arg("y"), py::arg("weights"), py::arg("queries"),
          py::arg("method") = "knn", py::arg("k") = 500, py::arg("bandwidth") = 0.0,
          py::arg("bandwidth_scale") = 1.0, py::arg("min_neighbors") = 20);
    m.def("density_ratio",
          [](const Vec& mean, const Vec& variance, const Mat& samples, double bandwidth_scale) {
              RegressionConfig cfg;
              cfg.bandwidth_scale = bandwidth_scale;
              return density_ratio(DistributionSpec::gaussian(mean, variance), samples, cfg);
          },
          py::arg("target_mean"), py::arg("target_variance"), py::arg("samples"),
          py::arg("bandwidth_scale") = 1.0);

    m.def("solve_mvi",
          [](const ControlProblem& p, double t, const Vec& x, const Vec& delta, double eps,
             bool linear_path, int cert_grid) {
              const MviQuery q{t, x, delta, eps};
              const MviSolution s =
                  linear_path ? solve_mvi_linear(q, p, cert_grid) : solve_mvi_convex(q, p);
              py::dict d;
              d["u"] = s.u_bar;
              d["iterations"] = s.iterations;
              d["g_value"] = s.g_value;
              if (s.residual) d["residual"] = *s.residual;
              return d;
          },
          py::arg("problem"), py::arg("t"), py::arg("x"), py::arg("delta"), py::arg("eps"),
          py::arg("linear_path") = false, py::arg("cert_grid") = 33);
    m.def("mvi_residual", [](const ControlProblem& p, double t, const Vec& x, const Vec& delta,
                             double eps, const Vec& u_bar, int grid) {
        const MviQuery q{t, x, delta, eps};
        return mvi_residual(u_bar, q, p, grid);
    });

    py::class_<SolverConfig>(m, "SolverConfig")
        .def(py::init<>())
        .def_readwrite("eps", &SolverConfig::eps)
        .def_readwrite("n_paths", &SolverConfig::n_paths)
        .def_readwrite("n_iterations", &SolverConfig::n_iterations)
        .def_readwrite("mvi_grid", &SolverConfig::mvi_grid)
        .def_readwrite("common_random_numbers", &SolverConfig::common_random_numbers)
        .def_readwrite("seed", &SolverConfig::seed)
        .def_readwrite("ess_floor_fraction", &SolverConfig::ess_floor_fraction)
        .def_readwrite("policy_cells", &SolverConfig::policy_cells)
        .def_readwrite("policy_smoothing_neighbors", &SolverConfig::policy_smoothing_neighbors)
        .def_readwrite("moment_polish_rounds", &SolverConfig::moment_polish_rounds)
        .def_readwrite("early_stop", &SolverConfig::early_stop)
        .def_property(
            "regression_k", [](const SolverConfig& c) { return c.regression.k; },
            [](SolverConfig& c, int k) { c.regression.k = k; })
        .def_property(
            "regression_method",
            [](const SolverConfig& c) {
                return c.regression.method == RegressionConfig::Method::knn ? "knn" : "kernel";
            },
            [](SolverConfig& c, const std::string& mth) {
                c.regression.method = mth == "kernel" ? RegressionConfig::Method::gaussian_kernel
                                                      : RegressionConfig::Method::knn;
            })
        .def_property(
            "bandwidth_scale", [](const SolverConfig& c) { return c.regression.bandwidth_scale; },
            [](SolverConfig& c, double s) { c.regression.bandwidth_scale = s; });

    m.def("run_alternating",
          [](const ControlProblem& p, const SolverConfig& cfg,
             std::shared_ptr<MarkovPolicy> initial, const py::object& callback) {
              std::function<void(const IterateReport&)> cb;
              if (!callback.is_none())
                  cb = [&callback](const IterateReport& r) { callback(report_dict(r)); };
              const RunResult res = run_alternating(p, cfg, initial, cb);
              py::dict d;
              py::list reports;
              for (const auto& r : res.reports) reports.append(report_dict(r));
              d["reports"] = reports;
              d["aborted"] = res.aborted;
              d["abort_reason"] = res.abort_reason;
              d["final_weights"] = res.final_weights.w;
              d["final_policy"] = std::shared_ptr<MarkovPolicy>(
                  std::const_pointer_cast<MarkovPolicy>(res.final_policy));
              d["final_states"] = states_array(*res.final_ensemble);
              return d;
          },
          py::arg("problem"), py::arg("config"), py::arg("initial_policy") = nullptr,
          py::arg("on_iterate") = py::none());

    m.def("reference_lq_solution", [](double q, double r, double T, double sigma, double x0_mean,
                                      double x0_var, int steps) {
        const LqReference ref = reference_lq_solution({q, r, T, sigma, x0_mean, x0_var, steps});
        py::dict d;
        d["J_star"] = ref.J_star;
        d["gain"] = ref.gain;
        d["box_warning"] = ref.box_warning;
        return d;
    }, py::arg("q") = 1.0, py::arg("r") = 1.0, py::arg("T") = 1.0, py::arg("sigma") = 1.0,
       py::arg("x0_mean") = 0.0, py::arg("x0_var") = 0.0, py::arg("steps") = 2000);

    m.def("entropy_drift_shift_analytic", [](const Vec& b1, const Vec& b2, const Mat& sigma,
                                             double T) {
        return entropy_drift_shift_analytic({b1, b2, sigma, T});
    });
    m.def("entropy_poisson_analytic", [](double l1, double l2, double T) {
        return entropy_poisson_analytic({l1, l2, T});
    });
    m.def("entropy_mc_drift",
          [](const Vec& b1, const Vec& b2, const Mat& sigma, double T, std::size_t n, int steps,
             std::uint64_t seed) {
              const McEstimate e = entropy_mc_drift({b1, b2, sigma, T}, n, steps, seed);
              return py::make_tuple(e.estimate, e.se);
          });
    m.def("entropy_mc_poisson",
          [](double l1, double l2, double T, std::size_t n, std::uint64_t seed) {
              const McEstimate e = entropy_mc_poisson({l1, l2, T}, n, seed);
              return py::make_tuple(e.estimate, e.se);
          });
    m.def("gaussian_entropy", &gaussian_entropy);

    m.def("weighted_ks_gaussian",
          [](const std::vector<double>& values, const std::vector<double>& weights, double mean,
             double sd) {
              return weighted_ks(values, weights,
                                 [mean, sd](double v) { return normal_cdf((v - mean) / sd); });
          });
}
