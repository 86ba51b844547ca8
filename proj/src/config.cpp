#include "epmc/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace epmc {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_number(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

ConfigFile::Value parse_value(const std::string& raw, const std::string& where) {
    const std::string v = trim(raw);
    if (v.empty()) throw ConfigError(where + ": empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') throw ConfigError(where + ": unterminated string");
        return v.substr(1, v.size() - 2);
    }
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '[') {
        if (v.back() != ']') throw ConfigError(where + ": unterminated array");
        std::vector<double> arr;
        std::string body = v.substr(1, v.size() - 2);
        std::stringstream ss(body);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            double x;
            if (!parse_number(item, x)) throw ConfigError(where + ": bad array element '" + item + "'");
            arr.push_back(x);
        }
        return arr;
    }
    double x;
    if (!parse_number(v, x)) throw ConfigError(where + ": cannot parse value '" + v + "'");
    return x;
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
    ConfigFile f;
    std::stringstream ss(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            f.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": empty key");
        f.sections_[section][key] = parse_value(line.substr(eq + 1), where + " (" + key + ")");
    }
    return f;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path);
}

const ConfigFile::Value* ConfigFile::find(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return nullptr;
    touched_[section + "." + key] = true;
    return &k->second;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

double ConfigFile::number(const std::string& section, const std::string& key, double fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (const auto* d = std::get_if<double>(v)) return *d;
    throw ConfigError("config key " + section + "." + key + " must be a number");
}

long ConfigFile::integer(const std::string& section, const std::string& key, long fallback) const {
    const double d = number(section, key, static_cast<double>(fallback));
    const long l = static_cast<long>(std::llround(d));
    if (std::abs(d - static_cast<double>(l)) > 1e-9)
        throw ConfigError("config key " + section + "." + key + " must be an integer");
    return l;
}

std::string ConfigFile::str(const std::string& section, const std::string& key,
                            std::string fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (const auto* s = std::get_if<std::string>(v)) return *s;
    throw ConfigError("config key " + section + "." + key + " must be a string");
}

bool ConfigFile::boolean(const std::string& section, const std::string& key, bool fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (const auto* b = std::get_if<bool>(v)) return *b;
    throw ConfigError("config key " + section + "." + key + " must be true or false");
}

std::vector<double> ConfigFile::array(const std::string& section, const std::string& key,
                                      std::vector<double> fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (const auto* a = std::get_if<std::vector<double>>(v)) return *a;
    if (const auto* d = std::get_if<double>(v)) return {*d};
    throw ConfigError("config key " + section + "." + key + " must be an array");
}

std::vector<std::string> ConfigFile::unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [sec, kv] : sections_)
        for (const auto& [key, value] : kv) {
            const std::string full = sec + "." + key;
            if (!touched_.count(full)) out.push_back(full);
        }
    return out;
}

namespace {

Vec to_vec(const std::vector<double>& v) {
    return Eigen::Map<const Vec>(v.data(), static_cast<long>(v.size()));
}

Vec sized_vec(const ConfigFile& f, const std::string& sec, const std::string& key, const Vec& fallback,
              int n) {
    if (!f.has(sec, key)) return fallback;
    std::vector<double> a = f.array(sec, key, {});
    if (a.size() == 1) return Vec::Constant(n, a[0]);
    if (static_cast<int>(a.size()) != n)
        throw ConfigError("config key " + sec + "." + key + " must have length " + std::to_string(n));
    return to_vec(a);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    return from_config(ConfigFile::parse_file(path));
}

ExperimentConfig ExperimentConfig::from_config(const ConfigFile& f) {
    ExperimentConfig c;
    c.problem_kind = f.str("problem", "kind", "lq");

    if (c.problem_kind == "lq") {
        c.lq_q = f.number("problem", "q", 1.0);
        c.lq_r = f.number("problem", "r", 1.0);
        c.horizon = f.number("problem", "horizon", 1.0);
        c.sigma = f.number("problem", "sigma", 1.0);
        c.box_halfwidth = f.number("problem", "box", 5.0);
        c.steps = static_cast<int>(f.integer("problem", "steps", 50));
        c.x0_mean = f.number("problem", "x0_mean", 0.0);
        c.x0_var = f.number("problem", "x0_var", 0.0);
        c.solver.eps = 0.5;
    } else if (c.problem_kind == "bridge") {
        c.target_mean = f.number("problem", "target_mean", 1.0);
        c.target_var = f.number("problem", "target_var", 0.25);
        c.horizon = f.number("problem", "horizon", 1.0);
        c.sigma = f.number("problem", "sigma", 1.0);
        c.box_halfwidth = f.number("problem", "box", 6.0);
        c.steps = static_cast<int>(f.integer("problem", "steps", 50));
        c.solver.eps = 1.0;
    } else if (c.problem_kind == "hvac") {
        const int d = static_cast<int>(f.integer("problem", "d", 5));
        HvacParams h = HvacParams::defaults(d);
        h.theta = sized_vec(f, "problem", "theta", h.theta, d);
        h.x_out = sized_vec(f, "problem", "x_out", h.x_out, d);
        h.p_max = sized_vec(f, "problem", "p_max", h.p_max, d);
        if (f.has("problem", "kappa"))
            h.kappa = sized_vec(f, "problem", "kappa", h.kappa, d);
        h.sigma = sized_vec(f, "problem", "sigma", h.sigma, d);
        h.x_min = sized_vec(f, "problem", "x_min", h.x_min, d);
        h.x_max = sized_vec(f, "problem", "x_max", h.x_max, d);
        h.c_track = f.number("problem", "c_track", h.c_track);
        h.gamma_cost = sized_vec(f, "problem", "gamma", h.gamma_cost, d);
        h.lambda_cost = sized_vec(f, "problem", "lambda", h.lambda_cost, d);
        h.r0 = f.number("problem", "r0", h.r0);
        h.r1 = f.number("problem", "r1", h.r1);
        h.target_mean = sized_vec(f, "problem", "target_mean", h.target_mean, d);
        h.target_var = sized_vec(f, "problem", "target_var", h.target_var, d);
        h.horizon = f.number("problem", "horizon", h.horizon);
        h.steps = static_cast<int>(f.integer("problem", "steps", h.steps));
        c.hvac = h;
        c.solver.eps = 5.0;
    } else if (c.problem_kind == "custom") {
        c.custom_dim = static_cast<int>(f.integer("problem", "d", 1));
        c.custom_control_dim = static_cast<int>(f.integer("problem", "p", c.custom_dim));
        const int d = c.custom_dim, p = c.custom_control_dim;
        auto flat = [&](const char* key, int len, double diag) {
            std::vector<double> fb(static_cast<std::size_t>(len), 0.0);
            if (len == d * d && diag != 0.0)
                for (int i = 0; i < d; ++i) fb[i * d + i] = diag;
            auto a = f.array("problem", key, fb);
            if (static_cast<int>(a.size()) != len)
                throw ConfigError(std::string("problem.") + key + " must have length " + std::to_string(len));
            return a;
        };
        c.custom_A = flat("A", d * d, 0.0);
        c.custom_c = flat("c", d, 0.0);
        {
            std::vector<double> fb(static_cast<std::size_t>(d) * p, 0.0);
            for (int i = 0; i < std::min(d, p); ++i) fb[i * p + i] = 1.0;
            auto a = f.array("problem", "B", fb);
            if (static_cast<int>(a.size()) != d * p)
                throw ConfigError("problem.B must have length d*p");
            c.custom_B = a;
        }
        c.custom_diffusion = flat("diffusion", d, 0.0);
        if (!f.has("problem", "diffusion")) c.custom_diffusion.assign(d, 1.0);
        c.custom_x_quad = flat("x_quad", d, 0.0);
        c.custom_u_quad = [&] {
            std::vector<double> fb(p, 1.0);
            auto a = f.array("problem", "u_quad", fb);
            if (static_cast<int>(a.size()) != p) throw ConfigError("problem.u_quad must have length p");
            return a;
        }();
        c.custom_box_lo = f.array("problem", "box_lo", std::vector<double>(p, -5.0));
        c.custom_box_hi = f.array("problem", "box_hi", std::vector<double>(p, 5.0));
        c.custom_x0_mean = f.array("problem", "x0_mean", std::vector<double>(d, 0.0));
        c.custom_x0_var = f.array("problem", "x0_var", std::vector<double>(d, 0.0));
        c.custom_terminal_law = f.has("problem", "target_mean");
        if (c.custom_terminal_law) {
            c.custom_target_mean = f.array("problem", "target_mean", {});
            c.custom_target_var = f.array("problem", "target_var", std::vector<double>(d, 1.0));
        }
        c.horizon = f.number("problem", "horizon", 1.0);
        c.steps = static_cast<int>(f.integer("problem", "steps", 50));
    } else {
        throw ConfigError("problem.kind must be lq, bridge, hvac or custom");
    }

    c.solver.eps = f.number("solver", "epsilon", c.solver.eps);
    c.solver.n_paths = static_cast<std::size_t>(f.integer("solver", "particles", 10'000));
    c.solver.n_iterations = static_cast<int>(f.integer("solver", "iterations", 10));
    c.solver.seed = static_cast<std::uint64_t>(f.integer("solver", "seed", 0));
    c.solver.common_random_numbers = f.boolean("solver", "crn", true);
    c.solver.ess_floor_fraction = f.number("solver", "ess_floor", 0.01);
    c.solver.policy_cells = static_cast<int>(f.integer("solver", "cells", 1500));
    c.solver.policy_smoothing_neighbors =
        static_cast<int>(f.integer("solver", "smoothing_neighbors", 8));
    c.solver.moment_polish_rounds = static_cast<int>(f.integer("solver", "moment_polish", 2));
    c.solver.mvi_grid = static_cast<int>(f.integer("solver", "mvi_grid", 33));
    c.solver.early_stop = f.boolean("solver", "early_stop", false);
    const std::string method = f.str("solver", "regression", "knn");
    if (method == "knn")
        c.solver.regression.method = RegressionConfig::Method::knn;
    else if (method == "kernel")
        c.solver.regression.method = RegressionConfig::Method::gaussian_kernel;
    else
        throw ConfigError("solver.regression must be knn or kernel");
    c.solver.regression.k = static_cast<int>(f.integer("solver", "k", 0));
    if (c.solver.regression.k == 0)
        c.solver.regression.k = std::max<int>(200, static_cast<int>(c.solver.n_paths / 50));
    if (f.has("solver", "bandwidth")) {
        c.solver.regression.bandwidth = RegressionConfig::Bandwidth::fixed;
        c.solver.regression.fixed_h = f.number("solver", "bandwidth", 0.0);
    }
    c.solver.regression.bandwidth_scale = f.number("solver", "bandwidth_scale", 1.8);
    c.solver.regression.min_neighbors =
        static_cast<int>(f.integer("solver", "min_neighbors", 20));

    c.out_dir = f.str("output", "directory", "out");
    c.svg = f.boolean("output", "svg", true);
    c.density_grid = static_cast<int>(f.integer("output", "density_grid", 201));

    const auto unused = f.unused_keys();
    if (!unused.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unused) msg += " " + k;
        throw ConfigError(msg);
    }
    return c;
}

ControlProblem ExperimentConfig::build_problem() const {
    if (problem_kind == "lq") {
        DistributionSpec init = x0_var > 0.0
                                    ? DistributionSpec::gaussian(Vec::Constant(1, x0_mean),
                                                                 Vec::Constant(1, x0_var))
                                    : DistributionSpec::dirac(Vec::Constant(1, x0_mean));
        return make_lq_problem(lq_q, lq_r, horizon, sigma, box_halfwidth, steps, std::move(init));
    }
    if (problem_kind == "bridge")
        return make_bridge_problem(target_mean, target_var, horizon, sigma, box_halfwidth, steps);
    if (problem_kind == "hvac") return build_hvac_instance(hvac);

    // custom linear dynamics with quadratic costs
    const int d = custom_dim, p = custom_control_dim;
    ControlProblem cp;
    cp.grid = TimeGrid{horizon, steps};
    ControlBox box;
    box.lower = to_vec(custom_box_lo);
    box.upper = to_vec(custom_box_hi);
    box.check();
    cp.box = box;
    const Mat A = Eigen::Map<const Mat>(custom_A.data(), d, d).transpose();
    const Vec cc = to_vec(custom_c);
    const Mat B = Eigen::Map<const Mat>(custom_B.data(), p, d).transpose();
    const Vec diff = to_vec(custom_diffusion);
    cp.dynamics.form = DriftForm::linear_in_control;
    cp.dynamics.gamma = [A, cc](double, const Vec& x) -> Vec { return A * x + cc; };
    cp.dynamics.control_matrix = B;
    cp.dynamics.drift = [A, cc, B](double, const Vec& x, const Vec& u) -> Vec {
        return A * x + cc + B * u;
    };
    cp.dynamics.diffusion = [diff](double, const Vec&) -> Mat { return diff.asDiagonal(); };
    cp.dynamics.c_sigma = diff.cwiseAbs().minCoeff() > 0.0 ? sqr(diff.cwiseAbs().minCoeff()) : 0.0;
    const Vec xq = to_vec(custom_x_quad), uq = to_vec(custom_u_quad);
    cp.cost.running = [xq, uq](double, const Vec& x, const Vec& u) {
        return 0.5 * (x.cwiseProduct(xq).dot(x) + u.cwiseProduct(uq).dot(u));
    };
    cp.cost.convex_in_control = true;
    cp.initial = to_vec(custom_x0_var).maxCoeff() > 0.0
                     ? DistributionSpec::gaussian(to_vec(custom_x0_mean), to_vec(custom_x0_var))
                     : DistributionSpec::dirac(to_vec(custom_x0_mean));
    if (custom_terminal_law)
        cp.constraint = ConstraintSet::terminal_law(
            DistributionSpec::gaussian(to_vec(custom_target_mean), to_vec(custom_target_var)));
    cp.probe.lo = Vec::Constant(d, -10.0);
    cp.probe.hi = Vec::Constant(d, 10.0);
    double bmax = (A.cwiseAbs() * Vec::Constant(d, 10.0) + cc.cwiseAbs()).maxCoeff();
    bmax += (B.cwiseAbs() * box.upper.cwiseAbs().cwiseMax(box.lower.cwiseAbs())).maxCoeff();
    cp.dynamics.b_max = bmax * std::sqrt(static_cast<double>(d)) + 1.0;
    cp.cost.f_max = 0.5 * (xq.cwiseAbs().sum() * 100.0 +
                           uq.cwiseAbs().sum() *
                               box.upper.cwiseAbs().cwiseMax(box.lower.cwiseAbs()).squaredNorm()) +
                    1.0;
    return cp;
}

std::shared_ptr<MarkovPolicy> ExperimentConfig::initial_policy(const ControlProblem& p) const {
    if (problem_kind == "hvac") {
        HvacParams h = hvac;
        return std::make_shared<ClosedFormPolicy>(
            [h](int, const Vec& x) { return hvac_holding_control(h, x); }, p.box);
    }
    return constant_policy(p.box.midpoint(), p.box);
}

std::string ExperimentConfig::echo_json() const {
    nlohmann::json j;
    j["problem"]["kind"] = problem_kind;
    if (problem_kind == "lq") {
        j["problem"]["q"] = lq_q;
        j["problem"]["r"] = lq_r;
        j["problem"]["x0_mean"] = x0_mean;
        j["problem"]["x0_var"] = x0_var;
    }
    if (problem_kind == "bridge") {
        j["problem"]["target_mean"] = target_mean;
        j["problem"]["target_var"] = target_var;
    }
    if (problem_kind == "lq" || problem_kind == "bridge") {
        j["problem"]["horizon"] = horizon;
        j["problem"]["sigma"] = sigma;
        j["problem"]["box"] = box_halfwidth;
        j["problem"]["steps"] = steps;
    }
    if (problem_kind == "hvac") {
        auto tolist = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
        j["problem"]["d"] = hvac.d;
        j["problem"]["theta"] = tolist(hvac.theta);
        j["problem"]["x_out"] = tolist(hvac.x_out);
        j["problem"]["kappa"] = tolist(hvac.kappa);
        j["problem"]["p_max"] = tolist(hvac.p_max);
        j["problem"]["sigma"] = tolist(hvac.sigma);
        j["problem"]["x_min"] = tolist(hvac.x_min);
        j["problem"]["x_max"] = tolist(hvac.x_max);
        j["problem"]["c_track"] = hvac.c_track;
        j["problem"]["gamma"] = tolist(hvac.gamma_cost);
        j["problem"]["lambda"] = tolist(hvac.lambda_cost);
        j["problem"]["r0"] = hvac.r0;
        j["problem"]["r1"] = hvac.r1;
        j["problem"]["target_mean"] = tolist(hvac.target_mean);
        j["problem"]["target_var"] = tolist(hvac.target_var);
        j["problem"]["horizon"] = hvac.horizon;
        j["problem"]["steps"] = hvac.steps;
    }
    j["solver"]["epsilon"] = solver.eps;
    j["solver"]["particles"] = solver.n_paths;
    j["solver"]["iterations"] = solver.n_iterations;
    j["solver"]["seed"] = solver.seed;
    j["solver"]["crn"] = solver.common_random_numbers;
    j["solver"]["ess_floor"] = solver.ess_floor_fraction;
    j["solver"]["cells"] = solver.policy_cells;
    j["solver"]["smoothing_neighbors"] = solver.policy_smoothing_neighbors;
    j["solver"]["moment_polish"] = solver.moment_polish_rounds;
    j["solver"]["mvi_grid"] = solver.mvi_grid;
    j["solver"]["early_stop"] = solver.early_stop;
    j["solver"]["regression"] =
        solver.regression.method == RegressionConfig::Method::knn ? "knn" : "kernel";
    j["solver"]["k"] = solver.regression.k;
    j["solver"]["bandwidth"] = solver.regression.bandwidth == RegressionConfig::Bandwidth::fixed
                                   ? nlohmann::json(solver.regression.fixed_h)
                                   : nlohmann::json("scott");
    j["solver"]["bandwidth_scale"] = solver.regression.bandwidth_scale;
    j["solver"]["min_neighbors"] = solver.regression.min_neighbors;
    j["output"]["directory"] = out_dir;
    j["output"]["svg"] = svg;
    j["output"]["density_grid"] = density_grid;
    return j.dump(2);
}

}  // namespace epmc
