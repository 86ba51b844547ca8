#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "epmc/solver.hpp"

namespace epmc {

struct ConfigError : Error { using Error::Error; };

/// Minimal TOML-style file: [sections] of key = value lines where value
/// is a number, "string", true/false, or [array, of, numbers].
class ConfigFile {
public:
    using Value = std::variant<double, std::string, bool, std::vector<double>>;

    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& section, const std::string& key) const;
    double number(const std::string& section, const std::string& key, double fallback) const;
    long integer(const std::string& section, const std::string& key, long fallback) const;
    std::string str(const std::string& section, const std::string& key, std::string fallback) const;
    bool boolean(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<double> array(const std::string& section, const std::string& key,
                              std::vector<double> fallback) const;

    /// Keys present in the file but never read; used to reject typos.
    std::vector<std::string> unused_keys() const;

private:
    std::map<std::string, std::map<std::string, Value>> sections_;
    mutable std::map<std::string, bool> touched_;
    const Value* find(const std::string& section, const std::string& key) const;
};

/// Fully resolved experiment: problem + solver settings + output options.
/// Every default is materialized so the run.json echo reproduces the run.
struct ExperimentConfig {
    std::string problem_kind = "lq";  // lq | bridge | hvac | custom

    // lq / bridge parameters
    double lq_q = 1.0, lq_r = 1.0;
    double horizon = 1.0;
    double sigma = 1.0;
    double box_halfwidth = 5.0;
    int steps = 50;
    double x0_mean = 0.0, x0_var = 0.0;
    double target_mean = 1.0, target_var = 0.25;

    HvacParams hvac = HvacParams::defaults(5);

    // custom linear-quadratic tables
    int custom_dim = 1, custom_control_dim = 1;
    std::vector<double> custom_A, custom_c, custom_B, custom_diffusion;
    std::vector<double> custom_x_quad, custom_u_quad;
    std::vector<double> custom_box_lo, custom_box_hi;
    std::vector<double> custom_x0_mean, custom_x0_var;
    bool custom_terminal_law = false;
    std::vector<double> custom_target_mean, custom_target_var;

    SolverConfig solver;

    std::string out_dir = "out";
    bool svg = true;
    int density_grid = 201;

    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_config(const ConfigFile& f);

    ControlProblem build_problem() const;
    std::shared_ptr<MarkovPolicy> initial_policy(const ControlProblem& p) const;
    /// Effective-value echo for run.json.
    std::string echo_json() const;
};

}  // namespace epmc
