#include "epmc/artifacts.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "epmc/estimate.hpp"

namespace epmc {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

/// write-then-rename so readers never see partial files
void atomic_write(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << content;
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

std::string iterates_csv(const RunResult& r, int d, bool terminal) {
    std::string s = "k,J,J_se,penalized,penalized_se,entropy,expected_cost_q,ess,sandwich_gap,var_bound";
    if (terminal) {
        for (int c = 1; c <= d; ++c) s += ",ks_" + std::to_string(c);
        for (int c = 1; c <= d; ++c) s += ",ks_p_" + std::to_string(c);
    }
    s += "\n";
    for (const auto& rep : r.reports) {
        s += std::to_string(rep.k) + "," + fmt(rep.J) + "," + fmt(rep.J_se) + "," +
             fmt(rep.penalized) + "," + fmt(rep.penalized_se) + "," + fmt(rep.entropy) + "," +
             fmt(rep.expected_cost_q) + "," + fmt(rep.ess) + "," + fmt(rep.sandwich_gap) + "," +
             fmt(rep.var_bound);
        if (terminal) {
            for (double ks : rep.terminal_fit) s += "," + fmt(ks);
            for (double ks : rep.terminal_fit_p) s += "," + fmt(ks);
        }
        s += "\n";
    }
    return s;
}

struct Curve {
    std::vector<double> x, y;
};

/// Minimal polyline chart; CSV stays the canonical artifact.
std::string svg_chart(const std::vector<Curve>& curves, const std::vector<std::string>& labels,
                      const std::string& title, int w = 720, int h = 480) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& c : curves)
        for (std::size_t i = 0; i < c.x.size(); ++i) {
            xmin = std::min(xmin, c.x[i]);
            xmax = std::max(xmax, c.x[i]);
            ymin = std::min(ymin, c.y[i]);
            ymax = std::max(ymax, c.y[i]);
        }
    if (!(xmax > xmin)) xmax = xmin + 1.0;
    if (!(ymax > ymin)) ymax = ymin + 1.0;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    const int ml = 70, mr = 20, mt = 40, mb = 45;
    auto X = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto Y = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
    static const char* colors[] = {"#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#16a085"};
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
                    "\" height=\"" + std::to_string(h) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + std::to_string(w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         title + "</text>\n";
    // axes
    s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(h - mb) + "\" x2=\"" +
         std::to_string(w - mr) + "\" y2=\"" + std::to_string(h - mb) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt) + "\" x2=\"" +
         std::to_string(ml) + "\" y2=\"" + std::to_string(h - mb) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = xmin + (xmax - xmin) * t / 4;
        const double yv = ymin + (ymax - ymin) * t / 4;
        s += "<text x=\"" + fmt(X(xv)) + "\" y=\"" + std::to_string(h - mb + 18) +
             "\" text-anchor=\"middle\" font-size=\"11\">" + fmt(xv) + "</text>\n";
        s += "<text x=\"" + std::to_string(ml - 6) + "\" y=\"" + fmt(Y(yv) + 4) +
             "\" text-anchor=\"end\" font-size=\"11\">" + fmt(yv) + "</text>\n";
    }
    for (std::size_t ci = 0; ci < curves.size(); ++ci) {
        std::string pts;
        for (std::size_t i = 0; i < curves[ci].x.size(); ++i)
            pts += fmt(X(curves[ci].x[i])) + "," + fmt(Y(curves[ci].y[i])) + " ";
        s += "<polyline fill=\"none\" stroke=\"" + std::string(colors[ci % 6]) +
             "\" stroke-width=\"1.6\" points=\"" + pts + "\"/>\n";
        s += "<text x=\"" + std::to_string(w - mr - 8) + "\" y=\"" +
             std::to_string(mt + 18 * static_cast<int>(ci) + 12) +
             "\" text-anchor=\"end\" font-size=\"12\" fill=\"" + colors[ci % 6] + "\">" + labels[ci] +
             "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace

void write_run_artifacts(const std::string& dir, const RunResult& result,
                         const ControlProblem& problem, const ExperimentConfig& cfg,
                         double wall_total_s) {
    fs::create_directories(dir);
    const int d = problem.state_dim();
    const bool terminal = problem.constraint.kind == ConstraintSet::Kind::terminal_law;

    atomic_write(fs::path(dir) / "iterates.csv", iterates_csv(result, d, terminal));

    // terminal marginal densities: simulated P, weighted Q, analytic target
    const auto& e = *result.final_ensemble;
    const int M = e.grid.steps;
    std::vector<Curve> qcurves(d), tcurves(d);
    for (int c = 0; c < d; ++c) {
        std::vector<double> col(e.n_paths);
        for (std::size_t i = 0; i < e.n_paths; ++i) col[i] = e.state(i, M, c);
        double lo = col[0], hi = col[0], mu = 0.0;
        for (double v : col) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            mu += v;
        }
        mu /= static_cast<double>(col.size());
        double sd = 0.0;
        for (double v : col) sd += sqr(v - mu);
        sd = std::sqrt(sd / static_cast<double>(col.size()));
        const double bw = std::max(sd, 1e-6) * std::pow(static_cast<double>(col.size()), -0.2);
        std::vector<double> grid(cfg.density_grid);
        for (int g = 0; g < cfg.density_grid; ++g)
            grid[g] = lo - 3 * bw + (hi - lo + 6 * bw) * g / (cfg.density_grid - 1.0);
        const std::vector<double> pdens = kde1d(col, nullptr, grid, bw);
        const std::vector<double> qdens = kde1d(col, &result.final_weights.w, grid, bw);
        std::string s = "x,p_density,q_density,target_density\n";
        for (int g = 0; g < cfg.density_grid; ++g) {
            double target = 0.0;
            if (terminal) {
                const auto* gsp =
                    std::get_if<DistributionSpec::DiagGaussian>(&problem.constraint.target->kind);
                if (gsp)
                    target = normal_pdf((grid[g] - gsp->mean[c]) / std::sqrt(gsp->variance[c])) /
                             std::sqrt(gsp->variance[c]);
            }
            s += fmt(grid[g]) + "," + fmt(pdens[g]) + "," + fmt(qdens[g]) + "," + fmt(target) + "\n";
            qcurves[c].x.push_back(grid[g]);
            qcurves[c].y.push_back(qdens[g]);
            tcurves[c].x.push_back(grid[g]);
            tcurves[c].y.push_back(target);
        }
        atomic_write(fs::path(dir) / ("terminal_density_" + std::to_string(c + 1) + ".csv"), s);
    }

    // run.json: effective config echo + outcome
    {
        nlohmann::json j = nlohmann::json::parse(cfg.echo_json());
        j["outcome"]["iterations_run"] = result.reports.size();
        j["outcome"]["aborted"] = result.aborted;
        if (result.aborted) j["outcome"]["abort_reason"] = result.abort_reason;
        j["outcome"]["wall_seconds"] = wall_total_s;
        if (!result.reports.empty()) {
            j["outcome"]["final_J"] = result.reports.back().J;
            j["outcome"]["final_penalized"] = result.reports.back().penalized;
            j["outcome"]["final_ess"] = result.reports.back().ess;
        }
        double sim = 0.0, qs = 0.0, ps = 0.0;
        for (const auto& r : result.reports) {
            sim += r.wall_simulate;
            qs += r.wall_qstep;
            ps += r.wall_pstep;
        }
        j["outcome"]["wall_simulate"] = sim;
        j["outcome"]["wall_qstep"] = qs;
        j["outcome"]["wall_pstep"] = ps;
        atomic_write(fs::path(dir) / "run.json", j.dump(2) + "\n");
    }

    if (cfg.svg) {
        Curve jc, pc;
        for (const auto& r : result.reports) {
            jc.x.push_back(r.k);
            jc.y.push_back(r.J);
            pc.x.push_back(r.k);
            pc.y.push_back(r.penalized);
        }
        atomic_write(fs::path(dir) / "cost.svg",
                     svg_chart({pc, jc}, {"penalized cost", "controlled cost J"},
                               "alternating minimization"));
        if (terminal) {
            std::vector<Curve> curves;
            std::vector<std::string> labels;
            for (int c = 0; c < d; ++c) {
                curves.push_back(qcurves[c]);
                labels.push_back("Q_T dim " + std::to_string(c + 1));
            }
            for (int c = 0; c < d; ++c) {
                curves.push_back(tcurves[c]);
                labels.push_back("target dim " + std::to_string(c + 1));
            }
            atomic_write(fs::path(dir) / "densities.svg",
                         svg_chart(curves, labels, "terminal marginals vs targets"));
        }
    }
}

}  // namespace epmc
