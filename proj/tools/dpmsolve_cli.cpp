// Command-line harness: convergence studies against the analytic oracle,
// solver-equivalence suites, and SDE moment diagnostics. Emits CSV records and
// "SUITE <name> PASS|FAIL max_dev=<e>" summary lines; exits nonzero when a
// suite misses its threshold.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpmsolve/dpmsolve.hpp"

namespace {

using namespace dpmsolve;

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct OracleArg {
    double mu = 1.0;
    double s0 = 0.5;
};

OracleArg parse_oracle(const std::string& text) {
    OracleArg o;
    for (const std::string& part : split_csv(text)) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--oracle", "expected mu=<f>,s0=<f>");
        const std::string key = part.substr(0, eq);
        const double value = std::stod(part.substr(eq + 1));
        if (key == "mu")
            o.mu = value;
        else if (key == "s0")
            o.s0 = value;
        else
            throw CLI::ValidationError("--oracle", "unknown key: " + key);
    }
    return o;
}

std::vector<Method> parse_methods(const std::string& text) {
    std::vector<Method> methods;
    for (const std::string& name : split_csv(text)) {
        const auto m = parse_method(name);
        if (!m) throw CLI::ValidationError("--methods", "unknown method: " + name);
        methods.push_back(*m);
    }
    return methods;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open output file: " + path);
    os << content;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"exponential-integrator samplers for diffusion models: verification harness"};
    app.require_subcommand(1);

    std::string oracle_text = "mu=1,s0=0.5";
    std::string schedule = "vp_linear_beta";
    std::string methods_text;
    std::string steps_text;
    std::string seeds_text = "0";
    std::string out_path;
    std::string grid = "uniform_lambda";
    double tol = 1e-10;
    std::size_t dim = 4;

    auto* conv = app.add_subcommand("convergence", "endpoint-error study against the reference integrator");
    conv->add_option("--oracle", oracle_text, "oracle parameters, mu=<f>,s0=<f>");
    conv->add_option("--schedule", schedule, "vp_linear_beta | vp_cosine | vp_discrete");
    conv->add_option("--methods", methods_text, "comma-separated method list")->required();
    conv->add_option("--steps", steps_text, "comma-separated step counts M")->required();
    conv->add_option("--seeds", seeds_text, "comma-separated seeds");
    conv->add_option("--tol", tol, "reference tolerance");
    conv->add_option("--out", out_path, "CSV output path")->required();
    conv->add_option("--dim", dim, "oracle dimension");
    conv->add_option("--grid", grid, "uniform_lambda | uniform_t");

    auto* equiv = app.add_subcommand("equivalence", "algebraic solver-equivalence suites");
    equiv->add_option("--out", out_path, "summary output path")->required();

    std::string sde_method = "sde_pp_1";
    std::size_t sde_steps = 200;
    std::size_t trajectories = 10000;
    auto* stats = app.add_subcommand("sde-stats", "SDE marginal moment diagnostics");
    stats->add_option("--method", sde_method, "stochastic method name")->required();
    stats->add_option("--steps", sde_steps, "steps per trajectory")->required();
    stats->add_option("--trajectories", trajectories, "number of trajectories")->required();
    stats->add_option("--out", out_path, "CSV output path")->required();
    stats->add_option("--oracle", oracle_text, "oracle parameters, mu=<f>,s0=<f>");
    stats->add_option("--schedule", schedule, "schedule name");
    stats->add_option("--seeds", seeds_text, "comma-separated seeds");

    CLI11_PARSE(app, argc, argv);

    try {
        if (conv->parsed()) {
            const OracleArg o = parse_oracle(oracle_text);
            StudySpec study;
            study.oracle_mu.assign(dim, o.mu);
            study.oracle_s0 = o.s0;
            study.schedule = schedule;
            study.methods = parse_methods(methods_text);
            for (const std::string& s : split_csv(steps_text)) study.step_counts.push_back(std::stoul(s));
            study.seeds.clear();
            for (const std::string& s : split_csv(seeds_text)) study.seeds.push_back(std::stoull(s));
            study.tol = tol;
            if (grid == "uniform_t")
                study.grid_kind = TimeGrid::Kind::UniformT;
            else if (grid != "uniform_lambda")
                throw CLI::ValidationError("--grid", "unknown grid kind: " + grid);

            const std::vector<RunRecord> records = run_convergence(study);
            std::ostringstream csv;
            write_csv(csv, records);
            write_file(out_path, csv.str());
            std::cout << csv.str();
            return 0;
        }

        if (equiv->parsed()) {
            const std::vector<SuiteResult> suites = run_equivalence();
            std::ostringstream summary;
            write_summary(summary, suites);
            write_file(out_path, summary.str());
            std::cout << summary.str();
            for (const SuiteResult& s : suites)
                if (!s.pass) return 1;
            return 0;
        }

        if (stats->parsed()) {
            const OracleArg o = parse_oracle(oracle_text);
            StudySpec study;
            study.oracle_mu = {o.mu};
            study.oracle_s0 = o.s0;
            study.schedule = schedule;
            const auto m = parse_method(sde_method);
            if (!m || !method_is_stochastic(*m))
                throw CLI::ValidationError("--method", "need a stochastic method, got: " + sde_method);
            study.methods = {*m};
            study.step_counts = {sde_steps};
            study.seeds.clear();
            for (const std::string& s : split_csv(seeds_text)) study.seeds.push_back(std::stoull(s));
            study.trajectories = trajectories;

            std::vector<MomentDiagnostics> diags;
            const std::vector<RunRecord> records = run_sde_stats(study, &diags);
            std::ostringstream csv;
            write_csv(csv, records);
            write_file(out_path, csv.str());
            std::cout << csv.str();

            bool ok = true;
            std::vector<SuiteResult> suites;
            for (const MomentDiagnostics& d : diags) {
                suites.push_back({d.method + "_marginal_mean", std::abs(d.z_mean) < 3.0, std::abs(d.z_mean), 3.0});
                suites.push_back({d.method + "_marginal_std", std::abs(d.z_std) < 3.0, std::abs(d.z_std), 3.0});
            }
            write_summary(std::cout, suites);
            for (const SuiteResult& s : suites) ok = ok && s.pass;
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
