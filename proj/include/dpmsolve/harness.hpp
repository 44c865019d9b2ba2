#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "dpmsolve/ode_solvers.hpp"
#include "dpmsolve/oracle.hpp"
#include "dpmsolve/schedule.hpp"
#include "dpmsolve/sde_solvers.hpp"

namespace dpmsolve {

/// One harness run: endpoint error against the reference solution, measured as
/// ||x - x*||_2 / sqrt(D), with the method's per-sample NFE.
struct RunRecord {
    std::string method;
    std::size_t steps = 0;  // M
    std::size_t nfe = 0;
    double error_l2_per_dim = 0.0;
    double fitted_order = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
    std::uint64_t seed = 0;
};

struct StudySpec {
    Vec oracle_mu;  // oracle mean, one entry per dimension
    double oracle_s0 = 0.5;
    std::string schedule = "vp_linear_beta";
    std::vector<Method> methods;
    std::vector<std::size_t> step_counts;
    std::vector<std::uint64_t> seeds = {0};
    // uniform-lambda grids keep every step's h equal, the cleanest setting for
    // order measurement
    TimeGrid::Kind grid_kind = TimeGrid::Kind::UniformLambda;
    double tol = 1e-10;           // reference tolerance
    std::size_t draws = 20;       // x_T draws per configuration, errors averaged
    std::size_t trajectories = 10000;  // sde stats only
    bool deterministic_timing = false; // zero wall_ms so re-runs are byte-identical
    bool zero_noise_fixture = false;   // sde stats test fixture: z = 0 and one shared x_T
};

struct SuiteResult {
    std::string name;
    bool pass = false;
    double max_dev = 0.0;
    double threshold = 0.0;
};

inline NoiseSchedule schedule_by_name(const std::string& name) {
    if (name == "vp_linear_beta") return NoiseSchedule::vp_linear_beta();
    if (name == "vp_cosine") return NoiseSchedule::vp_cosine();
    if (name == "vp_discrete") {
        // N = 1000 discretization of the continuous linear schedule:
        // beta_n = 1 - alpha_bar(t_n)/alpha_bar(t_{n-1}), log alpha in closed form
        std::vector<double> betas(1000);
        double prev_la = 0.0;
        for (std::size_t n = 0; n < betas.size(); ++n) {
            const double t = static_cast<double>(n + 1) / 1000.0;
            const double la = -0.25 * t * t * 19.9 - 0.5 * t * 0.1;
            betas[n] = -std::expm1(2.0 * (la - prev_la));
            prev_la = la;
        }
        return NoiseSchedule::discrete_interpolation(betas);
    }
    throw std::invalid_argument("unknown schedule: " + name);
}

namespace detail {

inline double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

// Least-squares slope of log2(error) against log2(M); the fitted order is its
// negation. NaN when fewer than two usable points.
inline double fit_order(const std::vector<std::pair<std::size_t, double>>& m_err) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [m, err] : m_err) {
        if (err > 0.0 && std::isfinite(err)) pts.emplace_back(std::log2(static_cast<double>(m)), std::log2(err));
    }
    if (pts.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [x, y] : pts) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(pts.size());
    return -(n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline void sort_records(std::vector<RunRecord>& records) {
    std::sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
        return std::tie(a.method, a.steps, a.seed) < std::tie(b.method, b.steps, b.seed);
    });
}

}  // namespace detail

/// Convergence study against the adaptive reference integrator: for each
/// (method, M, seed), average the endpoint error over a fixed set of x_T draws
/// from the oracle marginal at t_max, then fit the empirical order per
/// (method, seed) across the M list.
inline std::vector<RunRecord> run_convergence(const StudySpec& study) {
    if (study.methods.empty()) throw std::invalid_argument("run_convergence: empty method list");
    if (study.step_counts.empty()) throw std::invalid_argument("run_convergence: empty step-count list");
    if (study.seeds.empty()) throw std::invalid_argument("run_convergence: empty seed list");
    if (study.oracle_mu.empty()) throw std::invalid_argument("run_convergence: oracle dimension is zero");
    if (study.draws == 0) throw std::invalid_argument("run_convergence: draws must be >= 1");

    const NoiseSchedule sched = schedule_by_name(study.schedule);
    const GaussianOracle oracle{study.oracle_mu, study.oracle_s0};
    const PredictionModel model = oracle.data_model(sched);
    const std::size_t dim = oracle.dim();
    const double sqrt_dim = std::sqrt(static_cast<double>(dim));

    std::vector<RunRecord> records;
    for (std::uint64_t seed : study.seeds) {
        // fixed x_T set and reference endpoints, shared by every (method, M)
        const NoiseStream draws_stream(seed, /*stream=*/1);
        const double mean_coeff = sched.alpha(sched.t_max());
        const double std_t_max = std::sqrt(oracle.marginal_var(sched.t_max(), sched));
        std::vector<Vec> starts(study.draws);
        std::vector<Vec> references(study.draws);
        for (std::size_t d = 0; d < study.draws; ++d) {
            Vec x = draws_stream.draw(d, dim);
            for (std::size_t i = 0; i < dim; ++i) x[i] = mean_coeff * oracle.mu[i] + std_t_max * x[i];
            starts[d] = x;
            references[d] = reference_solve(model, sched, x, study.tol).x_end;
        }

        for (Method method : study.methods) {
            std::vector<std::pair<std::size_t, double>> m_err;
            std::vector<std::size_t> record_index;
            for (std::size_t m : study.step_counts) {
                const TimeGrid grid = make_time_grid(sched, m, study.grid_kind, 1.0,
                                                     method_needs_intermediates(method));
                SolverSpec spec;
                spec.method = method;
                spec.grid = grid;
                const double t0 = detail::now_ms();
                double err_sum = 0.0;
                std::size_t nfe = 0;
                for (std::size_t d = 0; d < study.draws; ++d) {
                    spec.seed = detail::splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * (d + 1)));
                    const SampleResult res = sample(model, sched, spec, starts[d]);
                    err_sum += l2_dist(res.x, references[d]) / sqrt_dim;
                    nfe = res.nfe;
                }
                const double wall = detail::now_ms() - t0;
                RunRecord rec;
                rec.method = method_name(method);
                rec.steps = m;
                rec.nfe = nfe;
                rec.error_l2_per_dim = err_sum / static_cast<double>(study.draws);
                rec.wall_ms = study.deterministic_timing ? 0.0 : wall;
                rec.seed = seed;
                m_err.emplace_back(m, rec.error_l2_per_dim);
                record_index.push_back(records.size());
                records.push_back(std::move(rec));
            }
            const double order = detail::fit_order(m_err);
            for (std::size_t idx : record_index) records[idx].fitted_order = order;
        }
    }
    detail::sort_records(records);
    return records;
}

struct EquivalenceOptions {
    std::uint64_t seed = 2024;
    std::size_t configurations = 100;
    // negative-control fixture: scales one coefficient of the rewritten route
    double perturb = 0.0;
};

/// The three algebraic-equivalence suites, each over randomized
/// (schedule point, step, input) configurations. Failures are reported in the
/// result table, never thrown.
inline std::vector<SuiteResult> run_equivalence(const EquivalenceOptions& opt = {}) {
    const NoiseSchedule schedules[] = {NoiseSchedule::vp_linear_beta(), NoiseSchedule::vp_cosine(),
                                       schedule_by_name("vp_discrete")};
    const NoiseStream rng(opt.seed, /*stream=*/7);
    std::uint64_t counter = 0;
    auto uniform = [&](double lo, double hi) {
        // fold the normal stream to uniforms in (0,1)
        const double u = 0.5 * (1.0 + std::erf(rng.normal(counter++, 0) / std::sqrt(2.0)));
        return lo + (hi - lo) * u;
    };

    const std::size_t dim = 4;
    SuiteResult eq_first{"first_order_ddim", true, 0.0, 1e-12};
    SuiteResult eq_sde{"sde_pp_1_stochastic_ddim", true, 0.0, 1e-12};
    SuiteResult eq_rewrite{"dpm_pp_2s_eps_rewrite", true, 0.0, 1e-10};

    for (std::size_t cfg = 0; cfg < opt.configurations; ++cfg) {
        const NoiseSchedule& sched = schedules[cfg % 3];
        GaussianOracle oracle;
        oracle.data_std = uniform(0.3, 1.5);
        oracle.mu.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) oracle.mu[i] = uniform(-1.0, 1.0);
        const PredictionModel model = (cfg % 2 == 0) ? oracle.data_model(sched) : oracle.noise_model(sched);

        const double lo = sched.t_min(), hi = sched.t_max();
        double t_s = uniform(lo, hi), t_t = uniform(lo, hi);
        if (t_t > t_s) std::swap(t_s, t_t);
        if (t_s - t_t < 1e-4) {
            t_s = std::min(hi, t_s + 1e-3);
            t_t = std::max(lo, t_t - 1e-3);
        }
        Vec x(dim);
        for (std::size_t i = 0; i < dim; ++i) x[i] = uniform(-2.0, 2.0);

        const auto ps = sched.alpha_sigma_lambda(t_s);
        const auto pt = sched.alpha_sigma_lambda(t_t);
        const double h = pt.lambda - ps.lambda;

        // suite 1: first-order data step == DDIM with eta = 0
        {
            const Vec a = first_order_data_step(x, t_s, t_t, model, sched);
            Vec b = ddim_eta_step(x, t_s, t_t, 0.0, nullptr, model, sched);
            if (opt.perturb != 0.0)
                for (double& v : b) v *= 1.0 + opt.perturb;
            eq_first.max_dev = std::max(eq_first.max_dev, linf_dist(a, b));
        }

        // suite 2: SDE-DPM-Solver++1 == stochastic DDIM with eta = sigma_t sqrt(1 - e^{-2h})
        {
            const Vec z = rng.draw(1000 + cfg, dim);
            const double eta = pt.sigma * std::sqrt(-std::expm1(-2.0 * h));
            const Vec a = sde_pp_1_step(x, t_s, t_t, z, model, sched);
            Vec b = ddim_eta_step(x, t_s, t_t, eta, &z, model, sched);
            if (opt.perturb != 0.0)
                for (double& v : b) v *= 1.0 + opt.perturb;
            eq_sde.max_dev = std::max(eq_sde.max_dev, linf_dist(a, b));
        }

        // suite 3: DPM-Solver++(2S) rewritten for the noise prediction model is
        // DPM-Solver-2 with an extra factor e^{-r h} on the correction term
        {
            const double s_mid = 0.5 * (t_s + t_t);
            const auto pm = sched.alpha_sigma_lambda(s_mid);
            const double r = (pm.lambda - ps.lambda) / h;

            const Vec a = dpm_pp_2s_step(x, t_s, s_mid, t_t, model, sched);

            const Vec e1 = eval_noise(model, sched, x, t_s);
            const Vec u = lin(pm.alpha / ps.alpha, x, -pm.sigma * std::expm1(r * h), e1);
            const Vec e2 = eval_noise(model, sched, u, s_mid);
            const double factor = std::exp(-r * h) * (1.0 + opt.perturb);
            Vec b = lin(pt.alpha / ps.alpha, x, -pt.sigma * std::expm1(h), e1);
            add_scaled(b, -pt.sigma / (2.0 * r) * std::expm1(h) * factor, sub(e2, e1));
            eq_rewrite.max_dev = std::max(eq_rewrite.max_dev, linf_dist(a, b));
        }
    }

    std::vector<SuiteResult> out{eq_first, eq_sde, eq_rewrite};
    for (SuiteResult& s : out) s.pass = s.max_dev < s.threshold;
    return out;
}

/// Moment diagnostics of an SDE sampler at t_min: z-scores of the sample mean
/// and std against the analytic Gaussian marginal.
struct MomentDiagnostics {
    std::string method;
    double sample_mean = 0.0;
    double sample_std = 0.0;
    double analytic_mean = 0.0;
    double analytic_std = 0.0;
    double z_mean = 0.0;
    double z_std = 0.0;
};

inline std::vector<RunRecord> run_sde_stats(const StudySpec& study, std::vector<MomentDiagnostics>* diagnostics) {
    if (study.methods.empty()) throw std::invalid_argument("run_sde_stats: empty method list");
    if (study.step_counts.empty()) throw std::invalid_argument("run_sde_stats: empty step-count list");
    if (study.trajectories < 2) throw std::invalid_argument("run_sde_stats: need at least 2 trajectories");
    if (study.oracle_mu.size() != 1)
        throw std::invalid_argument("run_sde_stats: moment diagnostics are defined for D = 1");

    const NoiseSchedule sched = schedule_by_name(study.schedule);
    const GaussianOracle oracle{study.oracle_mu, study.oracle_s0};
    const PredictionModel model = oracle.data_model(sched);

    const double mean_T = sched.alpha(sched.t_max()) * oracle.mu[0];
    const double std_T = std::sqrt(oracle.marginal_var(sched.t_max(), sched));
    const double mean_end = sched.alpha(sched.t_min()) * oracle.mu[0];
    const double std_end = std::sqrt(oracle.marginal_var(sched.t_min(), sched));

    std::vector<RunRecord> records;
    for (std::uint64_t seed : study.seeds) {
        const NoiseStream start_stream(seed, /*stream=*/2);
        for (Method method : study.methods) {
            if (!method_is_stochastic(method))
                throw std::invalid_argument("run_sde_stats: method is not stochastic");
            for (std::size_t m : study.step_counts) {
                // kappa = 3 concentrates steps near t_min, where the first-order
                // solvers accrue most of their weak (moment) bias
                const TimeGrid grid = make_time_grid(sched, m, TimeGrid::Kind::PowerKappa, 3.0);
                const double t0 = detail::now_ms();
                double sum = 0.0, sum_sq = 0.0;
                std::size_t nfe = 0;
                for (std::size_t k = 0; k < study.trajectories; ++k) {
                    SolverSpec spec;
                    spec.method = method;
                    spec.grid = grid;
                    spec.seed = study.zero_noise_fixture
                                    ? 0
                                    : detail::splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * (k + 1)));
                    const double z0 = study.zero_noise_fixture ? 0.0 : start_stream.normal(k, 0);
                    Vec x_T{mean_T + std_T * z0};
                    SampleResult res;
                    if (study.zero_noise_fixture) {
                        // deterministic skeleton: run the steppers with z = 0
                        res.x = x_T;
                        const auto& times = grid.times;
                        const Vec z_zero{0.0};
                        BufferedOutput prev;
                        for (std::size_t i = 1; i <= m; ++i) {
                            const double t_s = times[i - 1], t_t = times[i];
                            switch (method) {
                                case Method::Sde1:
                                    res.x = sde_1_step(res.x, t_s, t_t, z_zero, model, sched);
                                    break;
                                case Method::SdePp1:
                                    res.x = sde_pp_1_step(res.x, t_s, t_t, z_zero, model, sched);
                                    break;
                                case Method::Sde2m: {
                                    const Vec out_s = eval_noise(model, sched, res.x, t_s);
                                    res.x = (i == 1) ? sde_1_step(res.x, t_s, t_t, z_zero, model, sched)
                                                     : sde_2m_step(res.x, t_s, t_t, z_zero, prev, model, sched);
                                    prev = BufferedOutput{t_s, sched.lambda(t_s), out_s};
                                    break;
                                }
                                default: {
                                    const Vec out_s = eval_data(model, sched, res.x, t_s);
                                    res.x = (i == 1) ? sde_pp_1_step(res.x, t_s, t_t, z_zero, model, sched)
                                                     : sde_pp_2m_step(res.x, t_s, t_t, z_zero, prev, model, sched);
                                    prev = BufferedOutput{t_s, sched.lambda(t_s), out_s};
                                    break;
                                }
                            }
                        }
                        res.nfe = m;
                    } else {
                        res = sample(model, sched, spec, x_T);
                    }
                    sum += res.x[0];
                    sum_sq += res.x[0] * res.x[0];
                    nfe = res.nfe;
                }
                const double n = static_cast<double>(study.trajectories);
                const double mean = sum / n;
                const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
                const double sd = std::sqrt(var);
                const double se_mean = std_end / std::sqrt(n);
                const double se_std = std_end / std::sqrt(2.0 * n);

                if (diagnostics) {
                    MomentDiagnostics d;
                    d.method = method_name(method);
                    d.sample_mean = mean;
                    d.sample_std = sd;
                    d.analytic_mean = mean_end;
                    d.analytic_std = std_end;
                    d.z_mean = (mean - mean_end) / se_mean;
                    d.z_std = (sd - std_end) / se_std;
                    diagnostics->push_back(d);
                }

                RunRecord rec;
                rec.method = method_name(method);
                rec.steps = m;
                rec.nfe = nfe;
                rec.error_l2_per_dim = std::abs(mean - mean_end);
                rec.wall_ms = study.deterministic_timing ? 0.0 : detail::now_ms() - t0;
                rec.seed = seed;
                records.push_back(std::move(rec));
            }
        }
    }
    detail::sort_records(records);
    return records;
}

inline void write_csv(std::ostream& os, const std::vector<RunRecord>& records) {
    os << "method,M,nfe,error_l2_per_dim,fitted_order,wall_ms,seed\n";
    char buf[160];
    for (const RunRecord& r : records) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.12e,%.6f,%.3f,%llu\n", r.method.c_str(), r.steps, r.nfe,
                      r.error_l2_per_dim, r.fitted_order, r.wall_ms,
                      static_cast<unsigned long long>(r.seed));
        os << buf;
    }
}

inline void write_summary(std::ostream& os, const std::vector<SuiteResult>& suites) {
    char buf[160];
    for (const SuiteResult& s : suites) {
        std::snprintf(buf, sizeof(buf), "SUITE %s %s max_dev=%.3e\n", s.name.c_str(),
                      s.pass ? "PASS" : "FAIL", s.max_dev);
        os << buf;
    }
}

}  // namespace dpmsolve
