#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include "dpmsolve/model.hpp"
#include "dpmsolve/schedule.hpp"
#include "dpmsolve/sde_solvers.hpp"
#include "dpmsolve/vec.hpp"

namespace dpmsolve {

/// Exponential-integrator weight int_{lambda_s}^{lambda_t} e^l (l-lambda_s)^n/n! dl
/// in closed form, for n in {0, 1}:
///   n=0: e^{lambda_t} - e^{lambda_s}
///   n=1: e^{lambda_t}(h - 1) + e^{lambda_s},  h = lambda_t - lambda_s
inline double taylor_coeff(int n, double lambda_s, double lambda_t) {
    const double h = lambda_t - lambda_s;
    switch (n) {
        case 0:
            return std::exp(lambda_s) * std::expm1(h);
        case 1:
            return std::exp(lambda_s) * (h * std::exp(h) - std::expm1(h));
        default:
            throw std::invalid_argument("taylor_coeff: only n in {0, 1} supported");
    }
}

/// First-order step on the data prediction model (DDIM with eta = 0):
/// x_t = (sigma_t/sigma_s) x_s - alpha_t (e^{-h} - 1) x_theta(x_s, t_s).
inline Vec first_order_data_step(const Vec& x_s, double t_s, double t_t, const PredictionModel& model,
                                 const NoiseSchedule& sched) {
    const auto ps = sched.alpha_sigma_lambda(t_s);
    const auto pt = sched.alpha_sigma_lambda(t_t);
    const double h = pt.lambda - ps.lambda;
    if (h < kDegenerateStepH) return x_s;
    return lin(pt.sigma / ps.sigma, x_s, -pt.alpha * std::expm1(-h), eval_data(model, sched, x_s, t_s));
}

/// Generalized DDIM: x_t = alpha_t x_theta + sqrt(sigma_t^2 - eta^2) eps_theta + eta z,
/// with x_theta and eps_theta taken from one model evaluation at (x_s, t_s) and
/// linked by the conversion identity.
inline Vec ddim_eta_step(const Vec& x_s, double t_s, double t_t, double eta, const Vec* z,
                         const PredictionModel& model, const NoiseSchedule& sched) {
    const auto ps = sched.alpha_sigma_lambda(t_s);
    const auto pt = sched.alpha_sigma_lambda(t_t);
    if (!(eta >= 0.0)) throw std::invalid_argument("ddim_eta_step: eta must be >= 0");
    if (eta > pt.sigma) throw std::invalid_argument("ddim_eta_step: eta exceeds sigma_t");
    if (eta > 0.0 && z == nullptr) throw std::invalid_argument("ddim_eta_step: eta > 0 requires z");
    const double h = pt.lambda - ps.lambda;
    if (h < kDegenerateStepH) return x_s;

    Vec x0, eps;
    if (model.kind == ModelKind::DataPrediction) {
        x0 = model.eval(x_s, t_s);
        eps = x0_to_eps(x0, x_s, ps.alpha, ps.sigma);
    } else {
        eps = model.eval(x_s, t_s);
        x0 = eps_to_x0(eps, x_s, ps.alpha, ps.sigma);
    }
    Vec out = lin(pt.alpha, x0, std::sqrt(pt.sigma * pt.sigma - eta * eta), eps);
    if (eta > 0.0) add_scaled(out, eta, *z);
    return out;
}

/// Singlestep second-order solver on the data prediction model, two model
/// evaluations per interval:
///   r = (lambda_s_i - lambda_{t_{i-1}}) / h
///   u = (sigma_s_i/sigma_prev) x - alpha_s_i (e^{-r h} - 1) m1
///   D = (1 - 1/(2r)) m1 + 1/(2r) m2
///   x_t = (sigma_t/sigma_prev) x - alpha_t (e^{-h} - 1) D
inline Vec dpm_pp_2s_step(const Vec& x_prev, double t_prev, double s_mid, double t_next,
                          const PredictionModel& model, const NoiseSchedule& sched) {
    const auto pp = sched.alpha_sigma_lambda(t_prev);
    const auto pm = sched.alpha_sigma_lambda(s_mid);
    const auto pt = sched.alpha_sigma_lambda(t_next);
    const double h = pt.lambda - pp.lambda;
    if (h < kDegenerateStepH) return x_prev;
    const double r = (pm.lambda - pp.lambda) / h;
    if (!(r > 0.0 && r < 1.0))
        throw std::invalid_argument("dpm_pp_2s_step: intermediate point must satisfy t_prev > s > t_next");

    const Vec m1 = eval_data(model, sched, x_prev, t_prev);
    const Vec u = lin(pm.sigma / pp.sigma, x_prev, -pm.alpha * std::expm1(-r * h), m1);
    const Vec m2 = eval_data(model, sched, u, s_mid);
    const Vec d = lin(1.0 - 0.5 / r, m1, 0.5 / r, m2);
    return lin(pt.sigma / pp.sigma, x_prev, -pt.alpha * std::expm1(-h), d);
}

/// Singlestep second-order baseline on the noise prediction model:
///   u = (alpha_s/alpha_prev) x - sigma_s (e^{r h} - 1) e1
///   x_t = (alpha_t/alpha_prev) x - sigma_t (e^h - 1) e1 - sigma_t/(2r) (e^h - 1)(e2 - e1)
inline Vec dpm_solver_2_step(const Vec& x_prev, double t_prev, double s_mid, double t_next,
                             const PredictionModel& model, const NoiseSchedule& sched) {
    const auto pp = sched.alpha_sigma_lambda(t_prev);
    const auto pm = sched.alpha_sigma_lambda(s_mid);
    const auto pt = sched.alpha_sigma_lambda(t_next);
    const double h = pt.lambda - pp.lambda;
    if (h < kDegenerateStepH) return x_prev;
    const double r = (pm.lambda - pp.lambda) / h;
    if (!(r > 0.0 && r < 1.0))
        throw std::invalid_argument("dpm_solver_2_step: intermediate point must satisfy t_prev > s > t_next");

    const Vec e1 = eval_noise(model, sched, x_prev, t_prev);
    const Vec u = lin(pm.alpha / pp.alpha, x_prev, -pm.sigma * std::expm1(r * h), e1);
    const Vec e2 = eval_noise(model, sched, u, s_mid);
    Vec out = lin(pt.alpha / pp.alpha, x_prev, -pt.sigma * std::expm1(h), e1);
    add_scaled(out, -pt.sigma / (2.0 * r) * std::expm1(h), sub(e2, e1));
    return out;
}

/// State carried between multistep iterations: current point plus the two most
/// recent model outputs (newest first), at times strictly greater than t.
struct StepState {
    struct Buffered {
        double t = 0.0;
        double lambda = 0.0;
        Vec output;
    };

    double t = 0.0;
    Vec x;
    std::vector<Buffered> buffer;
};

/// Evaluate and buffer the model at the starting point (Algorithm 2 line 3).
inline StepState multistep_init(Vec x_start, double t_start, const PredictionModel& model,
                                const NoiseSchedule& sched) {
    StepState st;
    st.t = t_start;
    st.x = std::move(x_start);
    st.buffer.push_back({t_start, sched.lambda(t_start), eval_data(model, sched, st.x, t_start)});
    return st;
}

/// Multistep second-order step on the data prediction model, one new model
/// evaluation. With one buffered output this is the first-order fallback; with
/// two it applies
///   r = h_{i-1}/h_i,  D = (1 + 1/(2r)) m_{i-1} - 1/(2r) m_{i-2}
///   x_t = (sigma_t/sigma_s) x - alpha_t (e^{-h_i} - 1) D
/// The new output is buffered unless final_step is set (Algorithm 2 line 10).
inline StepState dpm_pp_2m_step(StepState state, double t_next, const PredictionModel& model,
                                const NoiseSchedule& sched, bool final_step = false) {
    if (state.buffer.empty())
        throw std::logic_error("dpm_pp_2m_step: buffer empty; call multistep_init first");
    const auto ps = sched.alpha_sigma_lambda(state.t);
    const auto pt = sched.alpha_sigma_lambda(t_next);
    const double h = pt.lambda - ps.lambda;

    Vec x_new;
    if (h < kDegenerateStepH) {
        x_new = state.x;
    } else if (state.buffer.size() < 2) {
        x_new = lin(pt.sigma / ps.sigma, state.x, -pt.alpha * std::expm1(-h), state.buffer[0].output);
    } else {
        const double h_prev = state.buffer[0].lambda - state.buffer[1].lambda;
        if (!(h_prev > 0.0))
            throw std::logic_error("dpm_pp_2m_step: buffer must be ordered newest first");
        const double r = h_prev / h;
        const Vec d = lin(1.0 + 0.5 / r, state.buffer[0].output, -0.5 / r, state.buffer[1].output);
        x_new = lin(pt.sigma / ps.sigma, state.x, -pt.alpha * std::expm1(-h), d);
    }

    state.t = t_next;
    state.x = std::move(x_new);
    if (!final_step) {
        state.buffer.insert(state.buffer.begin(), {t_next, pt.lambda, eval_data(model, sched, state.x, t_next)});
        if (state.buffer.size() > 2) state.buffer.pop_back();
    }
    return state;
}

enum class Method {
    DdimEta,
    FirstOrderData,
    DpmSolver2,
    DpmPp2s,
    DpmPp2m,
    Sde1,
    SdePp1,
    Sde2m,
    SdePp2m,
};

inline const char* method_name(Method m) {
    switch (m) {
        case Method::DdimEta: return "ddim_eta";
        case Method::FirstOrderData: return "first_order_data";
        case Method::DpmSolver2: return "dpm_solver_2";
        case Method::DpmPp2s: return "dpm_pp_2s";
        case Method::DpmPp2m: return "dpm_pp_2m";
        case Method::Sde1: return "sde_1";
        case Method::SdePp1: return "sde_pp_1";
        case Method::Sde2m: return "sde_2m";
        case Method::SdePp2m: return "sde_pp_2m";
    }
    return "?";
}

inline std::optional<Method> parse_method(std::string_view name) {
    for (Method m : {Method::DdimEta, Method::FirstOrderData, Method::DpmSolver2, Method::DpmPp2s,
                     Method::DpmPp2m, Method::Sde1, Method::SdePp1, Method::Sde2m, Method::SdePp2m}) {
        if (name == method_name(m)) return m;
    }
    return std::nullopt;
}

inline bool method_is_stochastic(Method m) {
    return m == Method::Sde1 || m == Method::SdePp1 || m == Method::Sde2m || m == Method::SdePp2m;
}

inline bool method_needs_intermediates(Method m) {
    return m == Method::DpmSolver2 || m == Method::DpmPp2s;
}

struct SolverSpec {
    Method method = Method::DpmPp2m;
    TimeGrid grid;
    double eta = 0.0;        // ddim_eta only
    std::uint64_t seed = 0;  // stochastic methods (and ddim_eta with eta > 0)
    SdeCoeff sde_coeff = SdeCoeff::Simplified;
};

struct SampleResult {
    Vec x;
    std::size_t nfe = 0;
    std::vector<Vec> trajectory;  // populated only when requested; includes x_T and every x_{t_i}
};

/// Run the chosen stepper over the grid from t_0 down to t_M. Deterministic for
/// ODE methods; stochastic methods draw one z per step from a seeded stream.
/// NFE accounting: 2 evaluations per interval for singlestep second-order
/// methods, M total for everything else.
inline SampleResult sample(const PredictionModel& model, const NoiseSchedule& sched, const SolverSpec& spec,
                           const Vec& x_start, bool record_trajectory = false) {
    const std::size_t m = spec.grid.steps();
    if (m == 0) throw std::invalid_argument("sample: grid must contain at least one step");
    if (model.dim != 0 && model.dim != x_start.size())
        throw std::invalid_argument("sample: x_T dimension does not match model");
    if (method_needs_intermediates(spec.method) && spec.grid.intermediates.size() != m)
        throw std::invalid_argument("sample: singlestep second-order methods need grid intermediates");

    SampleResult res;
    res.nfe = 0;
    PredictionModel counted = model;
    counted.eval = [&res, &model](const Vec& x, double t) {
        ++res.nfe;
        return model.eval(x, t);
    };

    const NoiseStream noise(spec.seed);
    const auto& times = spec.grid.times;
    Vec x = x_start;
    if (record_trajectory) res.trajectory.push_back(x);

    auto record = [&](const Vec& v) {
        if (record_trajectory) res.trajectory.push_back(v);
    };

    switch (spec.method) {
        case Method::FirstOrderData:
            for (std::size_t i = 1; i <= m; ++i) {
                x = first_order_data_step(x, times[i - 1], times[i], counted, sched);
                record(x);
            }
            break;
        case Method::DdimEta:
            for (std::size_t i = 1; i <= m; ++i) {
                if (spec.eta > 0.0) {
                    const Vec z = noise.draw(i, x.size());
                    x = ddim_eta_step(x, times[i - 1], times[i], spec.eta, &z, counted, sched);
                } else {
                    x = ddim_eta_step(x, times[i - 1], times[i], 0.0, nullptr, counted, sched);
                }
                record(x);
            }
            break;
        case Method::DpmPp2s:
            for (std::size_t i = 1; i <= m; ++i) {
                x = dpm_pp_2s_step(x, times[i - 1], spec.grid.intermediates[i - 1], times[i], counted, sched);
                record(x);
            }
            break;
        case Method::DpmSolver2:
            for (std::size_t i = 1; i <= m; ++i) {
                x = dpm_solver_2_step(x, times[i - 1], spec.grid.intermediates[i - 1], times[i], counted, sched);
                record(x);
            }
            break;
        case Method::DpmPp2m: {
            StepState st = multistep_init(std::move(x), times[0], counted, sched);
            for (std::size_t i = 1; i <= m; ++i) {
                st = dpm_pp_2m_step(std::move(st), times[i], counted, sched, /*final_step=*/i == m);
                record(st.x);
            }
            x = std::move(st.x);
            break;
        }
        case Method::Sde1:
        case Method::SdePp1:
            for (std::size_t i = 1; i <= m; ++i) {
                const Vec z = noise.draw(i, x.size());
                x = (spec.method == Method::Sde1) ? sde_1_step(x, times[i - 1], times[i], z, counted, sched)
                                                  : sde_pp_1_step(x, times[i - 1], times[i], z, counted, sched);
                record(x);
            }
            break;
        case Method::Sde2m:
        case Method::SdePp2m: {
            const bool data_form = spec.method == Method::SdePp2m;
            BufferedOutput prev;
            bool have_prev = false;
            for (std::size_t i = 1; i <= m; ++i) {
                const double t_s = times[i - 1], t_t = times[i];
                const auto c = detail::sde_coeffs(sched, t_s, t_t);
                const double lambda_s = sched.lambda(t_s);
                const Vec z = noise.draw(i, x.size());
                const Vec out_s = data_form ? eval_data(counted, sched, x, t_s) : eval_noise(counted, sched, x, t_s);
                Vec x_next;
                if (c.h < kDegenerateStepH) {
                    x_next = x;
                } else if (!have_prev) {
                    x_next = data_form ? detail::sde_pp_1_from_x0(x, c, out_s, z)
                                       : detail::sde_1_from_eps(x, c, out_s, z);
                } else {
                    x_next = data_form
                                 ? detail::sde_pp_2m_from_outputs(x, c, out_s, lambda_s, prev, z, spec.sde_coeff)
                                 : detail::sde_2m_from_outputs(x, c, out_s, lambda_s, prev, z, spec.sde_coeff);
                }
                prev = BufferedOutput{t_s, lambda_s, out_s};
                have_prev = true;
                x = std::move(x_next);
                record(x);
            }
            break;
        }
    }

    res.x = std::move(x);
    return res;
}

}  // namespace dpmsolve
