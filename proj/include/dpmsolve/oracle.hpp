#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>

#include "dpmsolve/model.hpp"
#include "dpmsolve/schedule.hpp"
#include "dpmsolve/vec.hpp"

namespace dpmsolve {

/// Isotropic Gaussian data N(mu, s0^2 I) under the forward process: the
/// marginal of x_t is N(alpha_t mu, (alpha_t^2 s0^2 + sigma_t^2) I), the
/// optimal predictors are affine, and the probability flow is known in closed
/// form. Ground truth for every convergence and exactness test.
struct GaussianOracle {
    Vec mu;
    double data_std = 1.0;  // s0 > 0

    std::size_t dim() const { return mu.size(); }

    double marginal_var(double t, const NoiseSchedule& sched) const {
        const auto p = sched.alpha_sigma_lambda(t);
        return p.alpha * p.alpha * data_std * data_std + p.sigma * p.sigma;
    }

    Vec marginal_mean(double t, const NoiseSchedule& sched) const {
        return scaled(mu, sched.alpha(t));
    }

    double log_marginal_density(const Vec& x, double t, const NoiseSchedule& sched) const {
        const double v = marginal_var(t, sched);
        const Vec m = marginal_mean(t, sched);
        const double d2 = l2_dist(x, m);
        const double d = static_cast<double>(x.size());
        return -0.5 * d * std::log(2.0 * 3.14159265358979323846 * v) - 0.5 * d2 * d2 / v;
    }

    /// Optimal noise predictor eps*(x, t) = sigma_t (x - alpha_t mu) / (alpha_t^2 s0^2 + sigma_t^2),
    /// i.e. -sigma_t times the score of the marginal.
    Vec eps(const Vec& x, double t, const NoiseSchedule& sched) const {
        const auto p = sched.alpha_sigma_lambda(t);
        const double v = p.alpha * p.alpha * data_std * data_std + p.sigma * p.sigma;
        return lin(p.sigma / v, x, -p.sigma * p.alpha / v, mu);
    }

    /// Optimal data predictor x0*(x, t) = (s0^2 alpha_t x + sigma_t^2 mu) / (alpha_t^2 s0^2 + sigma_t^2).
    Vec x0(const Vec& x, double t, const NoiseSchedule& sched) const {
        const auto p = sched.alpha_sigma_lambda(t);
        const double v = p.alpha * p.alpha * data_std * data_std + p.sigma * p.sigma;
        return lin(data_std * data_std * p.alpha / v, x, p.sigma * p.sigma / v, mu);
    }

    PredictionModel noise_model(const NoiseSchedule& sched) const {
        PredictionModel m;
        m.kind = ModelKind::NoisePrediction;
        m.dim = dim();
        m.eval = [oracle = *this, sched](const Vec& x, double t) { return oracle.eps(x, t, sched); };
        return m;
    }

    PredictionModel data_model(const NoiseSchedule& sched) const {
        PredictionModel m;
        m.kind = ModelKind::DataPrediction;
        m.dim = dim();
        m.eval = [oracle = *this, sched](const Vec& x, double t) { return oracle.x0(x, t, sched); };
        return m;
    }
};

/// Right-hand side of the probability-flow ODE in the data parameterization:
/// dx/dt = (f + g^2/(2 sigma^2)) x - (alpha g^2/(2 sigma^2)) x_theta(x, t).
inline Vec probability_flow_rhs(const PredictionModel& model, const NoiseSchedule& sched, const Vec& x,
                                double t) {
    const auto p = sched.alpha_sigma_lambda(t);
    const double g2_over_2s2 = sched.g_squared(t) / (2.0 * p.sigma * p.sigma);
    return lin(sched.dlog_alpha_dt(t) + g2_over_2s2, x, -p.alpha * g2_over_2s2,
               eval_data(model, sched, x, t));
}

struct ReferenceSolution {
    Vec x_end;
    double tolerance_achieved = 0.0;
    std::size_t evaluations = 0;
};

namespace detail {

// In the log-SNR variable the flow is dx/dlambda = alpha(lambda) (x_theta - alpha(lambda) x),
// with alpha^2(lambda) = 1/(1 + e^{-2 lambda}) exact for any VP schedule.
inline double vp_alpha_of_lambda(double lam) {
    const double u = -2.0 * lam;
    const double softplus = std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u)));
    return std::exp(-0.5 * softplus);
}

}  // namespace detail

/// Solve the probability-flow ODE from t_start down to t_end with an adaptive
/// embedded Dormand-Prince 5(4) pair in the lambda variable. Test
/// infrastructure: deliberately independent of the exponential-integrator
/// steppers it is used to check.
inline ReferenceSolution reference_solve(const PredictionModel& model, const NoiseSchedule& sched,
                                         const Vec& x_start, double t_start, double t_end, double tol) {
    if (!(tol >= 1e-12 && tol <= 1e-4))
        throw std::invalid_argument("reference_solve: tol must lie in [1e-12, 1e-4]");
    if (!(t_end < t_start)) throw std::invalid_argument("reference_solve: requires t_end < t_start");

    const double l_start = sched.lambda(t_start);
    const double l_end = sched.lambda(t_end);
    std::size_t evals = 0;

    auto rhs = [&](double lam, const Vec& x) {
        ++evals;
        const double a = detail::vp_alpha_of_lambda(lam);
        const double t = sched.inverse_lambda(lam);
        return lin(a, eval_data(model, sched, x, t), -a * a, x);
    };

    // Dormand-Prince 5(4) tableau
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                            a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                            b6 = 11.0 / 84;
    static constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                            e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                            e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

    const double span = l_end - l_start;
    const double itol = tol * 1e-2;  // per-step safety margin under the requested endpoint accuracy
    const double h_min = 1e-14 * std::abs(span);
    const double lam_done = l_end - 4e-16 * std::max(1.0, std::abs(l_end));
    const std::size_t n = x_start.size();

    Vec x = x_start;
    double lam = l_start;
    double h = span * 1e-3;
    Vec k1 = rhs(lam, x);
    std::size_t step = 0;

    while (lam < lam_done) {
        if (++step > 4000000) throw std::runtime_error("reference_solve: step budget exhausted");
        const bool clipped = h >= l_end - lam;
        const double hs = clipped ? l_end - lam : h;
        // only a controller-driven collapse counts as stiffness, not endpoint clipping
        if (!clipped && hs < h_min) throw std::runtime_error("reference_solve: step size underflow (stiffness)");

        Vec y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + hs * a21 * k1[i];
        const Vec k2 = rhs(lam + c2 * hs, y);
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + hs * (a31 * k1[i] + a32 * k2[i]);
        const Vec k3 = rhs(lam + c3 * hs, y);
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + hs * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        const Vec k4 = rhs(lam + c4 * hs, y);
        for (std::size_t i = 0; i < n; ++i)
            y[i] = x[i] + hs * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        const Vec k5 = rhs(lam + c5 * hs, y);
        for (std::size_t i = 0; i < n; ++i)
            y[i] = x[i] + hs * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
        const Vec k6 = rhs(lam + hs, y);
        Vec x_new(n);
        for (std::size_t i = 0; i < n; ++i)
            x_new[i] = x[i] + hs * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        const Vec k7 = rhs(lam + hs, x_new);  // FSAL

        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double est =
                hs * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
            const double scale = itol + itol * std::max(std::abs(x[i]), std::abs(x_new[i]));
            err = std::max(err, std::abs(est) / scale);
        }

        if (err <= 1.0) {
            lam += hs;
            x = std::move(x_new);
            k1 = k7;
        }
        const double factor = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
        h = hs * std::clamp(factor, 0.2, 5.0);
    }

    ReferenceSolution out;
    out.x_end = std::move(x);
    out.tolerance_achieved = tol;
    out.evaluations = evals;
    return out;
}

/// Convenience overload over the schedule's full [t_min, t_max] interval.
inline ReferenceSolution reference_solve(const PredictionModel& model, const NoiseSchedule& sched,
                                         const Vec& x_at_t_max, double tol) {
    return reference_solve(model, sched, x_at_t_max, sched.t_max(), sched.t_min(), tol);
}

namespace detail {

template <typename F>
Vec adaptive_simpson(F&& f, double a, double b, const Vec& fa, const Vec& fm, const Vec& fb, double tol,
                     int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const Vec flm = f(lm), frm = f(rm);
    const std::size_t n = fa.size();
    Vec s_whole(n), s_left(n), s_right(n);
    for (std::size_t i = 0; i < n; ++i) {
        s_whole[i] = (b - a) / 6.0 * (fa[i] + 4.0 * fm[i] + fb[i]);
        s_left[i] = (m - a) / 6.0 * (fa[i] + 4.0 * flm[i] + fm[i]);
        s_right[i] = (b - m) / 6.0 * (fm[i] + 4.0 * frm[i] + fb[i]);
    }
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(s_left[i] + s_right[i] - s_whole[i]));
    // below the width floor the estimate is roundoff, not truncation; stop splitting
    if (err <= 15.0 * tol || (b - a) < 1e-8) {
        Vec out(n);
        for (std::size_t i = 0; i < n; ++i)
            out[i] = s_left[i] + s_right[i] + (s_left[i] + s_right[i] - s_whole[i]) / 15.0;
        return out;
    }
    if (depth <= 0) throw std::runtime_error("verify_exact_solution: quadrature did not converge");
    Vec left = adaptive_simpson(f, a, m, fa, flm, fm, 0.5 * tol, depth - 1);
    Vec right = adaptive_simpson(f, m, b, fm, frm, fb, 0.5 * tol, depth - 1);
    for (std::size_t i = 0; i < n; ++i) left[i] += right[i];
    return left;
}

}  // namespace detail

/// Check the exact-solution formula x_t = (sigma_t/sigma_s) x_s + sigma_t
/// int_{lambda_s}^{lambda_t} e^l x_theta(x_l, l) dl by adaptive quadrature along
/// the reference trajectory; returns the L2 norm of the difference to the
/// reference endpoint.
inline double verify_exact_solution(const PredictionModel& model, const NoiseSchedule& sched, const Vec& x_s,
                                    double t_s, double t_t, double quad_tol) {
    if (!(quad_tol > 0.0)) throw std::invalid_argument("verify_exact_solution: quad_tol must be positive");
    const double ref_tol = std::clamp(quad_tol * 0.1, 1e-12, 1e-4);
    const auto ps = sched.alpha_sigma_lambda(t_s);
    const auto pt = sched.alpha_sigma_lambda(t_t);

    const ReferenceSolution ref = reference_solve(model, sched, x_s, t_s, t_t, ref_tol);

    std::map<double, Vec> trajectory;  // lambda -> x on the reference path
    trajectory.emplace(ps.lambda, x_s);
    auto path_point = [&](double lam) -> const Vec& {
        auto it = trajectory.find(lam);
        if (it == trajectory.end()) {
            const double t = sched.inverse_lambda(lam);
            it = trajectory.emplace(lam, reference_solve(model, sched, x_s, t_s, t, ref_tol).x_end).first;
        }
        return it->second;
    };
    auto integrand = [&](double lam) {
        const double t = sched.inverse_lambda(lam);
        return scaled(eval_data(model, sched, path_point(lam), t), std::exp(lam));
    };

    const double mid = 0.5 * (ps.lambda + pt.lambda);
    const Vec integral = detail::adaptive_simpson(integrand, ps.lambda, pt.lambda, integrand(ps.lambda),
                                                  integrand(mid), integrand(pt.lambda), quad_tol, 30);

    Vec result = lin(pt.sigma / ps.sigma, x_s, pt.sigma, integral);
    return l2_dist(result, ref.x_end);
}

}  // namespace dpmsolve
