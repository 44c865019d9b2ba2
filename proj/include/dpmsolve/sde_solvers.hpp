#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>

#include "dpmsolve/model.hpp"
#include "dpmsolve/schedule.hpp"
#include "dpmsolve/vec.hpp"

namespace dpmsolve {

// Steps shorter than this in lambda are treated as no-ops; expm1-style
// evaluation handles everything above it.
inline constexpr double kDegenerateStepH = 1e-12;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Counter-based standard-normal stream: each value is a pure function of
/// (seed, stream, step, lane), so trajectories are reproducible and draws can
/// be generated independently per step with nothing consumed twice.
class NoiseStream {
public:
    explicit NoiseStream(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(detail::splitmix64(detail::splitmix64(seed) ^ (0x5851f42d4c957f2dULL * (stream + 1)))) {}

    double normal(std::uint64_t step, std::uint64_t lane) const {
        const std::uint64_t base = detail::splitmix64(key_ ^ detail::splitmix64(step * 2u + 0x632be59bd9b4e019ULL));
        const std::uint64_t a = detail::splitmix64(base ^ (2u * lane + 0));
        const std::uint64_t b = detail::splitmix64(base ^ (2u * lane + 1));
        // Box-Muller; u1 in (0,1], u2 in [0,1)
        const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    Vec draw(std::uint64_t step, std::size_t dim) const {
        Vec z(dim);
        for (std::size_t i = 0; i < dim; ++i) z[i] = normal(step, i);
        return z;
    }

private:
    std::uint64_t key_;
};

/// Buffered model output at the previously visited point r of a multistep
/// solver (r > current s in time, lambda_r < lambda_s).
struct BufferedOutput {
    double t = 0.0;
    double lambda = 0.0;
    Vec output;
};

/// Which coefficient to use on the second-order SDE correction term: the
/// simplified (e^h - 1)/2-style form, or the exact integral (e^h - 1 - h)/h.
enum class SdeCoeff { Simplified, Exact };

namespace detail {

struct StepCoeffs {
    double alpha_s, sigma_s, alpha_t, sigma_t, h;
};

inline StepCoeffs sde_coeffs(const NoiseSchedule& sched, double t_s, double t_t) {
    if (t_t > t_s) throw std::invalid_argument("sde step: requires t_t <= t_s");
    const auto ps = sched.alpha_sigma_lambda(t_s);
    const auto pt = sched.alpha_sigma_lambda(t_t);
    return {ps.alpha, ps.sigma, pt.alpha, pt.sigma, pt.lambda - ps.lambda};
}

// x_t = (alpha_t/alpha_s) x_s - 2 sigma_t (e^h - 1) eps_s + sigma_t sqrt(e^{2h} - 1) z
inline Vec sde_1_from_eps(const Vec& x_s, const StepCoeffs& c, const Vec& eps_s, const Vec& z) {
    Vec out = lin(c.alpha_t / c.alpha_s, x_s, -2.0 * c.sigma_t * std::expm1(c.h), eps_s);
    add_scaled(out, c.sigma_t * std::sqrt(std::expm1(2.0 * c.h)), z);
    return out;
}

// x_t = (sigma_t/sigma_s) e^{-h} x_s + alpha_t (1 - e^{-2h}) x0_s + sigma_t sqrt(1 - e^{-2h}) z
inline Vec sde_pp_1_from_x0(const Vec& x_s, const StepCoeffs& c, const Vec& x0_s, const Vec& z) {
    const double one_minus_e2h = -std::expm1(-2.0 * c.h);
    Vec out = lin(c.sigma_t / c.sigma_s * std::exp(-c.h), x_s, c.alpha_t * one_minus_e2h, x0_s);
    add_scaled(out, c.sigma_t * std::sqrt(one_minus_e2h), z);
    return out;
}

inline double multistep_r1(double lambda_r, double lambda_s, double h) {
    const double r1 = (lambda_r - lambda_s) / h;
    if (std::abs(r1) < 1e-14) throw std::invalid_argument("sde multistep step: r1 must be nonzero");
    return r1;
}

}  // namespace detail

/// First-order SDE solver on the noise prediction model.
inline Vec sde_1_step(const Vec& x_s, double t_s, double t_t, const Vec& z, const PredictionModel& model,
                      const NoiseSchedule& sched) {
    const auto c = detail::sde_coeffs(sched, t_s, t_t);
    if (c.h < kDegenerateStepH) return x_s;
    return detail::sde_1_from_eps(x_s, c, eval_noise(model, sched, x_s, t_s), z);
}

/// First-order SDE solver on the data prediction model.
inline Vec sde_pp_1_step(const Vec& x_s, double t_s, double t_t, const Vec& z, const PredictionModel& model,
                         const NoiseSchedule& sched) {
    const auto c = detail::sde_coeffs(sched, t_s, t_t);
    if (c.h < kDegenerateStepH) return x_s;
    return detail::sde_pp_1_from_x0(x_s, c, eval_data(model, sched, x_s, t_s), z);
}

namespace detail {

inline Vec sde_2m_from_outputs(const Vec& x_s, const StepCoeffs& c, const Vec& eps_s, double lambda_s,
                               const BufferedOutput& prev, const Vec& z, SdeCoeff coeff) {
    const double r1 = multistep_r1(prev.lambda, lambda_s, c.h);
    // correction coefficient: simplified sigma_t (e^h - 1), exact 2 sigma_t (e^h - 1 - h)/h
    const double corr = (coeff == SdeCoeff::Simplified)
                            ? c.sigma_t * std::expm1(c.h)
                            : 2.0 * c.sigma_t * (std::expm1(c.h) - c.h) / c.h;
    Vec out = lin(c.alpha_t / c.alpha_s, x_s, -2.0 * c.sigma_t * std::expm1(c.h), eps_s);
    add_scaled(out, -corr / r1, sub(prev.output, eps_s));
    add_scaled(out, c.sigma_t * std::sqrt(std::expm1(2.0 * c.h)), z);
    return out;
}

inline Vec sde_pp_2m_from_outputs(const Vec& x_s, const StepCoeffs& c, const Vec& x0_s, double lambda_s,
                                  const BufferedOutput& prev, const Vec& z, SdeCoeff coeff) {
    const double r1 = multistep_r1(prev.lambda, lambda_s, c.h);
    const double one_minus_e2h = -std::expm1(-2.0 * c.h);
    // correction coefficient: simplified alpha_t (1 - e^{-2h})/2, exact alpha_t (e^{-2h} - 1 + 2h)/(2h)
    const double corr = (coeff == SdeCoeff::Simplified)
                            ? 0.5 * c.alpha_t * one_minus_e2h
                            : c.alpha_t * (std::expm1(-2.0 * c.h) + 2.0 * c.h) / (2.0 * c.h);
    Vec out = lin(c.sigma_t / c.sigma_s * std::exp(-c.h), x_s, c.alpha_t * one_minus_e2h, x0_s);
    add_scaled(out, corr / r1, sub(prev.output, x0_s));
    add_scaled(out, c.sigma_t * std::sqrt(one_minus_e2h), z);
    return out;
}

}  // namespace detail

/// Second-order multistep SDE solver on the noise prediction model. prev holds
/// eps_theta at the previously visited point r (so lambda_r < lambda_s and
/// r1 = (lambda_r - lambda_s)/h < 0).
inline Vec sde_2m_step(const Vec& x_s, double t_s, double t_t, const Vec& z, const BufferedOutput& prev,
                       const PredictionModel& model, const NoiseSchedule& sched,
                       SdeCoeff coeff = SdeCoeff::Simplified) {
    const auto c = detail::sde_coeffs(sched, t_s, t_t);
    if (c.h < kDegenerateStepH) return x_s;
    return detail::sde_2m_from_outputs(x_s, c, eval_noise(model, sched, x_s, t_s), sched.lambda(t_s), prev, z,
                                       coeff);
}

/// Second-order multistep SDE solver on the data prediction model.
inline Vec sde_pp_2m_step(const Vec& x_s, double t_s, double t_t, const Vec& z, const BufferedOutput& prev,
                          const PredictionModel& model, const NoiseSchedule& sched,
                          SdeCoeff coeff = SdeCoeff::Simplified) {
    const auto c = detail::sde_coeffs(sched, t_s, t_t);
    if (c.h < kDegenerateStepH) return x_s;
    return detail::sde_pp_2m_from_outputs(x_s, c, eval_data(model, sched, x_s, t_s), sched.lambda(t_s), prev, z,
                                          coeff);
}

}  // namespace dpmsolve
