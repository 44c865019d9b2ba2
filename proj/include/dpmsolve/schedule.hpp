#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "dpmsolve/vec.hpp"

namespace dpmsolve {

/// Variance-preserving noise schedules: the triple (alpha_t, sigma_t, lambda_t)
/// with alpha_t^2 + sigma_t^2 = 1 and lambda_t = log(alpha_t / sigma_t) strictly
/// decreasing in t. All evaluations are pure; instances are immutable after
/// construction and safe to share across threads.
class NoiseSchedule {
public:
    enum class Kind { VpLinearBeta, VpCosine, VpDiscreteInterp };

    struct Point {
        double alpha;
        double sigma;
        double lambda;
    };

    /// log alpha_t = -t^2 (beta_max - beta_min)/4 - t beta_min / 2.
    static NoiseSchedule vp_linear_beta(double beta_min = 0.1, double beta_max = 20.0,
                                        double t_min = 1e-3, double t_max = 1.0) {
        if (!(beta_max > beta_min) || !(beta_min > 0.0))
            throw std::invalid_argument("vp_linear_beta: need 0 < beta_min < beta_max");
        NoiseSchedule s;
        s.kind_ = Kind::VpLinearBeta;
        s.beta_min_ = beta_min;
        s.beta_max_ = beta_max;
        s.init_range(t_min, t_max);
        return s;
    }

    /// alpha_bar(t) = cos^2(pi/2 * (t+s)/(1+s)) with s = 0.008, normalized so
    /// alpha_bar(0) = 1. alpha(1) = 0 exactly, so the default t_max stops at
    /// 0.9946 where lambda is still finite.
    static NoiseSchedule vp_cosine(double t_min = 1e-3, double t_max = 0.9946) {
        NoiseSchedule s;
        s.kind_ = Kind::VpCosine;
        s.init_range(t_min, t_max);
        return s;
    }

    /// Discrete-time schedule lifted to continuous time: nodes t_n = n*t_end/N
    /// carry log alpha_{t_n} = 1/2 * sum_{i<=n} log(1 - beta_i) and log alpha
    /// is linearly interpolated between nodes. Valid domain is [t_end/N, t_end];
    /// evaluation outside it is an error, not a clamp.
    static NoiseSchedule discrete_interpolation(const std::vector<double>& betas, double t_end = 1.0) {
        const std::size_t n = betas.size();
        if (n < 2) throw std::invalid_argument("discrete_interpolation: need at least 2 betas");
        if (!(t_end > 0.0)) throw std::invalid_argument("discrete_interpolation: t_end must be positive");
        NoiseSchedule s;
        s.kind_ = Kind::VpDiscreteInterp;
        s.node_log_alpha_.resize(n);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!(betas[i] > 0.0 && betas[i] < 1.0))
                throw std::invalid_argument("discrete_interpolation: betas must lie in (0,1)");
            acc += 0.5 * std::log1p(-betas[i]);
            if (i > 0 && !(acc < s.node_log_alpha_[i - 1]))
                throw std::invalid_argument("discrete_interpolation: log alpha not strictly decreasing");
            s.node_log_alpha_[i] = acc;
        }
        s.t_end_ = t_end;
        s.init_range(t_end / static_cast<double>(n), t_end);
        return s;
    }

    Kind kind() const { return kind_; }
    double t_min() const { return t_min_; }
    double t_max() const { return t_max_; }

    double log_alpha(double t) const {
        check_time(t);
        return log_alpha_unchecked(t);
    }

    double alpha(double t) const { return std::exp(log_alpha(t)); }

    double sigma(double t) const {
        // sigma = sqrt(1 - alpha^2); -expm1(2 log alpha) keeps precision when alpha ~ 1.
        return std::sqrt(-std::expm1(2.0 * log_alpha(t)));
    }

    double lambda(double t) const {
        const double la = log_alpha(t);
        return la - 0.5 * std::log(-std::expm1(2.0 * la));
    }

    Point alpha_sigma_lambda(double t) const {
        const double la = log_alpha(t);
        const double sig2 = -std::expm1(2.0 * la);
        Point p;
        p.alpha = std::exp(la);
        p.sigma = std::sqrt(sig2);
        p.lambda = la - 0.5 * std::log(sig2);
        return p;
    }

    /// lambda at t_max (the most negative value of the valid lambda range).
    double lambda_min() const { return lambda(t_max_); }
    /// lambda at t_min.
    double lambda_max() const { return lambda(t_min_); }

    /// Monotone inverse of lambda(t). Closed form for the linear-beta schedule,
    /// safeguarded bisection (to 1e-12 on lambda) otherwise.
    double inverse_lambda(double lam) const {
        const double lo = lambda_min();
        const double hi = lambda_max();
        const double slack = 1e-9 * (1.0 + std::abs(lam));
        if (lam < lo - slack || lam > hi + slack)
            throw std::domain_error("inverse_lambda: lambda outside schedule range");
        lam = std::clamp(lam, lo, hi);

        if (kind_ == Kind::VpLinearBeta) {
            // Solve (beta_max-beta_min)/4 t^2 + beta_min/2 t + log alpha = 0 for t >= 0.
            // log alpha = -1/2 softplus(-2 lambda); the quotient form avoids cancellation.
            const double u = -2.0 * lam;
            const double softplus = std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u)));
            const double dbeta = beta_max_ - beta_min_;
            const double tmp = 2.0 * dbeta * softplus;  // = -4 dbeta log alpha >= 0
            const double t = tmp / ((std::sqrt(beta_min_ * beta_min_ + tmp) + beta_min_) * dbeta);
            return std::clamp(t, t_min_, t_max_);
        }

        double a = t_min_, b = t_max_;
        // lambda is strictly decreasing: f(a) >= 0 >= f(b)
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (a + b);
            const double f = lambda_at_unchecked(mid) - lam;
            if (std::abs(f) < 1e-12 || (b - a) < 1e-15 * std::max(1.0, a)) return mid;
            if (f > 0.0)
                a = mid;
            else
                b = mid;
        }
        return 0.5 * (a + b);
    }

    /// f(t) = d log alpha / dt.
    double dlog_alpha_dt(double t) const {
        check_time(t);
        switch (kind_) {
            case Kind::VpLinearBeta:
                return -0.5 * (beta_min_ + t * (beta_max_ - beta_min_));
            case Kind::VpCosine: {
                const double a = cosine_angle(t);
                return -std::tan(a) * kPiHalf / (1.0 + kCosineS);
            }
            case Kind::VpDiscreteInterp: {
                const std::size_t n = segment_index(t);
                const double dt = t_end_ / static_cast<double>(node_log_alpha_.size());
                return (node_log_alpha_[n + 1] - node_log_alpha_[n]) / dt;
            }
        }
        return 0.0;  // unreachable
    }

    double dlog_sigma_dt(double t) const {
        const Point p = alpha_sigma_lambda(t);
        return -(p.alpha * p.alpha) / (p.sigma * p.sigma) * dlog_alpha_dt(t);
    }

    /// g^2(t) = d sigma^2/dt - 2 (d log alpha/dt) sigma^2.
    double g_squared(double t) const {
        const Point p = alpha_sigma_lambda(t);
        const double f = dlog_alpha_dt(t);
        const double dsigma2_dt = -2.0 * p.alpha * p.alpha * f;
        return dsigma2_dt - 2.0 * f * p.sigma * p.sigma;
    }

private:
    static constexpr double kPiHalf = 1.57079632679489661923;
    static constexpr double kCosineS = 0.008;

    void init_range(double t_min, double t_max) {
        if (!(t_min > 0.0) || !(t_max > t_min))
            throw std::invalid_argument("NoiseSchedule: need 0 < t_min < t_max");
        t_min_ = t_min;
        t_max_ = t_max;
    }

    void check_time(double t) const {
        if (t < t_min_ - 1e-12 || t > t_max_ + 1e-12)
            throw std::domain_error("NoiseSchedule: t outside [t_min, t_max]");
    }

    double cosine_angle(double t) const { return kPiHalf * (t + kCosineS) / (1.0 + kCosineS); }

    // Lower node index of the segment containing t; nodes live at (j+1)*dt for
    // j = 0..N-1, so the answer is floor(t/dt) - 1 clamped to [0, N-2].
    std::size_t segment_index(double t) const {
        const std::size_t n_nodes = node_log_alpha_.size();
        const double dt = t_end_ / static_cast<double>(n_nodes);
        double pos = std::floor(t / dt) - 1.0;
        pos = std::max(0.0, std::min(pos, static_cast<double>(n_nodes - 2)));
        return static_cast<std::size_t>(pos);
    }

    double log_alpha_unchecked(double t) const {
        switch (kind_) {
            case Kind::VpLinearBeta:
                return -0.25 * t * t * (beta_max_ - beta_min_) - 0.5 * t * beta_min_;
            case Kind::VpCosine:
                return std::log(std::cos(cosine_angle(t))) - std::log(std::cos(cosine_angle(0.0)));
            case Kind::VpDiscreteInterp: {
                const std::size_t n_nodes = node_log_alpha_.size();
                const double dt = t_end_ / static_cast<double>(n_nodes);
                const std::size_t n = segment_index(t);
                const double t_lo = static_cast<double>(n + 1) * dt;
                const double u = (t - t_lo) / dt;
                return node_log_alpha_[n] + u * (node_log_alpha_[n + 1] - node_log_alpha_[n]);
            }
        }
        return 0.0;  // unreachable
    }

    double lambda_at_unchecked(double t) const {
        const double la = log_alpha_unchecked(t);
        return la - 0.5 * std::log(-std::expm1(2.0 * la));
    }

    Kind kind_ = Kind::VpLinearBeta;
    double t_min_ = 1e-3;
    double t_max_ = 1.0;
    double beta_min_ = 0.1;
    double beta_max_ = 20.0;
    double t_end_ = 1.0;                     // discrete only
    std::vector<double> node_log_alpha_;     // discrete only, node n holds log alpha at t_{n+1}
};

/// Decreasing time discretization t_0 = t_max > ... > t_M = t_min, optionally
/// with one intermediate point per interval for singlestep solvers.
struct TimeGrid {
    enum class Kind { UniformT, UniformLambda, PowerKappa };
    enum class Intermediate { TimeMidpoint, LambdaMidpoint };

    std::vector<double> times;
    std::vector<double> intermediates;  // empty, or size steps() with t_{i-1} > s_i > t_i
    Kind kind = Kind::UniformT;

    std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }
};

/// t_i = ((M-i)/M * t_0^{1/kappa} + (i/M) * t_M^{1/kappa})^kappa; kappa = 1 is the
/// uniform-t grid. UniformLambda spaces lambda evenly and maps back through
/// inverse_lambda. Endpoints are pinned to t_max / t_min exactly.
inline TimeGrid make_time_grid(const NoiseSchedule& sched, std::size_t steps,
                               TimeGrid::Kind kind = TimeGrid::Kind::UniformT, double kappa = 1.0,
                               bool with_intermediates = false,
                               TimeGrid::Intermediate rule = TimeGrid::Intermediate::TimeMidpoint) {
    if (steps == 0) throw std::invalid_argument("make_time_grid: steps must be >= 1");
    if (kind == TimeGrid::Kind::PowerKappa && !(kappa >= 1.0))
        throw std::invalid_argument("make_time_grid: kappa must be >= 1");

    TimeGrid grid;
    grid.kind = kind;
    grid.times.resize(steps + 1);
    const double t0 = sched.t_max();
    const double tM = sched.t_min();
    const double m = static_cast<double>(steps);

    if (kind == TimeGrid::Kind::UniformLambda) {
        const double l0 = sched.lambda(t0);
        const double lM = sched.lambda(tM);
        for (std::size_t i = 1; i < steps; ++i) {
            const double li = l0 + (lM - l0) * static_cast<double>(i) / m;
            grid.times[i] = sched.inverse_lambda(li);
        }
    } else {
        const double k = (kind == TimeGrid::Kind::UniformT) ? 1.0 : kappa;
        const double a = std::pow(t0, 1.0 / k);
        const double b = std::pow(tM, 1.0 / k);
        for (std::size_t i = 1; i < steps; ++i) {
            const double w = static_cast<double>(i) / m;
            grid.times[i] = std::pow((1.0 - w) * a + w * b, k);
        }
    }
    grid.times.front() = t0;
    grid.times.back() = tM;

    for (std::size_t i = 0; i < steps; ++i) {
        if (!(grid.times[i] > grid.times[i + 1]))
            throw std::invalid_argument("make_time_grid: times not strictly decreasing");
    }

    if (with_intermediates) {
        grid.intermediates.resize(steps);
        for (std::size_t i = 0; i < steps; ++i) {
            const double t_hi = grid.times[i], t_lo = grid.times[i + 1];
            if (rule == TimeGrid::Intermediate::TimeMidpoint) {
                grid.intermediates[i] = 0.5 * (t_hi + t_lo);
            } else {
                grid.intermediates[i] = sched.inverse_lambda(0.5 * (sched.lambda(t_hi) + sched.lambda(t_lo)));
            }
            if (!(t_hi > grid.intermediates[i] && grid.intermediates[i] > t_lo))
                throw std::invalid_argument("make_time_grid: intermediate point left its interval");
        }
    }
    return grid;
}

}  // namespace dpmsolve
