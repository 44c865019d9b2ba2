#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <utility>

#include "dpmsolve/schedule.hpp"
#include "dpmsolve/vec.hpp"

namespace dpmsolve {

enum class ModelKind { NoisePrediction, DataPrediction };

/// Callable contract for a prediction model. eval must be deterministic in
/// (x, t) and return a vector of the same dimension; wrappers below compose
/// guidance and thresholding while preserving this contract.
struct PredictionModel {
    ModelKind kind = ModelKind::NoisePrediction;
    std::size_t dim = 0;
    std::function<Vec(const Vec& x, double t)> eval;
};

/// x_theta = (x - sigma * eps) / alpha.
inline Vec eps_to_x0(const Vec& eps, const Vec& x, double alpha, double sigma) {
    require_same_dim(eps, x, "eps_to_x0");
    if (alpha == 0.0) throw std::invalid_argument("eps_to_x0: alpha must be nonzero");
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - sigma * eps[i]) / alpha;
    return out;
}

/// eps_theta = (x - alpha * x0) / sigma; inverse of eps_to_x0.
inline Vec x0_to_eps(const Vec& x0, const Vec& x, double alpha, double sigma) {
    require_same_dim(x0, x, "x0_to_eps");
    if (sigma == 0.0) throw std::invalid_argument("x0_to_eps: sigma must be nonzero");
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - alpha * x0[i]) / sigma;
    return out;
}

/// Classifier-free combination: s * eps_cond + (1 - s) * eps_uncond.
inline Vec classifier_free_combine(const Vec& eps_cond, const Vec& eps_uncond, double scale) {
    require_same_dim(eps_cond, eps_uncond, "classifier_free_combine");
    return lin(scale, eps_cond, 1.0 - scale, eps_uncond);
}

/// Classifier guidance: eps - s * sigma * grad_x log p(c | x, t).
inline Vec classifier_guide(const Vec& eps, const Vec& grad_logp, double scale, double sigma) {
    require_same_dim(eps, grad_logp, "classifier_guide");
    return lin(1.0, eps, -scale * sigma, grad_logp);
}

enum class ThresholdMode { None, StaticClip, Dynamic };

struct ThresholdSpec {
    ThresholdMode mode = ThresholdMode::None;
    double bound = 1.0;
    double percentile = 0.995;  // dynamic mode only, in (0, 1]
};

namespace detail {

// Exact-sort percentile with linear interpolation between order statistics.
inline double abs_percentile(const Vec& v, double p) {
    Vec a(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) a[i] = std::abs(v[i]);
    std::sort(a.begin(), a.end());
    const double pos = p * static_cast<double>(a.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= a.size()) return a.back();
    const double frac = pos - static_cast<double>(lo);
    return a[lo] + frac * (a[lo + 1] - a[lo]);
}

}  // namespace detail

/// Clip a data prediction into the valid range. Static mode clamps elementwise
/// to [-bound, bound]; dynamic mode clips to s* = max(bound, percentile_p(|x0|))
/// and rescales by bound/s*. Idempotent in both modes.
inline Vec threshold_x0(Vec x0, const ThresholdSpec& spec) {
    if (!(spec.bound > 0.0)) throw std::invalid_argument("threshold_x0: bound must be positive");
    switch (spec.mode) {
        case ThresholdMode::None:
            return x0;
        case ThresholdMode::StaticClip:
            for (double& v : x0) v = std::clamp(v, -spec.bound, spec.bound);
            return x0;
        case ThresholdMode::Dynamic: {
            if (!(spec.percentile > 0.0 && spec.percentile <= 1.0))
                throw std::invalid_argument("threshold_x0: percentile must lie in (0,1]");
            if (x0.empty()) return x0;
            const double s = std::max(spec.bound, detail::abs_percentile(x0, spec.percentile));
            const double rescale = spec.bound / s;
            for (double& v : x0) v = std::clamp(v, -s, s) * rescale;
            return x0;
        }
    }
    return x0;
}

/// Model output as a data prediction, converting through the identity when the
/// underlying model predicts noise.
inline Vec eval_data(const PredictionModel& model, const NoiseSchedule& sched, const Vec& x, double t) {
    Vec out = model.eval(x, t);
    if (model.kind == ModelKind::DataPrediction) return out;
    const auto p = sched.alpha_sigma_lambda(t);
    return eps_to_x0(out, x, p.alpha, p.sigma);
}

/// Model output as a noise prediction.
inline Vec eval_noise(const PredictionModel& model, const NoiseSchedule& sched, const Vec& x, double t) {
    Vec out = model.eval(x, t);
    if (model.kind == ModelKind::NoisePrediction) return out;
    const auto p = sched.alpha_sigma_lambda(t);
    return x0_to_eps(out, x, p.alpha, p.sigma);
}

enum class GuidanceMode { None, ClassifierFree, Classifier };

struct GuidanceSpec {
    GuidanceMode mode = GuidanceMode::None;
    double scale = 1.0;
    PredictionModel conditional;    // base model for Classifier mode
    PredictionModel unconditional;  // ClassifierFree only
    std::function<Vec(const Vec& x, double t)> grad_log_classifier;  // Classifier only
};

/// Wrap guidance into a noise-prediction model, so every solver downstream is
/// guidance-agnostic.
inline PredictionModel make_guided(const GuidanceSpec& spec, const NoiseSchedule& sched) {
    if (!std::isfinite(spec.scale)) throw std::invalid_argument("make_guided: scale must be finite");
    switch (spec.mode) {
        case GuidanceMode::None:
            if (!spec.conditional.eval) throw std::invalid_argument("make_guided: model callable missing");
            return spec.conditional;
        case GuidanceMode::ClassifierFree: {
            if (!spec.conditional.eval || !spec.unconditional.eval)
                throw std::invalid_argument("make_guided: classifier-free mode needs both models");
            if (spec.conditional.dim != spec.unconditional.dim)
                throw std::invalid_argument("make_guided: model dimensions differ");
            PredictionModel out;
            out.kind = ModelKind::NoisePrediction;
            out.dim = spec.conditional.dim;
            out.eval = [cond = spec.conditional, uncond = spec.unconditional, s = spec.scale,
                        sched](const Vec& x, double t) {
                return classifier_free_combine(eval_noise(cond, sched, x, t), eval_noise(uncond, sched, x, t), s);
            };
            return out;
        }
        case GuidanceMode::Classifier: {
            if (!spec.conditional.eval || !spec.grad_log_classifier)
                throw std::invalid_argument("make_guided: classifier mode needs a model and a gradient callable");
            PredictionModel out;
            out.kind = ModelKind::NoisePrediction;
            out.dim = spec.conditional.dim;
            out.eval = [base = spec.conditional, grad = spec.grad_log_classifier, s = spec.scale,
                        sched](const Vec& x, double t) {
                return classifier_guide(eval_noise(base, sched, x, t), grad(x, t), s, sched.sigma(t));
            };
            return out;
        }
    }
    throw std::invalid_argument("make_guided: unknown mode");
}

/// Thresholding wraps the data-prediction view; the result is itself a model,
/// so intermediate solver evaluations see the clipped output too.
inline PredictionModel make_thresholded(const PredictionModel& base, const ThresholdSpec& spec,
                                        const NoiseSchedule& sched) {
    if (spec.mode == ThresholdMode::None) return base;
    if (!base.eval) throw std::invalid_argument("make_thresholded: model callable missing");
    PredictionModel out;
    out.kind = ModelKind::DataPrediction;
    out.dim = base.dim;
    out.eval = [base, spec, sched](const Vec& x, double t) {
        return threshold_x0(eval_data(base, sched, x, t), spec);
    };
    return out;
}

}  // namespace dpmsolve
