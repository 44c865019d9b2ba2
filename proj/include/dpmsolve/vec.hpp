#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpmsolve {

using Vec = std::vector<double>;

inline void require_same_dim(const Vec& a, const Vec& b, const char* what) {
    if (a.size() != b.size()) {
        throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                    std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
}

inline Vec scaled(const Vec& v, double a) {
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = a * v[i];
    return out;
}

// a*x + b*y
inline Vec lin(double a, const Vec& x, double b, const Vec& y) {
    require_same_dim(x, y, "lin");
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
    return out;
}

// x += a*y
inline void add_scaled(Vec& x, double a, const Vec& y) {
    require_same_dim(x, y, "add_scaled");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += a * y[i];
}

inline Vec sub(const Vec& x, const Vec& y) { return lin(1.0, x, -1.0, y); }

inline double l2_norm(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double linf_norm(const Vec& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline double l2_dist(const Vec& a, const Vec& b) {
    require_same_dim(a, b, "l2_dist");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double linf_dist(const Vec& a, const Vec& b) {
    require_same_dim(a, b, "linf_dist");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace dpmsolve
