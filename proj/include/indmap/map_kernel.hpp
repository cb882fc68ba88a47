#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "indmap/dd_real.hpp"
#include "indmap/errors.hpp"

namespace indmap {

enum class MapFamily {
    logistic,  // a*x*(1-x) on [0,1]
    quadratic, // a - x^2 on [-r, r], r the orientation-reversing fixed point
    chebyshev, // 2x^2 - 1 on [-1,1]
    cubic,     // x^3 - 3a*x + b, two critical points
};

inline const char* family_name(MapFamily f) {
    switch (f) {
        case MapFamily::logistic: return "logistic";
        case MapFamily::quadratic: return "quadratic";
        case MapFamily::chebyshev: return "chebyshev";
        case MapFamily::cubic: return "cubic";
    }
    return "?";
}

// Affine change of coordinates natural = offset + scale * work. Analysis runs
// in work coordinates, whose domain has diameter <= 1 so that all distances
// between orbit points are <= 1. Derivatives are unchanged by the conjugacy.
struct AffineChange {
    double offset = 0.0;
    double scale = 1.0;
    double to_natural(double w) const { return offset + scale * w; }
    double to_work(double x) const { return (x - offset) / scale; }
};

struct MapSpec {
    MapFamily family = MapFamily::logistic;
    std::vector<double> params;
    // double-double tails of the parameters; nonzero only when a parameter
    // needs sub-ulp resolution (deep Fibonacci combinatorics does)
    std::vector<double> params_lo;
    double x_lo = 0.0; // work domain
    double x_hi = 1.0;
    std::vector<double> critical_points; // work coordinates, sorted
    double critical_order = 2.0;
    AffineChange to_natural;

    dd param_dd(std::size_t i) const {
        return dd(params[i], i < params_lo.size() ? params_lo[i] : 0.0);
    }

    // Count of evaluations that landed outside the domain by <= 1e-12 and
    // were clamped back. Shared so copies report the same tally.
    std::shared_ptr<std::atomic<long long>> clamp_events =
        std::make_shared<std::atomic<long long>>(0);

    double domain_diameter() const { return x_hi - x_lo; }
    double dist_to_critical(double x) const {
        double d = std::numeric_limits<double>::infinity();
        for (double c : critical_points) d = std::min(d, std::abs(x - c));
        return d;
    }
    double nearest_critical(double x) const {
        double best = critical_points.front();
        for (double c : critical_points)
            if (std::abs(x - c) < std::abs(x - best)) best = c;
        return best;
    }
    double dist_to_critical(dd x) const {
        double d = std::numeric_limits<double>::infinity();
        for (double c : critical_points) d = std::min(d, std::abs(to_double(dd_abs(x - dd(c)))));
        return d;
    }
};

namespace detail {

inline double eval_natural(const MapSpec& m, double x) {
    switch (m.family) {
        case MapFamily::logistic: return m.params[0] * x * (1.0 - x);
        case MapFamily::quadratic: return m.params[0] - x * x;
        case MapFamily::chebyshev: return 2.0 * x * x - 1.0;
        case MapFamily::cubic: return x * x * x - 3.0 * m.params[0] * x + m.params[1];
    }
    return 0.0;
}

inline double deriv_natural(const MapSpec& m, double x) {
    switch (m.family) {
        case MapFamily::logistic: return m.params[0] * (1.0 - 2.0 * x);
        case MapFamily::quadratic: return -2.0 * x;
        case MapFamily::chebyshev: return 4.0 * x;
        case MapFamily::cubic: return 3.0 * x * x - 3.0 * m.params[0];
    }
    return 0.0;
}

inline double second_deriv_natural(const MapSpec& m, double x) {
    switch (m.family) {
        case MapFamily::logistic: return -2.0 * m.params[0];
        case MapFamily::quadratic: return -2.0;
        case MapFamily::chebyshev: return 4.0;
        case MapFamily::cubic: return 6.0 * x;
    }
    return 0.0;
}

inline dd eval_natural(const MapSpec& m, dd x) {
    switch (m.family) {
        case MapFamily::logistic: return m.param_dd(0) * (x * (1.0 - x));
        case MapFamily::quadratic: return m.param_dd(0) - x * x;
        case MapFamily::chebyshev: return 2.0 * (x * x) - 1.0;
        case MapFamily::cubic:
            return x * x * x - 3.0 * (m.param_dd(0) * x) + m.param_dd(1);
    }
    return dd(0.0);
}

} // namespace detail

// One map step in work coordinates, clamped to the domain. The hot path for
// orbit evaluation; domain admission of the argument is the caller's duty.
inline double step(const MapSpec& m, double w) {
    const double y = m.to_natural.to_work(detail::eval_natural(m, m.to_natural.to_natural(w)));
    if (y < m.x_lo) {
        if (m.x_lo - y > 1e-12) throw domain_error("map image escaped the domain");
        m.clamp_events->fetch_add(1, std::memory_order_relaxed);
        return m.x_lo;
    }
    if (y > m.x_hi) {
        if (y - m.x_hi > 1e-12) throw domain_error("map image escaped the domain");
        m.clamp_events->fetch_add(1, std::memory_order_relaxed);
        return m.x_hi;
    }
    return y;
}

inline dd step_dd(const MapSpec& m, dd w) {
    const dd x = m.to_natural.offset + m.to_natural.scale * w;
    const dd y = (detail::eval_natural(m, x) - m.to_natural.offset) / m.to_natural.scale;
    if (y < dd(m.x_lo)) return dd(m.x_lo);
    if (y > dd(m.x_hi)) return dd(m.x_hi);
    return y;
}

inline void check_in_domain(const MapSpec& m, double x) {
    if (x < m.x_lo - 1e-12 || x > m.x_hi + 1e-12)
        throw domain_error("point outside domain: " + std::to_string(x));
}

inline double eval_map(const MapSpec& m, double x) {
    check_in_domain(m, x);
    return step(m, std::clamp(x, m.x_lo, m.x_hi));
}

// Signed derivative in work coordinates (invariant under the affine change).
inline double eval_deriv(const MapSpec& m, double x) {
    check_in_domain(m, x);
    return detail::deriv_natural(m, m.to_natural.to_natural(x));
}

inline double eval_deriv_unchecked(const MapSpec& m, double x) {
    return detail::deriv_natural(m, m.to_natural.to_natural(x));
}

struct Orbit {
    double start = 0.0;
    std::vector<double> points;            // length n+1
    std::vector<double> log_deriv_partials; // entry k = sum_{j<k} log|f'(x_j)|
    bool precision_warning = false;        // some |f'(x_k)| < 1e-300
};

inline Orbit iterate(const MapSpec& m, double x, long n) {
    check_in_domain(m, x);
    if (n < 0) throw error("iterate: n must be >= 0");
    Orbit o;
    o.start = x;
    o.points.reserve(static_cast<std::size_t>(n) + 1);
    o.log_deriv_partials.reserve(static_cast<std::size_t>(n) + 1);
    double w = std::clamp(x, m.x_lo, m.x_hi);
    double acc = 0.0;
    o.points.push_back(w);
    o.log_deriv_partials.push_back(0.0);
    for (long k = 0; k < n; ++k) {
        const double dv = std::abs(eval_deriv_unchecked(m, w));
        if (dv < 1e-300) {
            o.precision_warning = true;
            acc = -std::numeric_limits<double>::infinity();
        } else {
            acc += std::log(dv);
        }
        w = step(m, w);
        o.points.push_back(w);
        o.log_deriv_partials.push_back(acc);
    }
    return o;
}

// log|(f^n)'(x)|; throws if the orbit meets the critical set numerically.
inline double orbit_derivative_log(const MapSpec& m, double x, long n) {
    check_in_domain(m, x);
    double w = std::clamp(x, m.x_lo, m.x_hi);
    double acc = 0.0;
    for (long k = 0; k < n; ++k) {
        const double dv = std::abs(eval_deriv_unchecked(m, w));
        if (dv < 1e-300) throw critical_hit("orbit hit the critical set at step " + std::to_string(k));
        acc += std::log(dv);
        w = step(m, w);
    }
    return acc;
}

namespace detail {

inline void validate_domain(const MapSpec& m) {
    if (m.domain_diameter() <= 0.0 || m.domain_diameter() > 1.0 + 1e-12)
        throw domain_error("work domain diameter must be in (0,1]");
    const int grid = 2048;
    for (int i = 0; i <= grid; ++i) {
        const double w = m.x_lo + (m.x_hi - m.x_lo) * i / grid;
        const double y = m.to_natural.to_work(eval_natural(m, m.to_natural.to_natural(w)));
        if (y < m.x_lo - 1e-12 || y > m.x_hi + 1e-12)
            throw domain_error("family parameters do not preserve the domain");
    }
    for (double c : m.critical_points) {
        if (c <= m.x_lo || c >= m.x_hi) throw domain_error("critical point not interior");
        if (std::abs(eval_deriv_unchecked(m, c)) >= 1e-12)
            throw domain_error("listed critical point has nonzero derivative");
        const double y = m.to_natural.to_work(eval_natural(m, m.to_natural.to_natural(c)));
        if (y < m.x_lo - 1e-12 || y > m.x_hi + 1e-12)
            throw domain_error("critical value escapes the domain");
    }
    // f' must not change sign between consecutive critical points
    for (std::size_t i = 0; i + 1 < m.critical_points.size(); ++i) {
        const double a = m.critical_points[i], b = m.critical_points[i + 1];
        double sign = 0.0;
        for (int j = 1; j < 64; ++j) {
            const double w = a + (b - a) * j / 64.0;
            const double d = eval_deriv_unchecked(m, w);
            if (std::abs(d) < 1e-12) continue;
            if (sign == 0.0) sign = d > 0 ? 1.0 : -1.0;
            else if ((d > 0 ? 1.0 : -1.0) != sign)
                throw domain_error("derivative changes sign between listed critical points");
        }
    }
}

// One Newton polish step on f' around an analytically supplied critical point.
inline double polish_critical(const MapSpec& m, double c_work) {
    const double x = m.to_natural.to_natural(c_work);
    const double d1 = deriv_natural(m, x);
    const double d2 = second_deriv_natural(m, x);
    if (d2 == 0.0) return c_work;
    return m.to_natural.to_work(x - d1 / d2);
}

} // namespace detail

inline MapSpec make_map(MapFamily family, const std::vector<double>& params,
                        const std::vector<double>& params_lo = {}) {
    MapSpec m;
    m.family = family;
    m.params = params;
    m.params_lo = params_lo;
    double nat_lo = 0.0, nat_hi = 1.0;
    std::vector<double> nat_crit;
    switch (family) {
        case MapFamily::logistic: {
            if (params.size() != 1 || params[0] <= 0.0 || params[0] > 4.0)
                throw domain_error("logistic family needs a single parameter in (0,4]");
            nat_lo = 0.0;
            nat_hi = 1.0;
            nat_crit = {0.5};
            break;
        }
        case MapFamily::quadratic: {
            if (params.size() != 1 || params[0] <= 0.0 || params[0] > 2.0)
                throw domain_error("quadratic family needs a single parameter in (0,2]");
            const double r = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * params[0]));
            nat_lo = -r;
            nat_hi = r;
            nat_crit = {0.0};
            break;
        }
        case MapFamily::chebyshev: {
            if (!params.empty()) throw domain_error("chebyshev family takes no parameters");
            nat_lo = -1.0;
            nat_hi = 1.0;
            nat_crit = {0.0};
            break;
        }
        case MapFamily::cubic: {
            if (params.size() != 2 || params[0] <= 0.0)
                throw domain_error("cubic family needs parameters (a, b) with a > 0");
            // domain [-s, s] with s the largest fixed point of x^3 - 3ax + b
            double s = std::max(2.0 * std::sqrt(params[0]), 1.0 + std::abs(params[1]));
            for (int it = 0; it < 200; ++it) {
                const double g = s * s * s - 3.0 * params[0] * s + params[1] - s;
                const double dg = 3.0 * s * s - 3.0 * params[0] - 1.0;
                const double ns = s - g / dg;
                if (std::abs(ns - s) < 1e-15 * std::max(1.0, std::abs(s))) {
                    s = ns;
                    break;
                }
                s = ns;
            }
            nat_lo = -s;
            nat_hi = s;
            nat_crit = {-std::sqrt(params[0]), std::sqrt(params[0])};
            break;
        }
    }
    const double diam = nat_hi - nat_lo;
    if (diam <= 1.0) {
        m.to_natural = {0.0, 1.0};
        m.x_lo = nat_lo;
        m.x_hi = nat_hi;
    } else {
        m.to_natural = {nat_lo, diam};
        m.x_lo = 0.0;
        m.x_hi = 1.0;
    }
    m.critical_points.clear();
    for (double c : nat_crit)
        m.critical_points.push_back(detail::polish_critical(m, m.to_natural.to_work(c)));
    std::sort(m.critical_points.begin(), m.critical_points.end());
    m.critical_order = 2.0;
    detail::validate_domain(m);
    return m;
}

// Hull of the forward-orbit extent of the critical set; estimates supp(mu).
inline std::pair<double, double> estimate_support(const MapSpec& m, long n = 20000) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double c : m.critical_points) {
        // the core of the dynamics is spanned by the orbit of the critical values
        double w = step(m, c);
        for (long k = 0; k < n; ++k) {
            lo = std::min(lo, w);
            hi = std::max(hi, w);
            w = step(m, w);
        }
    }
    return {lo, hi};
}

// Exact image of an interval under one map step: hull of endpoint images and
// the critical values of critical points inside.
inline std::pair<double, double> interval_image(const MapSpec& m, double lo, double hi) {
    double a = step(m, lo), b = step(m, hi);
    if (a > b) std::swap(a, b);
    for (double c : m.critical_points) {
        if (c > lo && c < hi) {
            const double v = step(m, c);
            a = std::min(a, v);
            b = std::max(b, v);
        }
    }
    return {a, b};
}

} // namespace indmap
