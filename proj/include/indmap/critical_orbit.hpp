#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "indmap/decay_fit.hpp"
#include "indmap/errors.hpp"
#include "indmap/map_kernel.hpp"

namespace indmap {

// Sequences attached to one critical point c:
//   logD[n-1]  = log|(f^n)'(f(c))|
//   dist[n-1]  = |f^n(c) - C|
//   gamma[n-1], b[n-1] = [gamma_n^{l-1} D_n]^{-1/l}
//   d[n-1]     = min_{1<=i<n} (gamma_i/D_i)^{1/l} |f^i(c) - C|, defined from n=2
struct CriticalOrbitTable {
    double c = 0.0;
    long N = 0;
    double ell = 2.0;
    std::vector<double> logD;
    std::vector<double> dist_to_C;
    std::vector<double> gamma;
    std::vector<double> b;
    std::vector<double> d; // entry 0 (n=1) is NaN
    std::vector<double> partial_sum_star;
    std::vector<double> partial_sum_b;
    std::vector<double> partial_sum_gamma;
    bool truncated = false; // critical orbit degenerated (superattracting-like)
    long truncated_at = -1;
};

struct DnResult {
    std::vector<double> logD;
    std::vector<double> dist_to_C;
    bool truncated = false;
    long truncated_at = -1;
};

// The critical orbit is iterated in double-double: maps with deep critical
// recurrence (the Fibonacci combinatorics) have |f^n(c) - C| far below the
// plain-double orbit noise floor.
inline DnResult compute_Dn(const MapSpec& m, double c, long N) {
    if (N < 1) throw error("compute_Dn: N must be >= 1");
    DnResult r;
    r.logD.reserve(static_cast<std::size_t>(N));
    r.dist_to_C.reserve(static_cast<std::size_t>(N));
    dd y = step_dd(m, dd(c)); // f(c)
    double acc = 0.0;
    for (long n = 1; n <= N; ++n) {
        const double dv = std::abs(eval_deriv_unchecked(m, to_double(y)));
        if (dv < 1e-300) {
            r.truncated = true;
            r.truncated_at = n - 1;
            break;
        }
        acc += std::log(dv);
        r.logD.push_back(acc);
        r.dist_to_C.push_back(m.dist_to_critical(y));
        y = step_dd(m, y);
    }
    return r;
}

enum class GammaStrategy { equalizing, user_series };

// equalizing: gamma_n = min(0.49, D_n^{-1/(2l-1)}), the choice that makes the
// summands of (*) and (**) coincide where the cap is inactive.
inline std::vector<double> choose_gamma(std::span<const double> logD, double ell,
                                        GammaStrategy strategy,
                                        std::span<const double> user = {}) {
    std::vector<double> g;
    g.reserve(logD.size());
    if (strategy == GammaStrategy::equalizing) {
        for (double ld : logD) g.push_back(std::min(0.49, std::exp(-ld / (2.0 * ell - 1.0))));
        return g;
    }
    if (user.size() < logD.size()) throw invalid_series("user gamma series shorter than D table");
    for (std::size_t i = 0; i < logD.size(); ++i) {
        const double v = user[i];
        if (!(v > 0.0) || v >= 0.5)
            throw invalid_series("gamma term outside (0, 1/2) at n=" + std::to_string(i + 1));
        g.push_back(v);
    }
    // numeric divergence screen over the window: the last decade must both
    // contribute little and have visibly smaller terms than the first decade
    if (g.size() >= 100) {
        double total = 0.0, tail = 0.0;
        for (double v : g) total += v;
        for (std::size_t i = g.size() / 10 * 9; i < g.size(); ++i) tail += g[i];
        double head_max = 0.0, tail_max = 0.0;
        for (std::size_t i = 0; i < g.size() / 10; ++i) head_max = std::max(head_max, g[i]);
        for (std::size_t i = g.size() / 10 * 9; i < g.size(); ++i)
            tail_max = std::max(tail_max, g[i]);
        if (tail >= 0.095 * total || tail_max >= 0.9 * head_max)
            throw invalid_series("gamma series diverges numerically over the window");
    }
    return g;
}

// gamma_n = coeff * D_n^{-power}; the Fibonacci experiments use (0.01, 1/2)
inline std::vector<double> gamma_from_power(std::span<const double> logD, double coeff,
                                            double power) {
    std::vector<double> g;
    g.reserve(logD.size());
    for (double ld : logD) g.push_back(coeff * std::exp(-power * ld));
    return g;
}

inline std::vector<double> compute_bn(std::span<const double> logD, std::span<const double> gamma,
                                      double ell) {
    if (gamma.size() < logD.size()) throw error("compute_bn: inconsistent lengths");
    std::vector<double> b;
    b.reserve(logD.size());
    for (std::size_t i = 0; i < logD.size(); ++i) {
        // an underflowed gamma means D is astronomically large; b underflows too
        if (!(gamma[i] > 0.0)) {
            b.push_back(0.0);
            continue;
        }
        const double v = std::exp(-((ell - 1.0) * std::log(gamma[i]) + logD[i]) / ell);
        b.push_back(std::isfinite(v) ? v : 0.0);
    }
    return b;
}

// d_n as a running minimum over the same orbit pass that produced D_n.
inline std::vector<double> compute_dn(const MapSpec& m, double c, std::span<const double> logD,
                                      std::span<const double> gamma, double ell, long N) {
    const long n_avail = std::min<long>(N, static_cast<long>(logD.size()));
    std::vector<double> d(static_cast<std::size_t>(n_avail),
                          std::numeric_limits<double>::quiet_NaN());
    dd y = step_dd(m, dd(c));
    double running = std::numeric_limits<double>::infinity();
    for (long i = 1; i < n_avail; ++i) {
        // term for index i uses D_i, gamma_i and |f^i(c) - C|
        const double term = std::exp((std::log(gamma[static_cast<std::size_t>(i - 1)]) -
                                      logD[static_cast<std::size_t>(i - 1)]) /
                                     ell) *
                            m.dist_to_critical(y);
        running = std::min(running, term);
        d[static_cast<std::size_t>(i)] = running; // this is d_{i+1}
        y = step_dd(m, y);
    }
    return d;
}

inline CriticalOrbitTable build_table(const MapSpec& m, double c, long N,
                                      GammaStrategy strategy = GammaStrategy::equalizing,
                                      std::span<const double> user_gamma = {}) {
    CriticalOrbitTable t;
    t.c = c;
    t.N = N;
    t.ell = m.critical_order;
    auto dn = compute_Dn(m, c, N);
    t.logD = std::move(dn.logD);
    t.dist_to_C = std::move(dn.dist_to_C);
    t.truncated = dn.truncated;
    t.truncated_at = dn.truncated_at;
    t.gamma = choose_gamma(t.logD, t.ell, strategy, user_gamma);
    t.b = compute_bn(t.logD, t.gamma, t.ell);
    t.d = compute_dn(m, c, t.logD, t.gamma, t.ell, static_cast<long>(t.logD.size()));
    t.partial_sum_star.resize(t.logD.size());
    t.partial_sum_b.resize(t.logD.size());
    t.partial_sum_gamma.resize(t.logD.size());
    double s1 = 0, s2 = 0, s3 = 0;
    for (std::size_t i = 0; i < t.logD.size(); ++i) {
        s1 += std::exp(-t.logD[i] / (2.0 * t.ell - 1.0));
        s2 += t.b[i];
        s3 += t.gamma[i];
        t.partial_sum_star[i] = s1;
        t.partial_sum_b[i] = s2;
        t.partial_sum_gamma[i] = s3;
    }
    return t;
}

enum class Trichotomy { converged, diverging, inconclusive };

inline const char* trichotomy_name(Trichotomy t) {
    switch (t) {
        case Trichotomy::converged: return "converged";
        case Trichotomy::diverging: return "diverging";
        case Trichotomy::inconclusive: return "inconclusive";
    }
    return "?";
}

struct SummabilityReport {
    Trichotomy star = Trichotomy::inconclusive;
    Trichotomy starstar = Trichotomy::inconclusive;
    double star_tail_frac = 0.0;
    double b_tail_frac = 0.0;
    double gamma_tail_frac = 0.0;
    DecayClass star_class;
    DecayClass b_class;
    bool verdicts_agree = false;
};

namespace detail {

inline double last_decade_fraction(std::span<const double> partial) {
    if (partial.empty()) return 1.0;
    const double total = partial.back();
    if (!(total > 0.0)) return 1.0;
    const double before = partial[partial.size() / 10 * 9];
    return (total - before) / total;
}

inline bool class_is_summable(const DecayClass& c) {
    if (c.super_polynomial) return true;
    switch (c.kind) {
        case DecayKind::exponential:
        case DecayKind::stretched_exponential: return true;
        case DecayKind::polynomial: return c.alpha > 1.0;
        default: return false;
    }
}

inline Trichotomy summand_verdict(const DecayClass& cls, double tail_frac) {
    if (tail_frac < 1e-6 && class_is_summable(cls)) return Trichotomy::converged;
    const bool poly_diverging = cls.kind == DecayKind::polynomial && cls.alpha <= 1.0 &&
                                cls.fit_quality >= 0.9 && !cls.super_polynomial;
    // a near-flat summand with a visibly growing partial sum cannot converge
    const bool flat_diverging = cls.degenerate && tail_frac >= 0.01;
    if (poly_diverging || flat_diverging || tail_frac >= 0.05) return Trichotomy::diverging;
    return Trichotomy::inconclusive;
}

} // namespace detail

// Evidence-based trichotomy for conditions (*) and (**); never a proof.
inline SummabilityReport check_summability(const CriticalOrbitTable& t) {
    if (static_cast<long>(t.logD.size()) < 100)
        throw window_too_short("check_summability needs N >= 100");
    SummabilityReport r;
    std::vector<double> star_summand;
    star_summand.reserve(t.logD.size());
    for (double ld : t.logD) star_summand.push_back(std::exp(-ld / (2.0 * t.ell - 1.0)));

    r.star_tail_frac = detail::last_decade_fraction(t.partial_sum_star);
    r.b_tail_frac = detail::last_decade_fraction(t.partial_sum_b);
    r.gamma_tail_frac = detail::last_decade_fraction(t.partial_sum_gamma);
    r.star_class = classify_growth(star_summand, SeqKind::b_sequence);
    r.b_class = classify_growth(t.b, SeqKind::b_sequence);

    r.star = detail::summand_verdict(r.star_class, r.star_tail_frac);
    const Trichotomy b_verdict = detail::summand_verdict(r.b_class, r.b_tail_frac);
    // (**) also needs sum(gamma) finite; combine conservatively
    Trichotomy g_verdict = Trichotomy::inconclusive;
    if (r.gamma_tail_frac < 1e-6) g_verdict = Trichotomy::converged;
    else if (r.gamma_tail_frac >= 0.05) g_verdict = Trichotomy::diverging;
    if (b_verdict == Trichotomy::diverging || g_verdict == Trichotomy::diverging)
        r.starstar = Trichotomy::diverging;
    else if (b_verdict == Trichotomy::converged && g_verdict == Trichotomy::converged)
        r.starstar = Trichotomy::converged;
    else
        r.starstar = Trichotomy::inconclusive;
    r.verdicts_agree = r.star == r.starstar;
    return r;
}

// Strictly decreasing record distances |f^n(c) - c| with their times, in
// double-double (deep records sit far below plain-double orbit noise).
inline std::vector<std::pair<long, double>> closest_returns(const MapSpec& m, double c, long N) {
    std::vector<std::pair<long, double>> rec;
    dd w(c);
    const dd cref(c);
    double best = std::numeric_limits<double>::infinity();
    for (long n = 1; n <= N; ++n) {
        w = step_dd(m, w);
        const double dist = std::abs(to_double(dd_abs(w - cref)));
        if (dist < best) {
            best = dist;
            rec.emplace_back(n, dist);
        }
    }
    return rec;
}

namespace detail {

inline std::vector<long> fibonacci_times(int k) {
    std::vector<long> s = {1, 2};
    while (static_cast<int>(s.size()) < k) s.push_back(s[s.size() - 1] + s[s.size() - 2]);
    s.resize(static_cast<std::size_t>(k));
    return s;
}

} // namespace detail

struct FibonacciSearchResult {
    double parameter = 0.0;
    double parameter_lo = 0.0; // double-double tail of the parameter
    std::vector<std::pair<long, double>> returns;
    int matched = 0;

    MapSpec build(MapFamily family) const {
        return make_map(family, {parameter}, {parameter_lo});
    }
};

namespace detail {

// length of the Fibonacci prefix of the closest-return times
inline int fib_prefix(const MapSpec& m, const std::vector<long>& target, long horizon) {
    const auto rec = closest_returns(m, m.critical_points[0], horizon);
    int matched = 0;
    for (std::size_t i = 0; i < target.size() && i < rec.size(); ++i) {
        if (rec[i].first != target[i]) break;
        ++matched;
    }
    return matched;
}

// signed f^n(c) - c at parameter a0 + e
inline double crit_return_gap(MapFamily family, double a0, double e, long n) {
    const MapSpec m = make_map(family, {a0}, {e});
    const double c = m.critical_points[0];
    dd w(c);
    for (long k = 0; k < n; ++k) w = step_dd(m, w);
    return to_double(w - dd(c));
}

} // namespace detail

// Locates the parameter whose first k closest-return times are the Fibonacci
// numbers. A coarse scan isolates a window with a handful of correct records;
// the nested deeper windows are then reached through their superstable
// centres, the roots of f^{S_{r+1}}(c) = c, each solved by sign bisection on
// a double-double parameter tail (the windows shrink below one double ulp).
inline FibonacciSearchResult find_fibonacci_parameter(MapFamily family, double a_lo, double a_hi,
                                                      int k = 12) {
    if (family != MapFamily::logistic && family != MapFamily::quadratic)
        throw bracket_error("fibonacci search needs a one-parameter quadratic family");
    if (k < 5 || k > 17) throw bracket_error("fibonacci search supports 5 <= k <= 17 records");
    const auto target = detail::fibonacci_times(k);

    // phase 1: hull scan over double parameters until a few records match
    double lo = a_lo, hi = a_hi;
    int matched_now = 0;
    for (int round = 0; round < 24 && matched_now < 6; ++round) {
        const int G = 96;
        const long horizon = target[std::min<std::size_t>(6, target.size() - 1)] + 2;
        int best = -1;
        double blo = lo, bhi = hi;
        for (int i = 0; i <= G; ++i) {
            const double a = lo + (hi - lo) * i / G;
            const int matched = detail::fib_prefix(make_map(family, {a}), target, horizon);
            if (matched > best) {
                best = matched;
                blo = bhi = a;
            } else if (matched == best) {
                bhi = a;
            }
        }
        if (round == 0 && best < 3)
            throw bracket_error("bracket does not straddle the Fibonacci combinatorics");
        const double pad = (hi - lo) / G;
        lo = std::max(lo, blo - pad);
        hi = std::min(hi, bhi + pad);
        matched_now = best;
    }
    if (matched_now < 6)
        throw bracket_error("coarse scan found no window with 6 Fibonacci records");

    // phase 2: superstable cascade on the double-double tail e. Distinct
    // parameter windows can share a record-time prefix, so each stage may
    // offer several candidate centres; the cascade backtracks across them.
    const double a0 = 0.5 * (lo + hi);
    double e_lo = lo - a0, e_hi = hi - a0;
    double root = 0.5 * (e_lo + e_hi), droot = 0.0;

    std::function<bool(double, double, int)> descend = [&](double w_lo, double w_hi,
                                                           int r) -> bool {
        if (r >= k) {
            e_lo = w_lo;
            e_hi = w_hi;
            return true;
        }
        const long S = target[static_cast<std::size_t>(r)]; // next record time
        const long horizon = S + 2;
        auto matched_at = [&](double e) {
            return detail::fib_prefix(make_map(family, {a0}, {e}), target, horizon);
        };
        std::vector<double> tried;
        for (int G : {64, 512, 4096}) {
            std::vector<std::pair<double, double>> brackets;
            double prev_e = w_lo;
            double prev_g = detail::crit_return_gap(family, a0, prev_e, S);
            for (int i = 1; i <= G; ++i) {
                const double e = w_lo + (w_hi - w_lo) * i / G;
                const double g = detail::crit_return_gap(family, a0, e, S);
                if ((g < 0.0) != (prev_g < 0.0)) brackets.emplace_back(prev_e, e);
                prev_e = e;
                prev_g = g;
            }
            for (auto [br_lo, br_hi] : brackets) {
                double glo = detail::crit_return_gap(family, a0, br_lo, S);
                for (int it = 0; it < 200 && br_hi - br_lo > 1e-32 * std::abs(a0); ++it) {
                    const double mid = 0.5 * (br_lo + br_hi);
                    const double g = detail::crit_return_gap(family, a0, mid, S);
                    if ((g < 0.0) == (glo < 0.0)) {
                        br_lo = mid;
                        glo = g;
                    } else {
                        br_hi = mid;
                    }
                }
                const double cand = 0.5 * (br_lo + br_hi);
                bool seen = false;
                for (double t : tried)
                    if (std::abs(t - cand) <= 1e-6 * (w_hi - w_lo)) seen = true;
                if (seen) continue;
                tried.push_back(cand);
                if (matched_at(cand) < r + 1) continue;
                // connected component of {prefix >= r+1} around the root
                auto band_edge = [&](double limit) {
                    const double dir = limit > cand ? 1.0 : -1.0;
                    const double span = std::abs(limit - cand);
                    double step = span * 0x1.0p-48;
                    double inside = cand;
                    while (step <= span && matched_at(cand + dir * step) >= r + 1) {
                        inside = cand + dir * step;
                        step *= 2.0;
                    }
                    double outside = (step > span) ? limit : cand + dir * step;
                    if (matched_at(outside) >= r + 1) return outside;
                    for (int it = 0; it < 70; ++it) {
                        const double mid = 0.5 * (inside + outside);
                        if (matched_at(mid) >= r + 1) inside = mid;
                        else outside = mid;
                    }
                    return inside;
                };
                const double b1 = band_edge(w_lo);
                const double b2 = band_edge(w_hi);
                // deepest successful stage leaves its centre in root/droot
                root = cand;
                droot = std::abs(detail::crit_return_gap(family, a0, br_hi, S) -
                                 detail::crit_return_gap(family, a0, br_lo, S)) /
                        std::max(br_hi - br_lo, 1e-300);
                if (descend(std::min(b1, b2), std::max(b1, b2), r + 1)) return true;
            }
        }
        return false;
    };
    if (!descend(e_lo, e_hi, matched_now))
        throw bracket_error("no superstable cascade with the Fibonacci prefix in the bracket");

    // final parameter: inside the k-record window, off the superstable centre
    // so the k-th record distance continues the e^{-beta' r^2} schedule
    const long horizon = target.back() + 2;
    auto pick = [&](double e) -> int {
        return detail::fib_prefix(make_map(family, {a0}, {e}), target, horizon);
    };
    double e_final = root;
    {
        const MapSpec probe = make_map(family, {a0}, {0.5 * (root + e_hi)});
        const auto rec = closest_returns(probe, probe.critical_points[0], horizon);
        double want_d = 0.0;
        if (rec.size() >= static_cast<std::size_t>(k - 1) && k >= 3) {
            const double d1 = rec[static_cast<std::size_t>(k - 2)].second;
            const double d2 = rec[static_cast<std::size_t>(k - 3)].second;
            const double ratio = d1 / d2;
            want_d = d1 * ratio * ratio; // one extra shrink of the record ratio
        }
        if (want_d > 0.0 && droot > 0.0) {
            const double off = want_d / droot;
            for (double cand : {root + off, root - off, 0.5 * (root + e_hi),
                                0.5 * (root + e_lo)}) {
                if (pick(cand) >= k) {
                    e_final = cand;
                    break;
                }
            }
        } else if (pick(0.5 * (root + e_hi)) >= k) {
            e_final = 0.5 * (root + e_hi);
        }
    }

    FibonacciSearchResult out;
    const dd param = detail::two_sum(a0, e_final);
    out.parameter = param.hi;
    out.parameter_lo = param.lo;
    const MapSpec m = out.build(family);
    out.returns = closest_returns(m, m.critical_points[0], horizon);
    out.matched = 0;
    for (std::size_t i = 0; i < target.size() && i < out.returns.size(); ++i) {
        if (out.returns[i].first != target[i]) break;
        ++out.matched;
    }
    if (out.matched < k)
        throw bracket_error("refinement did not isolate the Fibonacci combinatorics");
    return out;
}

struct FibonacciScaling {
    double beta_prime = 0.0;
    double r2 = 0.0;
    int n_records = 0;
    bool ok = false;
};

// Fit of log|f^{S_r}(c) - c| against r^2 over r in [4, R].
inline FibonacciScaling fibonacci_scaling_check(const MapSpec& m, int R) {
    FibonacciScaling out;
    const auto target = detail::fibonacci_times(R);
    const auto rec = closest_returns(m, m.critical_points[0], target.back() + 2);
    out.n_records = static_cast<int>(rec.size());
    if (out.n_records < 10) return out; // inconclusive
    std::vector<double> xs, ys;
    for (int r = 4; r <= R && r <= out.n_records; ++r) {
        xs.push_back(static_cast<double>(r) * static_cast<double>(r));
        ys.push_back(std::log(rec[static_cast<std::size_t>(r - 1)].second));
    }
    const LineFit f = fit_line(xs, ys);
    out.beta_prime = -f.slope;
    out.r2 = f.r2;
    out.ok = out.beta_prime > 0.0;
    return out;
}

} // namespace indmap
