#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "indmap/combinatorics.hpp"
#include "indmap/critical_orbit.hpp"
#include "indmap/dd_real.hpp"
#include "indmap/decay_fit.hpp"
#include "indmap/errors.hpp"
#include "indmap/fit_util.hpp"
#include "indmap/map_kernel.hpp"
#include "indmap/rng.hpp"

namespace indmap {

// ---------------------------------------------------------------------------
// configuration of the critical neighbourhood and binding machinery
// ---------------------------------------------------------------------------

struct BindingConfig {
    double delta = 0.0;       // radius of the Delta components
    int p_delta = 0;          // binding period at the Delta boundary
    std::vector<double> gamma; // shared gamma series, index k-1 <-> gamma_k
    int P_max = 10000;        // binding period cap
    double eps = 0.0;         // edge strip width, < delta'
    double delta_prime = 0.0; // large-scale threshold
    double delta_dprime = 0.0; // min{delta'/3, |Omega0|}; delta'/3 until Omega0 is chosen
    double kappa = 0.0;       // bounded-backward-contraction constant estimate
    double Gamma = 1.0;       // exp(tau * sum gamma_j/(1-gamma_j))
    double tau = 0.0;
    double zeta = 1.0;        // weight used in the delta-selection inequality
    double rho_hat = 0.0;     // measured strip-escape contraction, <= 1/8
    double kappa_min = 1e-3;

    double gamma_at(long k) const { // k >= 1
        if (k < 1 || gamma.empty()) return 0.49;
        const std::size_t i = static_cast<std::size_t>(k - 1);
        return i < gamma.size() ? gamma[i] : gamma.back();
    }
};

inline bool in_delta(const MapSpec& m, double x, double delta) {
    return m.dist_to_critical(x) < delta;
}

// Binding period by the shadowing rule alone; used for boundary points c+-delta
// where membership of Delta is not the question.
inline std::pair<int, bool> binding_period_shadow(const MapSpec& m, double x, double c,
                                                  const BindingConfig& cfg) {
    double xk = x, ck = c;
    for (int k = 1; k < cfg.P_max; ++k) {
        xk = step(m, xk);
        ck = step(m, ck);
        const double tube = cfg.gamma_at(k) * m.dist_to_critical(ck);
        if (std::abs(xk - ck) > tube) return {k, false};
    }
    return {cfg.P_max, true}; // cap hit
}

struct BindingPeriod {
    int p = 0;
    bool cap_hit = false;
};

// p(x) per the binding rule: 0 outside Delta, otherwise the largest p with
// |f^k(x)-f^k(c)| <= gamma_k |f^k(c)-C| for all k <= p-1 (c nearest to x).
inline BindingPeriod binding_period(const MapSpec& m, double x, const BindingConfig& cfg) {
    if (!in_delta(m, x, cfg.delta)) return {0, false};
    const double c = m.nearest_critical(x);
    auto [p, cap] = binding_period_shadow(m, x, c, cfg);
    return {p, cap};
}

// ---------------------------------------------------------------------------
// empirical constants: BBC kappa, tau, outside expansion, delta', strip rho
// ---------------------------------------------------------------------------

struct KappaEstimate {
    double kappa = 0.0;
    double argmin_x = 0.0;
    long skipped = 0; // samples that never entered Delta within the cap
    long samples = 0;
};

// Minimum of |(f^n)'(x)| at the first entry time n of x into Delta, over a
// low-discrepancy sample of the domain.
inline KappaEstimate estimate_bbc_kappa(const MapSpec& m, double delta, long sample_size = 10000,
                                        long cap = 100000, double phase = 0.0) {
    KappaEstimate est;
    est.kappa = std::numeric_limits<double>::infinity();
    GoldenSequence gs(phase);
    for (long i = 0; i < sample_size; ++i) {
        const double x = m.x_lo + gs.next() * (m.x_hi - m.x_lo);
        ++est.samples;
        double w = x, acc = 0.0;
        bool entered = in_delta(m, w, delta);
        long n = 0;
        while (!entered && n < cap) {
            const double dv = std::abs(eval_deriv_unchecked(m, w));
            if (dv < 1e-300) break;
            acc += std::log(dv);
            w = step(m, w);
            ++n;
            entered = in_delta(m, w, delta);
        }
        if (!entered) {
            ++est.skipped;
            continue;
        }
        const double v = std::exp(acc); // n == 0 gives the empty product 1
        if (v < est.kappa) {
            est.kappa = v;
            est.argmin_x = x;
        }
    }
    if (!std::isfinite(est.kappa)) est.kappa = 0.0;
    return est;
}

// tau with |f'(x)-f'(y)|/|f'(x)| <= tau |x-y|/|x-C|, sampled over admissible
// pairs (|x-y| <= max(|x-C|,|y-C|)/2).
inline double estimate_tau(const MapSpec& m, long samples = 100000) {
    GoldenSequence gx(0.0), gu(0.37);
    double tau = 0.0;
    for (long i = 0; i < samples; ++i) {
        const double x = m.x_lo + gx.next() * (m.x_hi - m.x_lo);
        const double dc = m.dist_to_critical(x);
        if (dc < 1e-12) continue;
        const double h = (gu.next() - 0.5) * dc; // |x-y| <= dc/2
        const double y = std::clamp(x + h, m.x_lo, m.x_hi);
        if (x == y) continue;
        const double fx = eval_deriv_unchecked(m, x);
        if (std::abs(fx) < 1e-12) continue;
        const double fy = eval_deriv_unchecked(m, y);
        const double r = (std::abs(fx - fy) / std::abs(fx)) * (dc / std::abs(x - y));
        tau = std::max(tau, r);
    }
    return tau;
}

inline double gamma_distortion_constant(const BindingConfig& cfg) {
    double s = 0.0;
    for (double g : cfg.gamma) s += g / (1.0 - g);
    return std::exp(cfg.tau * s);
}

// Contraction-principle constant: min over components W of Delta \ C and
// n <= horizon of |f^n(W)|, with exact one-step interval images.
inline double compute_delta_prime(const MapSpec& m, double delta, long horizon = 1000) {
    double best = std::numeric_limits<double>::infinity();
    for (double c : m.critical_points) {
        for (int side = 0; side < 2; ++side) {
            double lo = side == 0 ? std::max(m.x_lo, c - delta) : c;
            double hi = side == 0 ? c : std::min(m.x_hi, c + delta);
            for (long n = 0; n <= horizon; ++n) {
                best = std::min(best, hi - lo);
                const auto img = interval_image(m, lo, hi);
                lo = img.first;
                hi = img.second;
            }
        }
    }
    return best;
}

struct OutsideExpansion {
    double C_delta = 0.0;
    double lambda_delta = 0.0;
    long k_used = 0;
};

// Lower-envelope fit of log|(f^k)'(x)| over orbit segments outside Delta.
inline OutsideExpansion estimate_outside_expansion(const MapSpec& m, double delta,
                                                   long samples = 20000, long k_cap = 120) {
    std::vector<std::vector<double>> buckets(static_cast<std::size_t>(k_cap) + 1);
    GoldenSequence gs(0.11);
    for (long i = 0; i < samples; ++i) {
        const double x0 = m.x_lo + gs.next() * (m.x_hi - m.x_lo);
        if (in_delta(m, x0, delta)) continue;
        double w = x0, acc = 0.0;
        for (long k = 1; k <= k_cap; ++k) {
            const double dv = std::abs(eval_deriv_unchecked(m, w));
            if (dv < 1e-300) break;
            acc += std::log(dv);
            w = step(m, w);
            // segment {x, .., f^{k-1}x} lies outside Delta; record log|(f^k)'|
            buckets[static_cast<std::size_t>(k)].push_back(acc);
            if (in_delta(m, w, delta)) break;
        }
    }
    std::vector<double> ks, env;
    for (long k = 1; k <= k_cap; ++k) {
        auto& b = buckets[static_cast<std::size_t>(k)];
        if (b.size() < 100) break;
        ks.push_back(static_cast<double>(k));
        env.push_back(quantile(b, 0.01));
    }
    if (ks.size() < 5) throw non_hyperbolic_sample("too few outside-Delta segments to fit");
    const LineFit f = fit_line(ks, env);
    if (f.slope <= 0.0)
        throw non_hyperbolic_sample("outside-Delta expansion rate is not positive");
    // support line: drop the intercept until the line minorizes every
    // envelope point, so C e^{lambda k} is a genuine sampled lower bound
    double intercept = f.intercept;
    for (std::size_t i = 0; i < ks.size(); ++i)
        intercept = std::min(intercept, env[i] - f.slope * ks[i]);
    return {std::exp(intercept), f.slope, static_cast<long>(ks.size())};
}

// Worst reciprocal derivative over strip escape segments: an eps-interval
// outside Delta is followed until its first Delta intersection; only arrivals
// at large scale matter (those are the shallow-to-shallow transitions).
inline double measure_strip_rho(const MapSpec& m, double delta, double delta_prime, double eps,
                                long positions = 200, long horizon = 2000) {
    double rho = 0.0;
    std::vector<double> starts;
    for (double c : m.critical_points) { // strips hugging the Delta boundary
        starts.push_back(c - delta - eps);
        starts.push_back(c + delta);
    }
    GoldenSequence gs(0.23);
    for (long i = 0; i < positions; ++i)
        starts.push_back(m.x_lo + gs.next() * (m.x_hi - m.x_lo - eps));
    for (double s0 : starts) {
        double lo = std::max(m.x_lo, s0), hi = std::min(m.x_hi, s0 + eps);
        if (hi - lo <= 0.0) continue;
        bool inside = false;
        for (double c : m.critical_points)
            if (hi > c - delta && lo < c + delta) inside = true;
        if (inside) continue;
        double x = 0.5 * (lo + hi), acc = 0.0;
        for (long n = 1; n <= horizon; ++n) {
            const double dv = std::abs(eval_deriv_unchecked(m, x));
            if (dv < 1e-300) break;
            acc += std::log(dv);
            x = step(m, x);
            const auto img = interval_image(m, lo, hi);
            lo = img.first;
            hi = img.second;
            bool touches = false;
            for (double c : m.critical_points)
                if (hi > c - delta && lo < c + delta) touches = true;
            if (touches) {
                if (hi - lo >= delta_prime) rho = std::max(rho, std::exp(-acc));
                break;
            }
        }
    }
    return rho;
}

// ---------------------------------------------------------------------------
// level sets I_p
// ---------------------------------------------------------------------------

struct LevelBand {
    int p = 0;
    double lo = 0.0, hi = 0.0; // absolute coordinates
    double Fp = 0.0;           // min |(f^p)'| over sampled points of the band
};

struct CritLevels {
    double c = 0.0;
    // bands ordered outward-in (increasing p); left side lives in (c-delta, c),
    // right side in (c, c+delta)
    std::vector<LevelBand> left, right;
    double core_lo = 0.0, core_hi = 0.0; // unresolvable sliver around c
    long monotonicity_breaches = 0;
};

struct LevelSets {
    std::vector<CritLevels> per_critical;
    double C0 = 0.0; // fitted constant in F'_p >= C0 (gamma_p^{l-1} D_p)^{1/l}
};

namespace detail {

inline double min_abs_deriv_product(const MapSpec& m, double lo, double hi, int p) {
    double best = std::numeric_limits<double>::infinity();
    const double pts[5] = {lo, 0.75 * lo + 0.25 * hi, 0.5 * (lo + hi), 0.25 * lo + 0.75 * hi, hi};
    for (double x : pts) {
        double w = x, acc = 0.0;
        bool dead = false;
        for (int k = 0; k < p; ++k) {
            const double dv = std::abs(eval_deriv_unchecked(m, w));
            if (dv < 1e-300) {
                dead = true;
                break;
            }
            acc += std::log(dv);
            w = step(m, w);
        }
        if (!dead) best = std::min(best, std::exp(acc));
    }
    return best;
}

} // namespace detail

// Level-set boundaries by bisection on the binding period along each side of
// each critical point (binding is monotone per side).
inline LevelSets build_level_sets(const MapSpec& m, const BindingConfig& cfg,
                                  std::span<const CriticalOrbitTable> tables,
                                  double h_floor = 1e-13) {
    LevelSets out;
    for (std::size_t ci = 0; ci < m.critical_points.size(); ++ci) {
        const double c = m.critical_points[ci];
        CritLevels cl;
        cl.c = c;
        for (int side = 0; side < 2; ++side) {
            const double sgn = side == 0 ? -1.0 : 1.0;
            auto p_at = [&](double h) {
                return binding_period_shadow(m, c + sgn * h, c, cfg).first;
            };
            // h_q = sup{h : p(h) >= q}, nonincreasing in q; band for level q
            // is (h_{q+1}, h_q], possibly empty
            std::vector<LevelBand> bands;
            double h_q = cfg.delta;
            int q = p_at(cfg.delta * (1.0 - 1e-12));
            const int p_inner = p_at(h_floor);
            while (h_q > h_floor && q < cfg.P_max) {
                double h_next;
                if (p_inner < q + 1) {
                    h_next = h_floor; // never reaches level q+1 above the floor
                } else {
                    double lo = h_floor, hi = h_q;
                    for (int it = 0; it < 64; ++it) {
                        const double mid = 0.5 * (lo + hi);
                        if (p_at(mid) >= q + 1) lo = mid;
                        else hi = mid;
                    }
                    h_next = std::min(0.5 * (lo + hi), h_q);
                }
                if (h_q - h_next > 0.0) {
                    LevelBand band;
                    band.p = q;
                    band.lo = sgn < 0 ? c - h_q : c + h_next;
                    band.hi = sgn < 0 ? c - h_next : c + h_q;
                    band.Fp = detail::min_abs_deriv_product(m, band.lo, band.hi, band.p);
                    if (p_at(0.5 * (h_next + h_q)) != q) ++cl.monotonicity_breaches;
                    bands.push_back(band);
                }
                if (p_inner < q + 1) {
                    h_q = h_floor;
                    break;
                }
                h_q = h_next;
                ++q;
            }
            if (side == 0) {
                cl.left = std::move(bands);
                cl.core_lo = c - h_q;
            } else {
                cl.right = std::move(bands);
                cl.core_hi = c + h_q;
            }
        }
        out.per_critical.push_back(std::move(cl));
    }
    // fitted C0: lower envelope of Fp * b_p over all bands with p >= p_delta
    double c0 = std::numeric_limits<double>::infinity();
    for (std::size_t ci = 0; ci < out.per_critical.size() && ci < tables.size(); ++ci) {
        const auto& t = tables[ci];
        auto scan = [&](const std::vector<LevelBand>& bands) {
            for (const auto& band : bands) {
                if (band.p < cfg.p_delta) continue;
                const std::size_t i = static_cast<std::size_t>(band.p - 1);
                if (i >= t.b.size() || !(band.Fp > 0.0)) continue;
                c0 = std::min(c0, band.Fp * t.b[i]);
            }
        };
        scan(out.per_critical[ci].left);
        scan(out.per_critical[ci].right);
    }
    out.C0 = std::isfinite(c0) ? c0 : 0.0;
    return out;
}

// Max over i <= p-1 of the sampled derivative-ratio spread on [f(x), f(c)].
inline double binding_distortion(const MapSpec& m, double x, const BindingConfig& cfg) {
    const auto bp = binding_period(m, x, cfg);
    if (bp.p <= 1) return 1.0;
    const double c = m.nearest_critical(x);
    constexpr int G = 21;
    double pts[G], acc[G];
    const double a = step(m, x), b = step(m, c);
    for (int j = 0; j < G; ++j) {
        pts[j] = a + (b - a) * j / (G - 1);
        acc[j] = 0.0;
    }
    double worst = 1.0;
    for (int i = 1; i <= bp.p - 1; ++i) {
        double mx = -std::numeric_limits<double>::infinity(), mn = -mx;
        for (int j = 0; j < G; ++j) {
            const double dv = std::abs(eval_deriv_unchecked(m, pts[j]));
            if (dv < 1e-300) return worst;
            acc[j] += std::log(dv);
            pts[j] = step(m, pts[j]);
            mx = std::max(mx, acc[j]);
            mn = std::min(mn, acc[j]);
        }
        worst = std::max(worst, std::exp(mx - mn));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// fix_delta: shrink delta until the delta-selection inequality and BBC hold
// ---------------------------------------------------------------------------

inline BindingConfig fix_delta(const MapSpec& m, std::span<const CriticalOrbitTable> tables,
                               double zeta, double delta0 = 0.05, int max_halvings = 40,
                               int P_max = 10000) {
    if (tables.empty() || static_cast<long>(tables.front().logD.size()) < 1000)
        throw error("fix_delta: critical orbit tables need N >= 1000");
    BindingConfig cfg;
    cfg.P_max = P_max;
    cfg.zeta = zeta;
    // shared gamma series: elementwise max over the per-point tables
    std::size_t n = tables.front().gamma.size();
    for (const auto& t : tables) n = std::min(n, t.gamma.size());
    cfg.gamma.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& t : tables) cfg.gamma[i] = std::max(cfg.gamma[i], t.gamma[i]);

    const long N = static_cast<long>(n);
    bool found = false;
    for (int j = 0; j <= max_halvings; ++j) {
        const double delta = delta0 * std::pow(2.0, -j);
        cfg.delta = delta;
        // p_delta = min over critical points and sides of p(c +- delta)
        int p_delta = P_max;
        for (double c : m.critical_points)
            for (int side = 0; side < 2; ++side)
                p_delta = std::min(
                    p_delta,
                    binding_period_shadow(m, c + (side == 0 ? -delta : delta), c, cfg).first);
        cfg.p_delta = std::max(1, p_delta);
        bool sum_ok = true;
        for (const auto& t : tables) {
            const double v =
                delta_selection_sum(t.logD, cfg.gamma, t.ell, zeta, cfg.p_delta, N);
            if (!(v <= 1.0)) {
                sum_ok = false;
                break;
            }
        }
        if (!sum_ok) continue;
        const auto k1 = estimate_bbc_kappa(m, delta, 10000, 100000, 0.0);
        if (k1.kappa <= cfg.kappa_min) continue;
        cfg.kappa = k1.kappa;
        found = true;
        break;
    }
    if (!found)
        throw no_valid_delta("no delta satisfied the selection inequality and BBC within " +
                             std::to_string(max_halvings) + " halvings");

    cfg.tau = estimate_tau(m);
    cfg.Gamma = gamma_distortion_constant(cfg);
    cfg.delta_prime = compute_delta_prime(m, cfg.delta);
    cfg.delta_dprime = cfg.delta_prime / 3.0;
    cfg.eps = cfg.delta_prime / 100.0;
    for (int it = 0; it < 20; ++it) {
        cfg.rho_hat = measure_strip_rho(m, cfg.delta, cfg.delta_prime, cfg.eps);
        if (cfg.rho_hat <= 0.125) break;
        cfg.eps *= 0.5;
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// the large-scale partition engine (section-3 construction)
// ---------------------------------------------------------------------------

struct ItinEntry {
    long nu = 0;  // absolute return time
    int p = 0;    // binding length (0 = shallow)
    bool deep = false;
};

struct PartPiece {
    dd src_lo, src_hi;
    double img_lo = 0.0, img_hi = 0.0;
    long p_hat = -1; // stopping time; -1 when still open
    std::vector<ItinEntry> itin;
    std::vector<long> phat_chain; // used by the full-return construction
    int chain = 0;

    double width() const { return to_double(src_hi - src_lo); }
    int s_count() const { return static_cast<int>(itin.size()); }
    int deep_count() const {
        int k = 0;
        for (const auto& e : itin) k += e.deep ? 1 : 0;
        return k;
    }
    int shallow_shallow_count() const {
        int k = 0;
        for (std::size_t i = 0; i + 1 < itin.size(); ++i)
            if (itin[i].p == 0 && itin[i + 1].p == 0) ++k;
        return k;
    }
    long sum_p() const {
        long s = 0;
        for (const auto& e : itin) s += e.p;
        return s;
    }
};

struct LargeScalePartition {
    double J_lo = 0.0, J_hi = 0.0;
    std::vector<PartPiece> resolved;
    std::vector<PartPiece> open; // still open at n_max
    double unresolved_mass = 0.0; // open + floors + cores, in source length
    long n_max = 0;
    long guard_trips = 0;
    long resolution_floor_hits = 0;
    long binding_cap_hits = 0;

    double resolved_mass() const {
        double s = 0.0;
        for (const auto& p : resolved) s += p.width();
        return s;
    }
};

namespace detail {

struct Work {
    dd src_lo, src_hi;
    double img_lo, img_hi, img_mid;
    long t;
    bool increasing = true; // orientation of f^t on the piece
    std::vector<ItinEntry> itin;
    std::vector<long> phat_chain;
    int chain = 0;
};

// parts of an interval split by the level sets: p = 0 outside Delta,
// p >= 1 a band level, p = -1 the unresolvable core around a critical point
struct LevelPart {
    double lo, hi;
    int p;
    double Fp;
};

inline void split_by_levels(const MapSpec& m, const LevelSets& ls, double lo, double hi,
                            double delta, std::vector<LevelPart>& out) {
    out.clear();
    struct Cut {
        double lo, hi;
        int p;
        double Fp;
    };
    std::vector<Cut> cuts;
    for (const auto& cl : ls.per_critical) {
        const double dlo = cl.c - delta, dhi = cl.c + delta;
        if (hi <= dlo || lo >= dhi) continue;
        for (const auto& b : cl.left)
            if (hi > b.lo && lo < b.hi)
                cuts.push_back({std::max(lo, b.lo), std::min(hi, b.hi), b.p, b.Fp});
        for (const auto& b : cl.right)
            if (hi > b.lo && lo < b.hi)
                cuts.push_back({std::max(lo, b.lo), std::min(hi, b.hi), b.p, b.Fp});
        if (hi > cl.core_lo && lo < cl.core_hi)
            cuts.push_back({std::max(lo, cl.core_lo), std::min(hi, cl.core_hi), -1, 0.0});
    }
    std::sort(cuts.begin(), cuts.end(), [](const Cut& a, const Cut& b) { return a.lo < b.lo; });
    double pos = lo;
    for (const auto& c : cuts) {
        if (c.lo > pos) out.push_back({pos, c.lo, 0, 0.0}); // outside-Delta gap
        if (c.hi > c.lo) out.push_back({c.lo, c.hi, c.p, c.Fp});
        pos = std::max(pos, c.hi);
    }
    if (hi > pos) out.push_back({pos, hi, 0, 0.0});
}

inline double iterate_double(const MapSpec& m, double x, long n) {
    double w = x;
    for (long k = 0; k < n; ++k) w = step(m, w);
    return w;
}

inline dd iterate_dd(const MapSpec& m, dd x, long n) {
    dd w = x;
    for (long k = 0; k < n; ++k) w = step_dd(m, w);
    return w;
}

inline double signed_deriv_product(const MapSpec& m, double x, long n) {
    double w = x, prod = 1.0;
    for (long k = 0; k < n; ++k) {
        prod *= eval_deriv_unchecked(m, w);
        w = step(m, w);
    }
    return prod;
}

// Preimage of `target` under the monotone branch f^n | [lo, hi]. Double
// bisection first, then double-double Newton polish.
inline dd pull_back(const MapSpec& m, dd lo, dd hi, long n, dd target, int newton_iters = 4) {
    double a = to_double(lo), b = to_double(hi);
    const double t0 = to_double(target);
    const double fa = iterate_double(m, a, n);
    const double fb = iterate_double(m, b, n);
    const bool increasing = fa <= fb;
    for (int it = 0; it < 64 && b - a > 1e-15 * std::max(1.0, std::abs(a)); ++it) {
        const double mid = 0.5 * (a + b);
        const double fm = iterate_double(m, mid, n);
        if ((fm < t0) == increasing) a = mid;
        else b = mid;
    }
    dd x(0.5 * (a + b));
    if (x < lo) x = lo;
    if (x > hi) x = hi;
    for (int it = 0; it < newton_iters; ++it) {
        const dd fx = iterate_dd(m, x, n);
        const double g = signed_deriv_product(m, to_double(x), n);
        if (!std::isfinite(g) || g == 0.0) break;
        const double corr = to_double(fx - target) / g;
        x = x - dd(corr);
        if (x < lo) x = lo;
        if (x > hi) x = hi;
        if (std::abs(corr) < 1e-32) break;
    }
    return x;
}

inline dd pull_back(const MapSpec& m, dd lo, dd hi, long n, double target) {
    return pull_back(m, lo, hi, n, dd(target));
}

} // namespace detail

// Context shared by the partition constructions.
struct InducingContext {
    BindingConfig cfg;
    LevelSets levels;
    OutsideExpansion expansion;
};

// A terminal (large-scale) piece handed to the on_terminal hook before it is
// recorded; the full-return construction consumes these.
struct TerminalPiece {
    dd src_lo, src_hi;
    double img_lo = 0.0, img_hi = 0.0; // the middle part, length >= delta'
    long p_hat = 0;
    bool increasing = true;
    std::vector<ItinEntry> itin;
    std::vector<long> phat_chain;
    int chain = 0;
};

class PartitionEngine {
public:
    PartitionEngine(const MapSpec& m, const InducingContext& ctx, long n_max)
        : m_(m), ctx_(ctx), n_max_(n_max) {}

    void seed(dd lo, dd hi, long t0, int chain = 0, std::vector<long> phat_chain = {}) {
        detail::Work w;
        w.src_lo = lo;
        w.src_hi = hi;
        w.t = t0;
        w.chain = chain;
        w.phat_chain = std::move(phat_chain);
        const double a = to_double(lo), b = to_double(hi);
        const double fa = detail::iterate_double(m_, a, t0);
        const double fb = detail::iterate_double(m_, b, t0);
        w.increasing = fa <= fb;
        w.img_lo = std::min(fa, fb);
        w.img_hi = std::max(fa, fb);
        w.img_mid = detail::iterate_double(m_, 0.5 * (a + b), t0);
        queue_.push_back(std::move(w));
    }

    // on_terminal returns true when it consumed the piece (the engine then
    // does not record it as resolved).
    void run(LargeScalePartition& out,
             const std::function<bool(TerminalPiece&&)>& on_terminal = {}) {
        while (!queue_.empty()) {
            detail::Work w = std::move(queue_.front());
            queue_.pop_front();
            process(w, out, on_terminal);
        }
        std::sort(out.resolved.begin(), out.resolved.end(),
                  [](const PartPiece& a, const PartPiece& b) { return a.src_lo < b.src_lo; });
    }

    void push_external(dd lo, dd hi, long t0, int chain, std::vector<long> phat_chain) {
        seed(lo, hi, t0, chain, std::move(phat_chain));
    }

private:
    bool touches_delta(double lo, double hi) const {
        for (double c : m_.critical_points)
            if (hi > c - ctx_.cfg.delta && lo < c + ctx_.cfg.delta) return true;
        return false;
    }

    void retire(detail::Work&& w, LargeScalePartition& out, bool floor_hit) {
        out.unresolved_mass += to_double(w.src_hi - w.src_lo);
        if (floor_hit) {
            ++out.resolution_floor_hits;
        } else {
            PartPiece p;
            p.src_lo = w.src_lo;
            p.src_hi = w.src_hi;
            p.img_lo = w.img_lo;
            p.img_hi = w.img_hi;
            p.itin = std::move(w.itin);
            p.phat_chain = std::move(w.phat_chain);
            p.chain = w.chain;
            out.open.push_back(std::move(p));
        }
    }

    void step_image(detail::Work& w) {
        if (eval_deriv_unchecked(m_, w.img_mid) < 0.0) w.increasing = !w.increasing;
        const double lo = step(m_, w.img_lo);
        const double hi = step(m_, w.img_hi);
        const double mid = step(m_, w.img_mid);
        w.img_lo = std::min(lo, hi);
        w.img_hi = std::max(lo, hi);
        w.img_mid = mid;
        ++w.t;
    }

    // advance the image to its next Delta intersection; false = piece retired
    bool advance(detail::Work& w, LargeScalePartition& out) {
        while (!touches_delta(w.img_lo, w.img_hi)) {
            if (w.t >= n_max_) {
                retire(std::move(w), out, false);
                return false;
            }
            step_image(w);
            if (w.img_mid < w.img_lo - 1e-12 || w.img_mid > w.img_hi + 1e-12) {
                if (!subdivide(w, out)) retire(std::move(w), out, true);
                return false;
            }
        }
        return true;
    }

    bool subdivide(detail::Work& w, LargeScalePartition& out) {
        ++out.guard_trips;
        if (to_double(w.src_hi - w.src_lo) < 1e-12) return false;
        const dd mid = indmap::mid(w.src_lo, w.src_hi);
        for (int half = 0; half < 2; ++half) {
            detail::Work part;
            part.src_lo = half == 0 ? w.src_lo : mid;
            part.src_hi = half == 0 ? mid : w.src_hi;
            part.t = w.t;
            part.itin = w.itin;
            part.phat_chain = w.phat_chain;
            part.chain = w.chain;
            const double a = to_double(part.src_lo), b = to_double(part.src_hi);
            const double fa = detail::iterate_double(m_, a, part.t);
            const double fb = detail::iterate_double(m_, b, part.t);
            part.increasing = fa <= fb;
            part.img_lo = std::min(fa, fb);
            part.img_hi = std::max(fa, fb);
            part.img_mid = detail::iterate_double(m_, 0.5 * (a + b), part.t);
            queue_.push_back(std::move(part));
        }
        return true;
    }

    // apply a binding period of length p step by step (guarded)
    bool bind_forward(detail::Work& w, int p, LargeScalePartition& out) {
        for (int k = 0; k < p; ++k) {
            step_image(w);
            if (w.img_mid < w.img_lo - 1e-12 || w.img_mid > w.img_hi + 1e-12) {
                if (!subdivide(w, out)) retire(std::move(w), out, true);
                return false;
            }
        }
        return true;
    }

    // child piece for the image subinterval [ylo, yhi] of w at time w.t
    detail::Work carve(const detail::Work& w, double ylo, double yhi) {
        detail::Work c;
        c.t = w.t;
        c.increasing = w.increasing;
        c.itin = w.itin;
        c.phat_chain = w.phat_chain;
        c.chain = w.chain;
        const double tlo = w.increasing ? ylo : yhi; // image value of src_lo
        const double thi = w.increasing ? yhi : ylo;
        c.src_lo = (tlo == (w.increasing ? w.img_lo : w.img_hi))
                       ? w.src_lo
                       : detail::pull_back(m_, w.src_lo, w.src_hi, w.t, tlo);
        c.src_hi = (thi == (w.increasing ? w.img_hi : w.img_lo))
                       ? w.src_hi
                       : detail::pull_back(m_, w.src_lo, w.src_hi, w.t, thi);
        if (c.src_hi < c.src_lo) std::swap(c.src_lo, c.src_hi);
        c.img_lo = ylo;
        c.img_hi = yhi;
        c.img_mid = detail::iterate_double(m_, to_double(indmap::mid(c.src_lo, c.src_hi)), c.t);
        return c;
    }

    void process(detail::Work& w, LargeScalePartition& out,
                 const std::function<bool(TerminalPiece&&)>& on_terminal) {
        if (to_double(w.src_hi - w.src_lo) < 1e-14) { // resolution floor
            out.unresolved_mass += std::max(0.0, to_double(w.src_hi - w.src_lo));
            ++out.resolution_floor_hits;
            return;
        }
        if (!advance(w, out)) return;
        // return at time nu = w.t with image [img_lo, img_hi]
        const long nu = w.t;
        const double len = w.img_hi - w.img_lo;
        const auto& cfg = ctx_.cfg;
        if (len >= cfg.delta_prime + 2.0 * cfg.eps) {
            // large scale: cut eps strips, stop the middle (length >= delta')
            const double y1 = w.img_lo + cfg.eps;
            const double y2 = w.img_hi - cfg.eps;
            detail::Work middle = carve(w, y1, y2);
            TerminalPiece tp;
            tp.src_lo = middle.src_lo;
            tp.src_hi = middle.src_hi;
            tp.img_lo = y1;
            tp.img_hi = y2;
            tp.p_hat = nu;
            tp.increasing = middle.increasing;
            tp.itin = middle.itin;
            tp.phat_chain = middle.phat_chain;
            tp.chain = middle.chain;
            bool consumed = false;
            if (on_terminal) consumed = on_terminal(std::move(tp));
            if (!consumed) {
                PartPiece p;
                p.src_lo = middle.src_lo;
                p.src_hi = middle.src_hi;
                p.img_lo = y1;
                p.img_hi = y2;
                p.p_hat = nu;
                p.itin = std::move(middle.itin);
                p.phat_chain = std::move(middle.phat_chain);
                p.chain = middle.chain;
                out.resolved.push_back(std::move(p));
            }
            // the eps strips carry deep/shallow returns
            emit_strip_parts(w, w.img_lo, y1, nu, /*merge_I0=*/false, out);
            emit_strip_parts(w, y2, w.img_hi, nu, /*merge_I0=*/false, out);
            return;
        }
        // small image: split by level sets; I_0 parts merge into the adjacent
        // deep part
        emit_strip_parts(w, w.img_lo, w.img_hi, nu, /*merge_I0=*/true, out);
    }

    void emit_strip_parts(const detail::Work& w, double lo, double hi, long nu, bool merge_I0,
                          LargeScalePartition& out) {
        if (hi - lo <= 0.0) return;
        std::vector<detail::LevelPart> parts;
        detail::split_by_levels(m_, ctx_.levels, lo, hi, ctx_.cfg.delta, parts);
        if (merge_I0) {
            // join each outside part with its deep neighbour (deeper one wins
            // when both neighbours are deep)
            std::vector<detail::LevelPart> merged;
            for (std::size_t i = 0; i < parts.size(); ++i) {
                auto part = parts[i];
                if (part.p == 0) {
                    const detail::LevelPart* left =
                        !merged.empty() && merged.back().p > 0 ? &merged.back() : nullptr;
                    const detail::LevelPart* right =
                        (i + 1 < parts.size() && parts[i + 1].p > 0) ? &parts[i + 1] : nullptr;
                    if (left && (!right || left->p >= right->p)) {
                        merged.back().hi = part.hi;
                        continue;
                    }
                    if (right) {
                        auto joined = *right;
                        joined.lo = part.lo;
                        merged.push_back(joined);
                        ++i; // consumed the neighbour
                        continue;
                    }
                    // no deep neighbour: the visit degenerates, keep the part
                    // as a shallow return so the construction can proceed
                }
                merged.push_back(part);
            }
            parts = std::move(merged);
        }
        for (const auto& part : parts) {
            if (part.hi - part.lo <= 0.0) continue;
            if (part.p < 0) { // unresolvable core around a critical point
                detail::Work core = carve(w, part.lo, part.hi);
                out.unresolved_mass += std::max(0.0, to_double(core.src_hi - core.src_lo));
                ++out.binding_cap_hits;
                continue;
            }
            detail::Work child = carve(w, part.lo, part.hi);
            ItinEntry e;
            e.nu = nu;
            e.p = part.p;
            e.deep = part.p > 0;
            child.itin.push_back(e);
            if (part.p > 0) {
                if (!bind_forward(child, part.p, out)) continue;
            }
            if (child.t >= n_max_) {
                retire(std::move(child), out, false);
                continue;
            }
            queue_.push_back(std::move(child));
        }
    }

    const MapSpec& m_;
    const InducingContext& ctx_;
    long n_max_;
    std::deque<detail::Work> queue_;
};

// Large-scale partition of an arbitrary interval J with |J| >= delta''.
inline LargeScalePartition induce_to_large_scale(const MapSpec& m, double J_lo, double J_hi,
                                                 const InducingContext& ctx, long n_max) {
    if (J_hi - J_lo < ctx.cfg.delta_dprime - 1e-12)
        throw error("induce_to_large_scale: |J| below delta''");
    LargeScalePartition out;
    out.J_lo = J_lo;
    out.J_hi = J_hi;
    out.n_max = n_max;
    PartitionEngine eng(m, ctx, n_max);
    eng.seed(dd(J_lo), dd(J_hi), 0);
    eng.run(out);
    return out;
}

// ---------------------------------------------------------------------------
// tails of the stopping time and the size lemma check
// ---------------------------------------------------------------------------

struct TailStats {
    std::vector<double> m_n; // m_n[k] = sup_J |{p_hat > k}| / |J|
    DecayClass decay;
    long n_max = 0;
    double censored_mass = 0.0; // sup over J of still-open mass fraction
};

// Decay fit of a tail sequence: censored data keeps the fit on n <= n_max/2,
// and the stretch where the tail has died (zeros, or the censoring floor)
// is excluded rather than fit as a spurious plateau.
inline DecayClass fit_tail_decay(std::span<const double> m_n, long n_max, double censored) {
    const long cap = std::min<long>(n_max / 2, static_cast<long>(m_n.size()) - 1);
    const double floor = censored > 0.0 ? 2.0 * censored : 0.0;
    long live = 0;
    for (long k = 1; k <= cap; ++k)
        if (m_n[static_cast<std::size_t>(k)] > floor) live = k;
    std::vector<double> seq;
    for (long k = 1; k <= live; ++k) seq.push_back(m_n[static_cast<std::size_t>(k)]);
    if (static_cast<long>(seq.size()) >= 50) return classify_growth(seq, SeqKind::tail_counts);
    return DecayClass{};
}

inline TailStats tail_of_phat(std::span<const LargeScalePartition> parts, long n_max) {
    if (parts.empty()) throw error("tail_of_phat: need at least one partition");
    TailStats ts;
    ts.n_max = n_max;
    ts.m_n.assign(static_cast<std::size_t>(n_max) + 1, 0.0);
    for (const auto& part : parts) {
        const double J = part.J_hi - part.J_lo;
        std::vector<double> resolved_by(static_cast<std::size_t>(n_max) + 2, 0.0);
        for (const auto& p : part.resolved)
            if (p.p_hat >= 0 && p.p_hat <= n_max)
                resolved_by[static_cast<std::size_t>(p.p_hat)] += p.width();
        double cum = 0.0;
        for (long k = 0; k <= n_max; ++k) {
            cum += resolved_by[static_cast<std::size_t>(k)];
            const double tail = std::max(0.0, (J - cum) / J);
            ts.m_n[static_cast<std::size_t>(k)] = std::max(ts.m_n[static_cast<std::size_t>(k)], tail);
        }
        double open_mass = part.unresolved_mass;
        ts.censored_mass = std::max(ts.censored_mass, open_mass / J);
    }
    ts.decay = fit_tail_decay(ts.m_n, n_max, ts.censored_mass);
    return ts;
}

struct SizeLemmaReport {
    long checked = 0;
    long passed = 0;
    double min_log_margin = std::numeric_limits<double>::infinity();
    double pass_rate() const { return checked > 0 ? static_cast<double>(passed) / checked : 1.0; }
};

// |omega| / |f^{p_hat}(omega)| against
//   min{ C^{-#S_d} e^{-lambda (m - sum p_i)}, (K0/kappa)^{#S_d} rho^{#S_ss} }
//   * prod_{deep} 1/F'_{p_i},   K0 = 16, rho = 1/8.
inline SizeLemmaReport check_size_lemma(const LargeScalePartition& part,
                                        const InducingContext& ctx,
                                        std::span<const CriticalOrbitTable> tables) {
    constexpr double K0 = 16.0, rho = 0.125;
    SizeLemmaReport rep;
    for (const auto& piece : part.resolved) {
        const double lhs = piece.width() / (piece.img_hi - piece.img_lo);
        if (!(lhs > 0.0)) continue;
        const int sd = piece.deep_count();
        const int sss = piece.shallow_shallow_count();
        const double mlog1 = -sd * std::log(ctx.expansion.C_delta) -
                             ctx.expansion.lambda_delta *
                                 (static_cast<double>(piece.p_hat) - static_cast<double>(piece.sum_p()));
        const double mlog2 =
            sd * std::log(K0 / ctx.cfg.kappa) + sss * std::log(rho);
        double log_rhs = std::min(mlog1, mlog2);
        bool usable = true;
        for (const auto& e : piece.itin) {
            if (!e.deep) continue;
            double Fp = 0.0;
            for (const auto& cl : ctx.levels.per_critical) {
                for (const auto& b : cl.left)
                    if (b.p == e.p) Fp = Fp > 0 ? std::min(Fp, b.Fp) : b.Fp;
                for (const auto& b : cl.right)
                    if (b.p == e.p) Fp = Fp > 0 ? std::min(Fp, b.Fp) : b.Fp;
            }
            if (!(Fp > 0.0)) { // level beyond the stored bands: use the bound's model
                const auto& t = tables.front();
                const std::size_t i = static_cast<std::size_t>(e.p - 1);
                if (i < t.b.size() && ctx.levels.C0 > 0.0) Fp = ctx.levels.C0 / t.b[i];
            }
            if (!(Fp > 0.0)) {
                usable = false;
                break;
            }
            log_rhs -= std::log(Fp);
        }
        if (!usable) continue;
        ++rep.checked;
        const double margin = log_rhs - std::log(lhs);
        rep.min_log_margin = std::min(rep.min_log_margin, margin);
        if (margin >= 0.0) ++rep.passed;
    }
    return rep;
}

// Lemma-10 style distortion of f^{p_hat} over each resolved piece.
struct PartitionDistortion {
    double K_run = 1.0; // max over pieces
    double K_q99 = 1.0;
};

inline PartitionDistortion measure_partition_distortion(const MapSpec& m,
                                                        const LargeScalePartition& part) {
    PartitionDistortion pd;
    std::vector<double> ks;
    for (const auto& piece : part.resolved) {
        const double a = to_double(piece.src_lo), b = to_double(piece.src_hi);
        double mx = -std::numeric_limits<double>::infinity(), mn = -mx;
        for (int j = 0; j < 5; ++j) {
            const double x = a + (b - a) * (0.02 + 0.24 * j);
            double w = x, acc = 0.0;
            bool dead = false;
            for (long k = 0; k < piece.p_hat; ++k) {
                const double dv = std::abs(eval_deriv_unchecked(m, w));
                if (dv < 1e-300) {
                    dead = true;
                    break;
                }
                acc += std::log(dv);
                w = step(m, w);
            }
            if (dead) continue;
            mx = std::max(mx, acc);
            mn = std::min(mn, acc);
        }
        if (std::isfinite(mx) && std::isfinite(mn)) ks.push_back(std::exp(mx - mn));
    }
    if (!ks.empty()) {
        pd.K_run = *std::max_element(ks.begin(), ks.end());
        pd.K_q99 = quantile(ks, 0.99);
    }
    return pd;
}

} // namespace indmap
