#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "indmap/inducing.hpp"
#include "indmap/map_kernel.hpp"
#include "indmap/rng.hpp"

namespace indmap {

struct renormalizable_error : error {
    using error::error;
};

struct RenormalizationVerdict {
    bool renormalizable = false;
    int period = 0;
};

// Looks for a cycle of intervals permuted by f by iterating the interval hull
// of a small neighbourhood of each critical point and testing whether the
// phase classes mod k stay pairwise disjoint.
inline RenormalizationVerdict renormalization_test(const MapSpec& m, int max_period = 64) {
    const long burn = 256, horizon = 512;
    for (double c : m.critical_points) {
        std::vector<std::pair<double, double>> hulls;
        double lo = c - 1e-8, hi = c + 1e-8;
        lo = std::max(lo, m.x_lo);
        hi = std::min(hi, m.x_hi);
        for (long n = 0; n < horizon; ++n) {
            if (n >= burn) hulls.emplace_back(lo, hi);
            const auto img = interval_image(m, lo, hi);
            lo = img.first;
            hi = img.second;
        }
        for (int k = 2; k <= max_period; ++k) {
            std::vector<std::pair<double, double>> cls(static_cast<std::size_t>(k),
                                                       {std::numeric_limits<double>::infinity(),
                                                        -std::numeric_limits<double>::infinity()});
            for (std::size_t i = 0; i < hulls.size(); ++i) {
                auto& cl = cls[i % static_cast<std::size_t>(k)];
                cl.first = std::min(cl.first, hulls[i].first);
                cl.second = std::max(cl.second, hulls[i].second);
            }
            bool disjoint = true;
            for (int a = 0; a < k && disjoint; ++a)
                for (int b = a + 1; b < k && disjoint; ++b)
                    if (cls[static_cast<std::size_t>(a)].second >
                            cls[static_cast<std::size_t>(b)].first &&
                        cls[static_cast<std::size_t>(b)].second >
                            cls[static_cast<std::size_t>(a)].first)
                        disjoint = false;
            if (disjoint) return {true, k};
        }
    }
    return {false, 0};
}

// ---------------------------------------------------------------------------
// Omega_0 and the preimage net
// ---------------------------------------------------------------------------

struct PreimagePoint {
    double x = 0.0;
    int depth = 0;     // f^depth(x) = c
    int parent = -1;   // index of f(x) in the pool
    double h_allow = 0.0; // largest Omega0 half-width this point supports
};

struct Omega0Result {
    double c = 0.0;
    double lo = 0.0, hi = 0.0; // Omega0
    int t0 = 0;
    double supp_lo = 0.0, supp_hi = 0.0;
    double delta_dprime = 0.0;
    double net_len = 0.0; // length of the verified net intervals (0.8 delta')
    std::vector<PreimagePoint> points; // usable points, sorted by x
    std::vector<int> order;            // indices sorted by x (into points)

    double width() const { return hi - lo; }
};

namespace detail {

struct BranchSet {
    std::vector<double> cuts; // x_lo, criticals..., x_hi
};

inline BranchSet make_branches(const MapSpec& m) {
    BranchSet b;
    b.cuts.push_back(m.x_lo);
    for (double c : m.critical_points) b.cuts.push_back(c);
    b.cuts.push_back(m.x_hi);
    return b;
}

// solve f(x) = y on each monotone branch
inline void branch_preimages(const MapSpec& m, const BranchSet& br, double y,
                             std::vector<double>& out) {
    out.clear();
    for (std::size_t j = 0; j + 1 < br.cuts.size(); ++j) {
        double a = br.cuts[j], b = br.cuts[j + 1];
        double fa = step(m, a), fb = step(m, b);
        bool increasing = fa <= fb;
        if (y < std::min(fa, fb) || y > std::max(fa, fb)) continue;
        for (int it = 0; it < 90; ++it) {
            const double mid = 0.5 * (a + b);
            const double fm = step(m, mid);
            if ((fm < y) == increasing) a = mid;
            else b = mid;
        }
        out.push_back(0.5 * (a + b));
    }
}

inline double branch_margin(const MapSpec& m, const BranchSet& br, double x) {
    double margin = std::numeric_limits<double>::infinity();
    for (double c : br.cuts) margin = std::min(margin, std::abs(x - c));
    (void)m;
    return margin;
}

} // namespace detail

// Chooses t0 and Omega0 so that every large-scale interval contains, in its
// middle fifth, a preimage of c of depth <= t0 whose pullback neighbourhood
// maps onto Omega0 with |omega_x| <= delta'/15.
inline Omega0Result choose_omega0(const MapSpec& m, double c, const InducingContext& ctx,
                                  int max_depth = 30, std::size_t node_cap = 1000000) {
    const auto renorm = renormalization_test(m);
    if (renorm.renormalizable)
        throw renormalizable_error("map is renormalizable with period " +
                                   std::to_string(renorm.period));
    Omega0Result out;
    out.c = c;
    const auto supp = estimate_support(m);
    out.supp_lo = supp.first;
    out.supp_hi = supp.second;
    const double dp = ctx.cfg.delta_prime;
    out.net_len = 0.8 * dp;

    const auto branches = detail::make_branches(m);
    std::vector<PreimagePoint> pool;
    pool.push_back({c, 0, -1, 0.0});
    std::size_t level_begin = 0, level_end = 1;

    // coverage test: every net interval of length net_len with spacing
    // delta''/2 has a pool point in its middle fifth
    auto covered = [&](const std::vector<int>& usable) {
        if (usable.empty()) return false;
        std::vector<double> xs;
        xs.reserve(usable.size());
        for (int i : usable) xs.push_back(pool[static_cast<std::size_t>(i)].x);
        std::sort(xs.begin(), xs.end());
        const double L = out.net_len;
        const double spacing = 0.05 * L; // finer than the middle-fifth slack
        for (double x0 = out.supp_lo; x0 + L <= out.supp_hi + spacing; x0 += spacing) {
            const double lo = x0 + 0.4 * L, hi = x0 + 0.6 * L;
            auto it = std::lower_bound(xs.begin(), xs.end(), lo);
            if (it == xs.end() || *it > hi) return false;
        }
        return true;
    };

    int t0 = -1;
    std::vector<int> all;
    for (int depth = 0; depth <= max_depth; ++depth) {
        if (depth > 0) {
            std::vector<double> pre;
            for (std::size_t pi = level_begin; pi < level_end; ++pi) {
                detail::branch_preimages(m, branches, pool[pi].x, pre);
                for (double x : pre) {
                    if (x < out.supp_lo - dp || x > out.supp_hi + dp) continue;
                    pool.push_back({x, depth, static_cast<int>(pi), 0.0});
                    if (pool.size() > node_cap)
                        throw no_t0("preimage pool exceeded its cap before covering the net");
                }
            }
            level_begin = level_end;
            level_end = pool.size();
            if (level_begin == level_end)
                throw no_t0("no further preimages found at depth " + std::to_string(depth));
        }
        all.clear();
        for (std::size_t i = 0; i < pool.size(); ++i) all.push_back(static_cast<int>(i));
        if (covered(all)) {
            t0 = depth;
            break;
        }
    }
    if (t0 < 0) throw no_t0("net not covered by preimages of depth <= 30");

    // allowance per point: walking the forward chain, the pullback of Omega0
    // must stay inside a monotone branch at every step with margin 4, and
    // |omega_x| must stay below delta'/15
    constexpr double margin_factor = 4.0;
    for (auto& p : pool) {
        if (p.depth == 0) {
            p.h_allow = std::numeric_limits<double>::infinity();
            continue;
        }
        double h = std::numeric_limits<double>::infinity();
        double amp = 1.0; // |(f^j)'(p.x)| accumulated along the chain
        double x = p.x;
        for (int j = 0; j < p.depth; ++j) {
            const double margin = detail::branch_margin(m, branches, x);
            const double dv = std::abs(eval_deriv_unchecked(m, x));
            if (dv < 1e-300) {
                h = 0.0;
                break;
            }
            // pullback radius at this ancestor ~ h / |derivative from here to c|
            const double deriv_to_c = [&] {
                double a = 1.0, w = x;
                for (int k = j; k < p.depth; ++k) {
                    a *= std::abs(eval_deriv_unchecked(m, w));
                    w = step(m, w);
                }
                return a;
            }();
            h = std::min(h, margin * deriv_to_c / (2.0 * margin_factor));
            amp *= dv;
            x = step(m, x);
        }
        // |omega_x| ~ 2h/amp must stay below delta'/15
        h = std::min(h, dp / 15.0 * amp / (2.0 * margin_factor));
        p.h_allow = h;
    }

    // shrink the Omega0 half-width until the usable points still cover the net
    double h = std::min(ctx.cfg.delta * 0.5, dp / 15.0);
    bool ok = false;
    for (int it = 0; it < 60; ++it) {
        std::vector<int> usable;
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (pool[i].h_allow >= h) usable.push_back(static_cast<int>(i));
        if (covered(usable)) {
            out.points.clear();
            int max_depth_used = 0;
            for (int i : usable) {
                out.points.push_back(pool[static_cast<std::size_t>(i)]);
                max_depth_used = std::max(max_depth_used, pool[static_cast<std::size_t>(i)].depth);
            }
            out.t0 = max_depth_used;
            ok = true;
            break;
        }
        h *= 0.5;
        if (h < 1e-7 * dp) break;
    }
    if (!ok) throw no_t0("no Omega0 width supports a covering preimage net");

    // parent indices are no longer valid for the filtered list; rebuild the
    // forward orbits directly when pulling back
    out.lo = c - h;
    out.hi = c + h;
    out.delta_dprime = std::min(dp / 3.0, out.width());
    std::sort(out.points.begin(), out.points.end(),
              [](const PreimagePoint& a, const PreimagePoint& b) { return a.x < b.x; });
    out.order.resize(out.points.size());
    for (std::size_t i = 0; i < out.order.size(); ++i) out.order[i] = static_cast<int>(i);
    return out;
}

// ---------------------------------------------------------------------------
// the full-return Markov map
// ---------------------------------------------------------------------------

struct QPiece {
    dd lo, hi;
    long R = 0;
    int s = 0;              // number of large-scale times before the return
    int t = 0;              // tail iterates from omega_x onto Omega0
    int orient = +1;        // sign of (f^R)' on the piece
    std::vector<long> phat_chain;
    double markov_err = 0.0; // endpoint mismatch relative to |Omega0|

    double width() const { return to_double(hi - lo); }
};

struct ReturnMapQ {
    double omega0_lo = 0.0, omega0_hi = 0.0;
    int t0 = 0;
    long n_max = 0;
    std::vector<QPiece> pieces; // sorted by lo
    double unresolved_mass = 0.0;
    long markov_mismatches = 0; // pieces still off after the high-precision re-solve
    long no_preimage_misses = 0;
    std::vector<double> chain_mass; // mass by number of large-scale times s

    double omega0_len() const { return omega0_hi - omega0_lo; }
    double resolved_mass() const {
        double s = 0.0;
        for (const auto& p : pieces) s += p.width();
        return s;
    }
};

namespace detail {

// pullback of Omega0 along the forward orbit of a preimage point, one
// monotone branch per step
inline std::optional<std::pair<dd, dd>> pull_back_omega(const MapSpec& m, const BranchSet& br,
                                                        const Omega0Result& om, double x0,
                                                        int depth) {
    std::vector<double> orbit(static_cast<std::size_t>(depth) + 1);
    orbit[0] = x0;
    for (int j = 1; j <= depth; ++j) orbit[static_cast<std::size_t>(j)] = step(m, orbit[static_cast<std::size_t>(j - 1)]);
    dd lo(om.lo), hi(om.hi);
    for (int j = depth - 1; j >= 0; --j) {
        const double y = orbit[static_cast<std::size_t>(j)];
        // branch containing y
        double blo = m.x_lo, bhi = m.x_hi;
        for (std::size_t k = 0; k + 1 < br.cuts.size(); ++k)
            if (y >= br.cuts[k] && y <= br.cuts[k + 1]) {
                blo = br.cuts[k];
                bhi = br.cuts[k + 1];
                break;
            }
        const double flo = step(m, blo), fhi = step(m, bhi);
        const bool increasing = flo <= fhi;
        const dd tgt_lo = increasing ? lo : hi;
        const dd tgt_hi = increasing ? hi : lo;
        const dd nlo = pull_back(m, dd(blo), dd(bhi), 1, tgt_lo);
        const dd nhi = pull_back(m, dd(blo), dd(bhi), 1, tgt_hi);
        lo = nlo;
        hi = nhi;
        if (hi < lo) std::swap(lo, hi);
        if (!(to_double(hi - lo) > 0.0)) return std::nullopt;
    }
    return std::make_pair(lo, hi);
}

} // namespace detail

inline ReturnMapQ build_return_map(const MapSpec& m, const InducingContext& ctx,
                                   const Omega0Result& om, long n_max) {
    ReturnMapQ Q;
    Q.omega0_lo = om.lo;
    Q.omega0_hi = om.hi;
    Q.t0 = om.t0;
    Q.n_max = n_max;
    const auto branches = detail::make_branches(m);
    const double om_len = om.width();

    // lazily computed pullback neighbourhoods, keyed by point index
    std::map<int, std::pair<dd, dd>> omega_x_cache;
    auto omega_x_of = [&](int idx) -> std::optional<std::pair<dd, dd>> {
        auto it = omega_x_cache.find(idx);
        if (it != omega_x_cache.end()) return it->second;
        const auto& p = om.points[static_cast<std::size_t>(idx)];
        auto r = detail::pull_back_omega(m, branches, om, p.x, p.depth);
        if (r) omega_x_cache.emplace(idx, *r);
        return r;
    };

    LargeScalePartition scratch;
    scratch.J_lo = om.lo;
    scratch.J_hi = om.hi;
    scratch.n_max = n_max;
    PartitionEngine eng(m, ctx, n_max);
    eng.seed(dd(om.lo), dd(om.hi), 0, 0, {});

    auto on_terminal = [&](TerminalPiece&& tp) -> bool {
        const double M_lo = tp.img_lo, M_hi = tp.img_hi;
        const double M = M_hi - M_lo;
        // minimal-depth usable preimage point in the middle fifth
        const double f_lo = M_lo + 0.4 * M, f_hi = M_lo + 0.6 * M;
        int best = -1;
        for (std::size_t i = 0; i < om.points.size(); ++i) {
            const auto& p = om.points[i];
            if (p.x < f_lo || p.x > f_hi) continue;
            if (best < 0 || p.depth < om.points[static_cast<std::size_t>(best)].depth ||
                (p.depth == om.points[static_cast<std::size_t>(best)].depth &&
                 std::abs(p.x - 0.5 * (M_lo + M_hi)) <
                     std::abs(om.points[static_cast<std::size_t>(best)].x - 0.5 * (M_lo + M_hi))))
                best = static_cast<int>(i);
        }
        std::optional<std::pair<dd, dd>> wx;
        if (best >= 0) wx = omega_x_of(best);
        if (!wx) {
            ++Q.no_preimage_misses; // fall back: keep inducing from the middle
            return false;
        }
        const auto& p = om.points[static_cast<std::size_t>(best)];
        // omega_tilde = (f^{p_hat})^{-1}(omega_x) inside the terminal piece
        dd s_lo = pull_back(m, tp.src_lo, tp.src_hi, tp.p_hat,
                            tp.increasing ? wx->first : wx->second);
        dd s_hi = pull_back(m, tp.src_lo, tp.src_hi, tp.p_hat,
                            tp.increasing ? wx->second : wx->first);
        if (s_hi < s_lo) std::swap(s_lo, s_hi);

        QPiece piece;
        piece.R = tp.p_hat + p.depth;
        piece.t = p.depth;
        piece.s = static_cast<int>(tp.phat_chain.size()) + 1;
        piece.phat_chain = tp.phat_chain;
        piece.phat_chain.push_back(tp.p_hat);
        piece.lo = s_lo;
        piece.hi = s_hi;

        // Markov verification in double-double; re-solve once on mismatch
        auto markov_err = [&](const dd& a, const dd& b) {
            const dd fa = detail::iterate_dd(m, a, piece.R);
            const dd fb = detail::iterate_dd(m, b, piece.R);
            const double e1 = std::abs(to_double(fa) - om.lo);
            const double e2 = std::abs(to_double(fb) - om.hi);
            const double e3 = std::abs(to_double(fa) - om.hi);
            const double e4 = std::abs(to_double(fb) - om.lo);
            return std::min(std::max(e1, e2), std::max(e3, e4));
        };
        piece.markov_err = markov_err(piece.lo, piece.hi);
        if (piece.markov_err > 1e-8 * om_len) {
            s_lo = pull_back(m, tp.src_lo, tp.src_hi, tp.p_hat,
                             tp.increasing ? wx->first : wx->second, 12);
            s_hi = pull_back(m, tp.src_lo, tp.src_hi, tp.p_hat,
                             tp.increasing ? wx->second : wx->first, 12);
            if (s_hi < s_lo) std::swap(s_lo, s_hi);
            piece.lo = s_lo;
            piece.hi = s_hi;
            piece.markov_err = markov_err(piece.lo, piece.hi);
            if (piece.markov_err > 1e-8 * om_len) ++Q.markov_mismatches;
        }
        piece.orient = signed_deriv_product(m, 0.5 * (to_double(piece.lo) + to_double(piece.hi)),
                                            piece.R) < 0
                           ? -1
                           : +1;
        Q.pieces.push_back(std::move(piece));

        // flanking parts re-enter the construction as new starting intervals
        if (to_double(s_lo - tp.src_lo) > 0.0)
            eng.push_external(tp.src_lo, s_lo, tp.p_hat, static_cast<int>(tp.phat_chain.size()) + 1,
                              Q.pieces.back().phat_chain);
        if (to_double(tp.src_hi - s_hi) > 0.0)
            eng.push_external(s_hi, tp.src_hi, tp.p_hat, static_cast<int>(tp.phat_chain.size()) + 1,
                              Q.pieces.back().phat_chain);
        return true;
    };

    eng.run(scratch, on_terminal);
    // everything the engine retired is censored mass for the return map
    Q.unresolved_mass = scratch.unresolved_mass;
    for (const auto& p : scratch.resolved) Q.unresolved_mass += p.width();

    std::sort(Q.pieces.begin(), Q.pieces.end(),
              [](const QPiece& a, const QPiece& b) { return a.lo < b.lo; });
    std::size_t max_s = 0;
    for (const auto& p : Q.pieces) max_s = std::max(max_s, static_cast<std::size_t>(p.s));
    Q.chain_mass.assign(max_s + 1, 0.0);
    for (const auto& p : Q.pieces) Q.chain_mass[static_cast<std::size_t>(p.s)] += p.width();
    return Q;
}

// ---------------------------------------------------------------------------
// tails, separation time, Holder distortion, conditional tails
// ---------------------------------------------------------------------------

// Absolute tail masses M_k = |{R > k}| for k = 0..n_max, censored mass
// included at every k. Pieces are accumulated in sorted order so that the
// tower bookkeeping can reproduce these sums exactly.
inline std::vector<double> tail_masses(const ReturnMapQ& Q) {
    std::vector<double> M(static_cast<std::size_t>(Q.n_max) + 1, 0.0);
    for (long k = 0; k <= Q.n_max; ++k) {
        double s = 0.0;
        for (const auto& p : Q.pieces)
            if (p.R > k) s += p.width();
        M[static_cast<std::size_t>(k)] = s + Q.unresolved_mass;
    }
    return M;
}

inline TailStats tail_of_R(const ReturnMapQ& Q) {
    TailStats ts;
    ts.n_max = Q.n_max;
    const double total = Q.omega0_len();
    const auto M = tail_masses(Q);
    ts.m_n.resize(M.size());
    for (std::size_t i = 0; i < M.size(); ++i) ts.m_n[i] = M[i] / total;
    ts.censored_mass = Q.unresolved_mass / total;
    ts.decay = fit_tail_decay(ts.m_n, Q.n_max, ts.censored_mass);
    return ts;
}

struct SeparationResult {
    long s = 0;
    bool capped = false;
    bool escaped = false;
    long escape_step = -1;
};

namespace detail {

inline int locate_piece(const ReturnMapQ& Q, double x) {
    int lo = 0, hi = static_cast<int>(Q.pieces.size()) - 1, ans = -1;
    while (lo <= hi) {
        const int mid = (lo + hi) / 2;
        if (to_double(Q.pieces[static_cast<std::size_t>(mid)].lo) <= x) {
            ans = mid;
            lo = mid + 1;
        } else {
            hi = mid - 1;
        }
    }
    if (ans < 0) return -1;
    return x <= to_double(Q.pieces[static_cast<std::size_t>(ans)].hi) ? ans : -1;
}

} // namespace detail

// First n with hat f^n(x), hat f^n(y) in different pieces of Q.
inline SeparationResult separation_time(const ReturnMapQ& Q, const MapSpec& m, double x, double y,
                                        long horizon) {
    SeparationResult r;
    double a = x, b = y;
    for (long n = 0; n < horizon; ++n) {
        const int pa = detail::locate_piece(Q, a);
        const int pb = detail::locate_piece(Q, b);
        if (pa < 0 || pb < 0) {
            r.escaped = true;
            r.escape_step = n;
            r.s = n;
            return r;
        }
        if (pa != pb) {
            r.s = n;
            return r;
        }
        const long R = Q.pieces[static_cast<std::size_t>(pa)].R;
        a = detail::iterate_double(m, a, R);
        b = detail::iterate_double(m, b, R);
    }
    r.s = horizon;
    r.capped = true;
    return r;
}

struct HolderReport {
    double C = 0.0;
    double beta = 0.0;
    long N_expansion = 0; // iterate count with |(hat f^N)'| >= 2 everywhere sampled
    long pairs = 0;
    long violations = 0; // at slack 1.1
    double violation_rate() const { return pairs > 0 ? static_cast<double>(violations) / pairs : 0.0; }
};

inline HolderReport check_holder_distortion(const ReturnMapQ& Q, const MapSpec& m, long n_pairs,
                                            std::uint64_t seed, long horizon = 64) {
    HolderReport rep;
    if (Q.pieces.empty()) return rep;
    // cumulative widths for mass-weighted piece sampling
    std::vector<double> cum(Q.pieces.size());
    double tot = 0.0;
    for (std::size_t i = 0; i < Q.pieces.size(); ++i) {
        tot += Q.pieces[i].width();
        cum[i] = tot;
    }
    Rng rng(seed);

    // N with |(hat f^N)'| >= 2 on sampled points
    long N = 1;
    for (int i = 0; i < 200; ++i) {
        const double u = rng.uniform() * tot;
        const std::size_t pi = static_cast<std::size_t>(
            std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        double x = to_double(Q.pieces[pi].lo) +
                   rng.uniform() * Q.pieces[pi].width();
        double acc = 1.0;
        long steps = 0;
        while (std::abs(acc) < 2.0 && steps < 50) {
            const int at = detail::locate_piece(Q, x);
            if (at < 0) break;
            const long R = Q.pieces[static_cast<std::size_t>(at)].R;
            acc *= detail::signed_deriv_product(m, x, R);
            x = detail::iterate_double(m, x, R);
            ++steps;
        }
        if (std::abs(acc) >= 2.0) N = std::max(N, steps);
    }
    rep.N_expansion = N;
    rep.beta = std::pow(2.0, -1.0 / static_cast<double>(N));

    struct Sample {
        double lhs;
        long s;
    };
    std::vector<Sample> samples;
    samples.reserve(static_cast<std::size_t>(n_pairs));
    for (long i = 0; i < n_pairs; ++i) {
        const double u = rng.uniform() * tot;
        const std::size_t pi = static_cast<std::size_t>(
            std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        const auto& piece = Q.pieces[pi];
        const double w = piece.width();
        const double x = to_double(piece.lo) + rng.uniform() * w;
        const double y = to_double(piece.lo) + rng.uniform() * w;
        if (x == y) continue;
        const double dx = detail::signed_deriv_product(m, x, piece.R);
        const double dy = detail::signed_deriv_product(m, y, piece.R);
        if (dy == 0.0 || !std::isfinite(dx) || !std::isfinite(dy)) continue;
        // separation counted from the first full return onward, so pairs that
        // split immediately carry s = 0 and pin the constant C
        const auto sep = separation_time(Q, m, detail::iterate_double(m, x, piece.R),
                                         detail::iterate_double(m, y, piece.R), horizon);
        samples.push_back({std::abs(dx / dy - 1.0), sep.s});
    }
    // C from the s = 0 pairs (bounded distortion within one piece)
    double C = 0.0;
    for (const auto& s : samples)
        if (s.s == 0) C = std::max(C, s.lhs);
    if (C <= 0.0) C = 1e-6;
    rep.C = C;
    for (const auto& s : samples) {
        ++rep.pairs;
        if (s.lhs > 1.1 * C * std::pow(rep.beta, static_cast<double>(s.s))) ++rep.violations;
    }
    return rep;
}

struct ConditionalTailReport {
    // worst observed ratio of conditional tail to (3K/delta') * m_k, per depth
    std::vector<double> worst_ratio; // index = chain depth i (1-based)
    bool holds_at(double slack) const {
        for (double r : worst_ratio)
            if (r > slack) return false;
        return true;
    }
};

// Lemma-15 check: |{p_{i+1} > p_i + k | p_i}| <= (3K/delta') |{p > k}|.
inline ConditionalTailReport conditional_tail_check(const ReturnMapQ& Q,
                                                    const TailStats& phat_tails, double K,
                                                    double delta_prime, int max_depth = 5) {
    ConditionalTailReport rep;
    const double tilde_K = 3.0 * K / delta_prime;
    for (int i = 1; i <= max_depth; ++i) {
        double denom = 0.0;
        for (const auto& p : Q.pieces)
            if (p.s >= i) denom += p.width();
        if (denom <= 0.0) break;
        double worst = 0.0;
        const long n_max = phat_tails.n_max;
        for (long k = 1; k <= n_max / 2; k *= 2) {
            double numer = 0.0;
            for (const auto& p : Q.pieces) {
                if (p.s < i + 1) continue;
                const long gap = p.phat_chain[static_cast<std::size_t>(i)] -
                                 p.phat_chain[static_cast<std::size_t>(i - 1)];
                if (gap > k) numer += p.width();
            }
            const double mk = phat_tails.m_n[static_cast<std::size_t>(std::min(k, n_max))];
            if (mk <= 0.0) continue;
            const double bound = tilde_K * mk;
            worst = std::max(worst, (numer / denom) / bound);
        }
        rep.worst_ratio.push_back(worst);
    }
    return rep;
}

} // namespace indmap
