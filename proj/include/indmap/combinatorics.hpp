#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "indmap/errors.hpp"

namespace indmap {

using BigInt = boost::multiprecision::cpp_int;

inline BigInt binomial_exact(long n, long k) {
    if (k < 0 || n < 0 || k > n) return 0;
    k = std::min(k, n - k);
    BigInt r = 1;
    for (long i = 1; i <= k; ++i) {
        r *= (n - k + i);
        r /= i;
    }
    return r;
}

// N+_{k,s}: compositions of k into s strictly positive parts = C(k-1, s-1).
inline BigInt count_positive_compositions(long k, long s) {
    if (k < 1 || s < 1) throw error("count_positive_compositions: k,s must be >= 1");
    return binomial_exact(k - 1, s - 1);
}

// N_{k,s}: compositions of k into s parts >= 0 = C(k+s-1, s-1).
inline BigInt count_compositions(long k, long s) {
    if (k < 0 || s < 1) throw error("count_compositions: need k >= 0, s >= 1");
    return binomial_exact(k + s - 1, s - 1);
}

// log of a positive BigInt using the top 64 bits of the mantissa.
inline double log_bigint(const BigInt& v) {
    if (v <= 0) throw error("log_bigint: nonpositive input");
    const long bits = static_cast<long>(boost::multiprecision::msb(v));
    if (bits <= 62) return std::log(v.convert_to<double>());
    const BigInt top = v >> (bits - 62);
    return std::log(top.convert_to<double>()) + static_cast<double>(bits - 62) * std::log(2.0);
}

// log-space Stirling approximation of C(n, k) for counts past the exact range
struct ApproxCount {
    double log_value = 0.0;
    bool approximate = false;
};

inline ApproxCount log_count_positive_compositions(long k, long s) {
    ApproxCount out;
    if (k < 1 || s < 1 || s > k) {
        out.log_value = -std::numeric_limits<double>::infinity();
        return out;
    }
    if (k + s <= 10000) {
        out.log_value = log_bigint(count_positive_compositions(k, s));
        return out;
    }
    out.approximate = true;
    out.log_value = std::lgamma(static_cast<double>(k)) - std::lgamma(static_cast<double>(s)) -
                    std::lgamma(static_cast<double>(k - s + 1));
    return out;
}

struct StirlingBoundReport {
    bool pass = true;
    long first_violation_k = -1;
    long first_violation_s = -1;
    long checked = 0;
};

// Checks N+_{k,s} <= exp(zeta (2 - log zeta + (1-alpha) log k) k^alpha) for
// all k <= k_max, 1 <= s <= zeta k^alpha (exact counts vs the bound's log).
inline StirlingBoundReport verify_stirling_bounds(long k_max, double zeta, double alpha) {
    if (!(zeta > 0.0) || zeta > 0.5 || !(alpha > 0.0) || alpha > 1.0)
        throw error("verify_stirling_bounds: need zeta in (0,1/2], alpha in (0,1]");
    StirlingBoundReport rep;
    for (long k = 1; k <= k_max; ++k) {
        const double ka = std::pow(static_cast<double>(k), alpha);
        const long s_max = std::min<long>(k, static_cast<long>(std::floor(zeta * ka)));
        const double log_bound =
            zeta * (2.0 - std::log(zeta) + (1.0 - alpha) * std::log(static_cast<double>(k))) * ka;
        for (long s = 1; s <= s_max; ++s) {
            ++rep.checked;
            const BigInt n = count_positive_compositions(k, s);
            if (n > 0 && log_bigint(n) > log_bound) {
                rep.pass = false;
                rep.first_violation_k = k;
                rep.first_violation_s = s;
                return rep;
            }
        }
    }
    return rep;
}

// Lemma-2 style threshold: smallest p0 in the window with
// S0 = sum_{p >= p0} zeta G_p <= 1/2, i.e. sum_{s>=1} S0^s <= 1.
inline std::size_t geometric_tail_threshold(std::span<const double> G, double zeta) {
    std::vector<double> tail(G.size() + 1, 0.0);
    for (std::size_t i = G.size(); i-- > 0;) tail[i] = tail[i + 1] + zeta * G[i];
    for (std::size_t p0 = 0; p0 < G.size(); ++p0)
        if (tail[p0] <= 0.5) return p0;
    throw no_threshold("no index in the window reaches S0 <= 1/2");
}

// Sum over s >= 1 and compositions (p_1..p_s), p_i in [p_lo, n], sum p_i <= n,
// of prod_i t_{p_i}. Dynamic programming over the total; A[m] sums products
// over compositions with total exactly m. Bails out early once the running
// value exceeds `cap` (callers only need to know whether it stays <= 1).
inline double composition_weight_sum(std::span<const double> t, long p_lo, long n,
                                     double cap = 1e6) {
    if (p_lo < 1) throw error("composition_weight_sum: p_lo must be >= 1");
    if (p_lo > n) return 0.0;
    std::vector<double> A(static_cast<std::size_t>(n) + 1, 0.0);
    A[0] = 1.0;
    double total = 0.0;
    for (long mm = 1; mm <= n; ++mm) {
        double v = 0.0;
        for (long p = p_lo; p <= mm; ++p) {
            if (static_cast<std::size_t>(p - 1) >= t.size()) break;
            v += t[static_cast<std::size_t>(p - 1)] * A[static_cast<std::size_t>(mm - p)];
        }
        A[static_cast<std::size_t>(mm)] = v;
        total += v;
        if (total > cap || v > cap) return total;
    }
    return total;
}

// Left side of the delta-selection inequality with per-piece weights
// t_p = zeta * b_p = zeta * [gamma_p^{l-1} D_p]^{-1/l}.
inline double delta_selection_sum(std::span<const double> logD, std::span<const double> gamma,
                                  double ell, double zeta, long p_delta, long n) {
    const long lim = std::min<long>(n, static_cast<long>(std::min(logD.size(), gamma.size())));
    std::vector<double> t(static_cast<std::size_t>(std::max<long>(lim, 0)), 0.0);
    for (long p = 1; p <= lim; ++p) {
        const std::size_t i = static_cast<std::size_t>(p - 1);
        if (!(gamma[i] > 0.0)) continue; // gamma underflow: the weight is 0
        const double v = zeta * std::exp(-((ell - 1.0) * std::log(gamma[i]) + logD[i]) / ell);
        if (std::isfinite(v)) t[i] = v;
    }
    return composition_weight_sum(t, p_delta, lim);
}

} // namespace indmap
