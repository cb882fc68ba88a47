#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "indmap/errors.hpp"
#include "indmap/fit_util.hpp"

namespace indmap {

enum class DecayKind {
    exponential,
    stretched_exponential,
    polynomial,
    summable_only,
    not_summable,
    inconclusive,
};

inline const char* decay_kind_name(DecayKind k) {
    switch (k) {
        case DecayKind::exponential: return "exponential";
        case DecayKind::stretched_exponential: return "stretched-exponential";
        case DecayKind::polynomial: return "polynomial";
        case DecayKind::summable_only: return "summable-only";
        case DecayKind::not_summable: return "not-summable";
        case DecayKind::inconclusive: return "inconclusive";
    }
    return "?";
}

// Model fits for a positive sequence y_n over a window [n_min, n_max]:
//   exponential:  log y = log C - beta * n
//   stretched:    log y = log C - beta * n^alpha, alpha in (0,1)
//   polynomial:   log y = log C - alpha * log n
// The winner is the transform with the highest R^2; all three fits are kept.
struct DecayClass {
    DecayKind kind = DecayKind::inconclusive;
    double C = 0.0;
    double beta = 0.0;
    double alpha = 0.0;
    double fit_quality = 0.0;
    long n_min = 0, n_max = 0;

    LineFit exp_fit;                       // y transform: (n, log y)
    LineFit poly_fit;                      // (log n, log y)
    LineFit stretched_fit;                 // (n^alpha, log y)
    double stretched_alpha = 0.0;

    // quasi-polynomial evidence: the fitted polynomial exponent keeps growing
    // with the window while no exponential-type fit is convincing
    bool super_polynomial = false;
    double poly_alpha_first_half = 0.0;
    double poly_alpha_second_half = 0.0;

    bool degenerate = false; // entries spanned < 2 natural-log units

    std::string label() const {
        if (super_polynomial) return "super-polynomial";
        return decay_kind_name(kind);
    }
};

enum class SeqKind { b_sequence, d_sequence, tail_counts };

namespace detail {

struct WindowData {
    std::vector<double> n;    // indices (1-based positions in the sequence)
    std::vector<double> logy; // log of entries
};

inline WindowData collect_window(std::span<const double> seq, long n_min, long n_max) {
    WindowData w;
    for (long i = n_min; i <= n_max && i <= static_cast<long>(seq.size()); ++i) {
        const double v = seq[static_cast<std::size_t>(i - 1)];
        if (v > 0.0 && std::isfinite(v)) {
            w.n.push_back(static_cast<double>(i));
            w.logy.push_back(std::log(v));
        }
    }
    return w;
}

inline LineFit fit_stretched(const WindowData& w, double alpha) {
    std::vector<double> xs(w.n.size());
    for (std::size_t i = 0; i < w.n.size(); ++i) xs[i] = std::pow(w.n[i], alpha);
    return fit_line(xs, w.logy);
}

inline LineFit fit_poly(const WindowData& w) {
    std::vector<double> xs(w.n.size());
    for (std::size_t i = 0; i < w.n.size(); ++i) xs[i] = std::log(w.n[i]);
    return fit_line(xs, w.logy);
}

inline bool cauchy_converging(std::span<const double> seq) {
    // last-decade partial-sum increment below 1e-6 of the total
    double total = 0.0;
    std::size_t i = 0;
    std::vector<double> partial(seq.size());
    for (double v : seq) {
        total += std::max(v, 0.0);
        partial[i++] = total;
    }
    if (total <= 0.0 || seq.size() < 10) return false;
    const std::size_t start = seq.size() / 10 * 9;
    return (total - partial[start]) < 1e-6 * total;
}

} // namespace detail

inline DecayClass classify_growth(std::span<const double> seq, SeqKind kind = SeqKind::b_sequence) {
    (void)kind;
    const long N = static_cast<long>(seq.size());
    if (N < 50) throw window_too_short("classify_growth needs at least 50 points");

    DecayClass out;
    out.n_min = std::max<long>(1, N / 10); // skip transients
    out.n_max = N;

    auto w = detail::collect_window(seq, out.n_min, out.n_max);
    if (w.n.size() < 10) {
        out.degenerate = true;
        return out;
    }
    const auto [lo_it, hi_it] = std::minmax_element(w.logy.begin(), w.logy.end());
    if (*hi_it - *lo_it < 2.0) {
        out.degenerate = true; // no rate inferable
        return out;
    }

    out.exp_fit = fit_line(w.n, w.logy);
    out.poly_fit = detail::fit_poly(w);

    // stretched fit: golden-section style scan over alpha in (0,1)
    double best_alpha = 0.5;
    LineFit best{};
    for (int pass = 0; pass < 2; ++pass) {
        const double lo = pass == 0 ? 0.05 : std::max(0.02, best_alpha - 0.08);
        const double hi = pass == 0 ? 0.95 : std::min(0.99, best_alpha + 0.08);
        const int steps = pass == 0 ? 19 : 17;
        for (int i = 0; i <= steps; ++i) {
            const double a = lo + (hi - lo) * i / steps;
            const LineFit f = detail::fit_stretched(w, a);
            if (f.r2 > best.r2) {
                best = f;
                best_alpha = a;
            }
        }
    }
    out.stretched_fit = best;
    out.stretched_alpha = best_alpha;

    // windowed polynomial exponents (geometric half-split of the window)
    {
        const long nm = static_cast<long>(std::sqrt(static_cast<double>(out.n_min) *
                                                    static_cast<double>(out.n_max)));
        auto w1 = detail::collect_window(seq, out.n_min, nm);
        auto w2 = detail::collect_window(seq, nm, out.n_max);
        if (w1.n.size() >= 5 && w2.n.size() >= 5) {
            out.poly_alpha_first_half = -detail::fit_poly(w1).slope;
            out.poly_alpha_second_half = -detail::fit_poly(w2).slope;
        }
    }

    struct Candidate {
        DecayKind kind;
        double r2;
    };
    const bool exp_decaying = out.exp_fit.slope < 0.0;
    const bool poly_decaying = out.poly_fit.slope < 0.0;
    const bool str_decaying = out.stretched_fit.slope < 0.0;
    Candidate cands[] = {
        {DecayKind::exponential, exp_decaying ? out.exp_fit.r2 : -1.0},
        {DecayKind::polynomial, poly_decaying ? out.poly_fit.r2 : -1.0},
        {DecayKind::stretched_exponential, str_decaying ? out.stretched_fit.r2 : -1.0},
    };
    const Candidate* winner = &cands[0];
    for (const auto& c : cands)
        if (c.r2 > winner->r2) winner = &c;

    if (winner->r2 < 0.9) {
        out.kind = detail::cauchy_converging(seq) ? DecayKind::summable_only : DecayKind::not_summable;
        out.fit_quality = std::max(winner->r2, 0.0);
    } else {
        out.kind = winner->kind;
        out.fit_quality = winner->r2;
        switch (out.kind) {
            case DecayKind::exponential:
                out.C = std::exp(out.exp_fit.intercept);
                out.beta = -out.exp_fit.slope;
                out.alpha = 0.0;
                break;
            case DecayKind::polynomial:
                out.C = std::exp(out.poly_fit.intercept);
                out.alpha = -out.poly_fit.slope;
                out.beta = 0.0;
                break;
            case DecayKind::stretched_exponential:
                out.C = std::exp(out.stretched_fit.intercept);
                out.beta = -out.stretched_fit.slope;
                out.alpha = out.stretched_alpha;
                break;
            default: break;
        }
    }

    // Super-polynomial flag. A genuinely exponential (or stretched with a
    // solid exponent) sequence also shows growing windowed poly exponents, so
    // require those fits to be unconvincing first.
    if (out.poly_alpha_first_half > 0.05 && out.poly_alpha_second_half > 0.0) {
        const bool alpha_grows = out.poly_alpha_second_half > 1.10 * out.poly_alpha_first_half;
        const bool exp_like = exp_decaying && out.exp_fit.r2 >= 0.985;
        const bool stretched_like =
            str_decaying && out.stretched_fit.r2 >= 0.995 && out.stretched_alpha >= 0.35;
        out.super_polynomial = alpha_grows && !exp_like && !stretched_like;
    }
    return out;
}

} // namespace indmap
