#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "indmap/decay_fit.hpp"
#include "indmap/errors.hpp"
#include "indmap/map_kernel.hpp"
#include "indmap/parallel.hpp"
#include "indmap/rng.hpp"
#include "indmap/tower.hpp"

namespace indmap {

// ---------------------------------------------------------------------------
// observables (fixed library, named in config)
// ---------------------------------------------------------------------------

struct Observable {
    enum class Kind { coordinate, absdist, bump };
    Kind kind = Kind::coordinate;
    double a = 0.3;   // reference point for absdist / bump
    double w = 0.05;  // bump width

    double operator()(double x) const {
        switch (kind) {
            case Kind::coordinate: return x;
            case Kind::absdist: return std::abs(x - a);
            case Kind::bump: {
                const double u = (x - a) / w;
                return std::exp(-u * u);
            }
        }
        return x;
    }

    std::string name() const {
        switch (kind) {
            case Kind::coordinate: return "x";
            case Kind::absdist: return "|x-" + std::to_string(a) + "|";
            case Kind::bump: return "bump(" + std::to_string(a) + ")";
        }
        return "?";
    }
};

inline Observable parse_observable(const std::string& s, double a, double w = 0.05) {
    Observable o;
    o.a = a;
    o.w = w;
    if (s == "x" || s == "coordinate") o.kind = Observable::Kind::coordinate;
    else if (s == "absdist") o.kind = Observable::Kind::absdist;
    else if (s == "bump") o.kind = Observable::Kind::bump;
    else throw config_error("unknown observable: " + s);
    return o;
}

// ---------------------------------------------------------------------------
// invariant density
// ---------------------------------------------------------------------------

enum class DensityMethod { birkhoff_histogram, tower_pushforward };

struct MeasureEstimate {
    double lo = 0.0, hi = 1.0;
    std::vector<double> density; // bin densities, integrate to 1
    DensityMethod method = DensityMethod::birkhoff_histogram;
    long n_samples = 0;
    std::uint64_t seed = 0;

    int bins() const { return static_cast<int>(density.size()); }
    double bin_width() const { return (hi - lo) / bins(); }
};

inline double l1_distance(const MeasureEstimate& a, const MeasureEstimate& b) {
    if (a.bins() != b.bins()) throw error("l1_distance: bin counts differ");
    double s = 0.0;
    for (int i = 0; i < a.bins(); ++i)
        s += std::abs(a.density[static_cast<std::size_t>(i)] -
                      b.density[static_cast<std::size_t>(i)]) *
             a.bin_width();
    return s;
}

inline MeasureEstimate birkhoff_density(const MapSpec& m, long n_samples, std::uint64_t seed,
                                        int bins = 4096, long burn_in = 1000) {
    if (n_samples < 1000000) throw error("birkhoff_density: need n_samples >= 1e6");
    const auto supp = estimate_support(m);
    MeasureEstimate est;
    est.lo = supp.first;
    est.hi = supp.second;
    est.method = DensityMethod::birkhoff_histogram;
    est.n_samples = n_samples;
    est.seed = seed;
    std::vector<long long> counts(static_cast<std::size_t>(bins), 0);
    Rng rng(seed);
    double x = m.x_lo + rng.uniform() * (m.x_hi - m.x_lo);
    for (long k = 0; k < burn_in; ++k) x = step(m, x);
    const double inv_w = bins / (est.hi - est.lo);
    for (long k = 0; k < n_samples; ++k) {
        const int b = std::clamp(static_cast<int>((x - est.lo) * inv_w), 0, bins - 1);
        ++counts[static_cast<std::size_t>(b)];
        x = step(m, x);
    }
    est.density.resize(static_cast<std::size_t>(bins));
    const double norm = inv_w / static_cast<double>(n_samples);
    for (int i = 0; i < bins; ++i)
        est.density[static_cast<std::size_t>(i)] = counts[static_cast<std::size_t>(i)] * norm;
    return est;
}

inline MeasureEstimate tower_density(const MapSpec& m, const TowerModel& tower, int bins = 4096) {
    const auto supp = estimate_support(m);
    MeasureEstimate est;
    est.lo = supp.first;
    est.hi = supp.second;
    est.method = DensityMethod::tower_pushforward;
    est.density.assign(static_cast<std::size_t>(bins), 0.0);
    const auto& Q = *tower.Q;
    const double inv_w = bins / (est.hi - est.lo);
    double deposited = 0.0;
    constexpr int strata = 8;
    for (const auto& p : Q.pieces) {
        const double w = p.width();
        const double mass = w / (strata);
        double xs[strata];
        for (int j = 0; j < strata; ++j)
            xs[j] = to_double(p.lo) + w * (j + 0.5) / strata;
        for (long i = 0; i < p.R; ++i) {
            for (int j = 0; j < strata; ++j) {
                const int b = std::clamp(static_cast<int>((xs[j] - est.lo) * inv_w), 0, bins - 1);
                est.density[static_cast<std::size_t>(b)] += mass;
                xs[j] = step(m, xs[j]);
            }
            deposited += w;
        }
    }
    if (deposited <= 0.0) throw error("tower_density: empty tower");
    for (auto& v : est.density) v *= inv_w / deposited;
    est.n_samples = static_cast<long>(deposited / 1.0);
    return est;
}

// Two independent seeds must agree; throws non_convergence otherwise.
inline MeasureEstimate invariant_density_checked(const MapSpec& m, long n_samples,
                                                 std::uint64_t seed, int bins = 4096) {
    const auto a = birkhoff_density(m, n_samples, seed, bins);
    const auto b = birkhoff_density(m, n_samples, seed + 1, bins);
    const double d = l1_distance(a, b);
    if (d > 0.05)
        throw non_convergence("two seeds disagree in L1 by " + std::to_string(d));
    return a;
}

// L1 defect of one transfer-operator step, estimated by pushing a sampled
// orbit one step forward (both histograms share the orbit).
inline double invariance_defect(const MapSpec& m, const MeasureEstimate& est, long n_samples,
                                std::uint64_t seed) {
    MeasureEstimate pushed = est;
    std::fill(pushed.density.begin(), pushed.density.end(), 0.0);
    MeasureEstimate base = pushed;
    Rng rng(seed);
    const int bins = est.bins();
    const double inv_w = bins / (est.hi - est.lo);
    // sample from est by inverse transform over bins
    std::vector<double> cdf(est.density.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < est.density.size(); ++i) {
        acc += est.density[i] * est.bin_width();
        cdf[i] = acc;
    }
    for (long k = 0; k < n_samples; ++k) {
        const double u = rng.uniform() * acc;
        const std::size_t b =
            static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        const double x = est.lo + (static_cast<double>(b) + rng.uniform()) * est.bin_width();
        const double y = step(m, std::clamp(x, m.x_lo, m.x_hi));
        const int bx = std::clamp(static_cast<int>((x - est.lo) * inv_w), 0, bins - 1);
        const int by = std::clamp(static_cast<int>((y - est.lo) * inv_w), 0, bins - 1);
        base.density[static_cast<std::size_t>(bx)] += 1.0;
        pushed.density[static_cast<std::size_t>(by)] += 1.0;
    }
    const double norm = inv_w / static_cast<double>(n_samples);
    for (auto& v : base.density) v *= norm;
    for (auto& v : pushed.density) v *= norm;
    return l1_distance(base, pushed);
}

// ---------------------------------------------------------------------------
// correlation function
// ---------------------------------------------------------------------------

struct CorrelationCurve {
    std::string phi, psi;
    std::vector<double> C;        // C[n], n = 0..n_max
    std::vector<double> se;       // batch-means standard errors
    std::vector<bool> censored;   // value below 2*SE
    long n_samples = 0;
    std::uint64_t seed = 0;
};

// C_n = |<(phi o f^n) psi> - <phi><psi>| along a stationary orbit, with
// batch-means errors over 50 batches.
inline CorrelationCurve correlation(const MapSpec& m, const Observable& phi,
                                    const Observable& psi, long n_max, long n_samples,
                                    std::uint64_t seed, long burn_in = 10000,
                                    int n_batches = 50) {
    CorrelationCurve out;
    out.phi = phi.name();
    out.psi = psi.name();
    out.n_samples = n_samples;
    out.seed = seed;
    Rng rng(seed);
    double x = m.x_lo + rng.uniform() * (m.x_hi - m.x_lo);
    for (long k = 0; k < burn_in; ++k) x = step(m, x);
    const long M = n_samples + n_max;
    std::vector<double> phis(static_cast<std::size_t>(M)), psis(static_cast<std::size_t>(M));
    for (long k = 0; k < M; ++k) {
        phis[static_cast<std::size_t>(k)] = phi(x);
        psis[static_cast<std::size_t>(k)] = psi(x);
        x = step(m, x);
    }
    double mean_phi = 0.0, mean_psi = 0.0;
    for (long k = 0; k < n_samples; ++k) {
        mean_phi += phis[static_cast<std::size_t>(k)];
        mean_psi += psis[static_cast<std::size_t>(k)];
    }
    mean_phi /= static_cast<double>(n_samples);
    mean_psi /= static_cast<double>(n_samples);

    out.C.resize(static_cast<std::size_t>(n_max) + 1);
    out.se.resize(out.C.size());
    out.censored.resize(out.C.size());
    const long batch = n_samples / n_batches;
    std::vector<double> bm(static_cast<std::size_t>(n_batches));
    for (long n = 0; n <= n_max; ++n) {
        for (int b = 0; b < n_batches; ++b) {
            double s = 0.0;
            const long from = b * batch, to = from + batch;
            for (long k = from; k < to; ++k)
                s += phis[static_cast<std::size_t>(k + n)] * psis[static_cast<std::size_t>(k)];
            bm[static_cast<std::size_t>(b)] = s / static_cast<double>(batch);
        }
        const double mean_prod = mean_of(bm);
        const double se = sd_of(bm) / std::sqrt(static_cast<double>(n_batches));
        const double c = std::abs(mean_prod - mean_phi * mean_psi);
        out.C[static_cast<std::size_t>(n)] = c;
        out.se[static_cast<std::size_t>(n)] = se;
        out.censored[static_cast<std::size_t>(n)] = c < 2.0 * se;
    }
    return out;
}

struct CorrelationFit {
    DecayClass decay;
    bool all_censored = false; // noise floor reached by n = 3: ">= exponential"
    std::string label() const { return all_censored ? ">= exponential" : decay.label(); }
};

inline CorrelationFit fit_correlation_decay(const CorrelationCurve& curve) {
    CorrelationFit out;
    long first_censored = static_cast<long>(curve.C.size());
    for (std::size_t n = 1; n < curve.C.size(); ++n) {
        if (curve.censored[n]) {
            first_censored = static_cast<long>(n);
            break;
        }
    }
    if (first_censored <= 3) {
        out.all_censored = true;
        return out;
    }
    std::vector<double> seq;
    for (long n = 1; n < first_censored; ++n) seq.push_back(curve.C[static_cast<std::size_t>(n)]);
    if (static_cast<long>(seq.size()) < 10) {
        out.all_censored = true;
        return out;
    }
    // classify_growth needs 50 points; pad the request by fitting directly
    // when the uncensored stretch is shorter
    if (seq.size() >= 50) {
        out.decay = classify_growth(seq, SeqKind::tail_counts);
        return out;
    }
    std::vector<double> ns, logc, logn;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!(seq[i] > 0.0)) continue;
        ns.push_back(static_cast<double>(i + 1));
        logn.push_back(std::log(static_cast<double>(i + 1)));
        logc.push_back(std::log(seq[i]));
    }
    DecayClass d;
    d.exp_fit = fit_line(ns, logc);
    d.poly_fit = fit_line(logn, logc);
    if (d.exp_fit.r2 >= d.poly_fit.r2) {
        d.kind = DecayKind::exponential;
        d.beta = -d.exp_fit.slope;
        d.C = std::exp(d.exp_fit.intercept);
        d.fit_quality = d.exp_fit.r2;
    } else {
        d.kind = DecayKind::polynomial;
        d.alpha = -d.poly_fit.slope;
        d.C = std::exp(d.poly_fit.intercept);
        d.fit_quality = d.poly_fit.r2;
    }
    out.decay = d;
    return out;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov and the CLT experiment
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double ks_distance_to_normal(std::vector<double> samples, double sigma) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double F = normal_cdf(samples[i] / sigma);
        d = std::max(d, std::abs(F - static_cast<double>(i) / n));
        d = std::max(d, std::abs(F - static_cast<double>(i + 1) / n));
    }
    return d;
}

struct CltResult {
    double sigma_hat = 0.0;
    double ks = 1.0;
    bool pass = false;
    bool coboundary_suspected = false;
    double sd_phi = 0.0;
};

// n_trials independent normalized block sums of phi - <phi> over n_block
// iterates; KS distance of the trials against N(0, sigma_hat).
inline CltResult clt_test(const MapSpec& m, const Observable& phi, long n_block, long n_trials,
                          std::uint64_t seed, unsigned threads = 1, long burn_in = 1000) {
    CltResult out;
    // global mean and sd of phi from a long dedicated orbit
    double mean_phi = 0.0, m2 = 0.0;
    {
        Rng rng(seed, 0xabcdef);
        double x = m.x_lo + rng.uniform() * (m.x_hi - m.x_lo);
        for (long k = 0; k < burn_in; ++k) x = step(m, x);
        const long M = 2000000;
        for (long k = 0; k < M; ++k) {
            const double v = phi(x);
            mean_phi += v;
            m2 += v * v;
            x = step(m, x);
        }
        mean_phi /= static_cast<double>(M);
        m2 /= static_cast<double>(M);
    }
    out.sd_phi = std::sqrt(std::max(0.0, m2 - mean_phi * mean_phi));

    std::vector<double> sums(static_cast<std::size_t>(n_trials));
    parallel_for(static_cast<std::size_t>(n_trials), threads, [&](std::size_t trial) {
        Rng rng(seed, trial + 1);
        double x = m.x_lo + rng.uniform() * (m.x_hi - m.x_lo);
        for (long k = 0; k < burn_in; ++k) x = step(m, x);
        double s = 0.0;
        for (long k = 0; k < n_block; ++k) {
            s += phi(x) - mean_phi;
            x = step(m, x);
        }
        sums[trial] = s / std::sqrt(static_cast<double>(n_block));
    });
    out.sigma_hat = sd_of(sums);
    if (out.sigma_hat <= 0.01 * out.sd_phi) {
        out.coboundary_suspected = true;
        return out;
    }
    out.ks = ks_distance_to_normal(sums, out.sigma_hat);
    out.pass = out.ks < 0.05;
    return out;
}

} // namespace indmap
