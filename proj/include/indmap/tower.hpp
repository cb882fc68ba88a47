#pragma once

#include <cmath>
#include <vector>

#include "indmap/full_return.hpp"
#include "indmap/map_kernel.hpp"
#include "indmap/rng.hpp"

namespace indmap {

// Young tower over (Q, R): levels (omega, i) for i < R(omega), the step-up /
// return dynamics, and Kac normalization of level masses.
struct TowerModel {
    const ReturnMapQ* Q = nullptr;
    std::vector<double> level_mass; // level_mass[i] = |{R > i}| (censored mass included)
    double total_mass = 0.0;        // sum_omega R(omega)|omega| + censored part
    double censored_mass = 0.0;     // unresolved base mass, carried up to n_max
    long height = 0;

    // m_Omega({hat R > n}): on level i the step-up time exceeds n iff R > n+i.
    // Summed level-major in piece order so the identity with the R-tails is an
    // equality of identically grouped sums.
    double tail_Rhat(long n) const {
        double s = 0.0;
        for (long i = 0; n + i <= Q->n_max; ++i) {
            double li = 0.0;
            for (const auto& p : Q->pieces)
                if (p.R > n + i) li += p.width();
            li += Q->unresolved_mass;
            s += li;
        }
        return s;
    }
};

inline TowerModel build_tower(const ReturnMapQ& Q) {
    TowerModel t;
    t.Q = &Q;
    long height = 0;
    for (const auto& p : Q.pieces) height = std::max(height, p.R);
    t.height = std::min(height, Q.n_max);
    t.level_mass.assign(static_cast<std::size_t>(Q.n_max) + 1, 0.0);
    for (long i = 0; i <= Q.n_max; ++i) {
        double li = 0.0;
        for (const auto& p : Q.pieces)
            if (p.R > i) li += p.width();
        li += Q.unresolved_mass; // censored pieces have R > n_max >= i
        t.level_mass[static_cast<std::size_t>(i)] = li;
    }
    double total = 0.0;
    for (double v : t.level_mass) total += v;
    t.total_mass = total;
    t.censored_mass = Q.unresolved_mass * static_cast<double>(Q.n_max + 1);
    if (t.censored_mass > 0.05 * t.total_mass)
        throw kac_divergence("censored mass correction exceeds 5% of the tower mass");
    return t;
}

// pi(g(x,i)) vs f(pi(x,i)) on sampled tower points; returns the worst error.
inline double tower_commutation_defect(const TowerModel& t, const MapSpec& m, long samples,
                                       std::uint64_t seed) {
    const auto& Q = *t.Q;
    if (Q.pieces.empty()) return 0.0;
    Rng rng(seed);
    double worst = 0.0;
    for (long k = 0; k < samples; ++k) {
        const auto& p = Q.pieces[static_cast<std::size_t>(rng.next_u64() % Q.pieces.size())];
        const long i = static_cast<long>(rng.next_u64() % static_cast<std::uint64_t>(p.R));
        const double x = to_double(p.lo) + rng.uniform() * p.width();
        const double pi_x = detail::iterate_double(m, x, i);
        double pi_g;
        if (i + 1 < p.R) {
            pi_g = detail::iterate_double(m, x, i + 1);
        } else {
            pi_g = detail::iterate_double(m, x, p.R); // hat f(x) at level 0
        }
        worst = std::max(worst, std::abs(pi_g - step(m, pi_x)));
    }
    return worst;
}

} // namespace indmap
