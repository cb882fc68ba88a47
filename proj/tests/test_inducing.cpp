#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "indmap/inducing.hpp"

using namespace indmap;

namespace {

struct Fixture {
    MapSpec m = make_map(MapFamily::logistic, {4.0});
    std::vector<CriticalOrbitTable> tables;
    InducingContext ctx;

    Fixture() {
        tables.push_back(build_table(m, 0.5, 2000));
        ctx.cfg = fix_delta(m, tables, 1.0);
        ctx.levels = build_level_sets(m, ctx.cfg, tables);
        ctx.expansion = estimate_outside_expansion(m, ctx.cfg.delta);
    }
};

const Fixture& fx() {
    static Fixture f;
    return f;
}

} // namespace

TEST_CASE("binding period basics") {
    const auto& f = fx();
    const auto& cfg = f.ctx.cfg;
    CHECK(binding_period(f.m, 0.5 + 2.0 * cfg.delta, cfg).p == 0); // outside Delta
    const auto at_c = binding_period(f.m, 0.5, cfg);
    CHECK(at_c.p == cfg.P_max);
    CHECK(at_c.cap_hit);
}

TEST_CASE("binding period is monotone toward the critical point") {
    const auto& f = fx();
    const auto& cfg = f.ctx.cfg;
    for (int side = 0; side < 2; ++side) {
        int prev = 0;
        for (int i = 0; i < 1000; ++i) {
            const double h = cfg.delta * std::pow(10.0, -6.0 * i / 999.0);
            const double x = 0.5 + (side == 0 ? -h : h);
            const int p = binding_period(f.m, x, cfg).p;
            CHECK(p >= prev);
            prev = p;
        }
    }
}

TEST_CASE("fix_delta calibrates the critical neighbourhood for a = 4") {
    const auto& cfg = fx().ctx.cfg;
    CHECK(cfg.delta > 0.0);
    CHECK(cfg.delta <= 0.05);
    CHECK(cfg.p_delta >= 1);
    CHECK(cfg.kappa > 1e-3);
    CHECK(cfg.kappa <= 1.0); // points already in Delta contribute the empty product
    CHECK(cfg.delta_prime > 0.0);
    // the contraction-principle constant is set by the first image of the
    // half-components, |f(W)| = 4 delta^2
    CHECK(cfg.delta_prime <= 4.0 * cfg.delta * cfg.delta + 1e-12);
    CHECK(cfg.eps < cfg.delta_prime);
    CHECK(cfg.rho_hat <= 0.125);
    // tau = 1 exactly for the quadratic family
    CHECK(cfg.tau == Catch::Approx(1.0).margin(0.02));
    CHECK(cfg.Gamma >= 1.0);
    // the delta-selection inequality holds at the chosen p_delta
    const auto& t = fx().tables[0];
    CHECK(delta_selection_sum(t.logD, cfg.gamma, 2.0, cfg.zeta, cfg.p_delta, 2000) <= 1.0);
}

TEST_CASE("BBC kappa estimate is stable across sampling phases") {
    const auto& f = fx();
    const auto a = estimate_bbc_kappa(f.m, f.ctx.cfg.delta, 10000, 100000, 0.0);
    const auto b = estimate_bbc_kappa(f.m, f.ctx.cfg.delta, 10000, 100000, 0.5);
    CHECK(a.kappa > 0.0);
    CHECK(a.kappa <= 1.0);
    CHECK(a.kappa / b.kappa < 2.0);
    CHECK(b.kappa / a.kappa < 2.0);
}

TEST_CASE("level sets tile Delta and respect the F' lower bound") {
    const auto& f = fx();
    const auto& cl = f.ctx.levels.per_critical[0];
    REQUIRE(!cl.left.empty());
    REQUIRE(!cl.right.empty());
    // isolated boundary jitter is reported, never silently absorbed
    CHECK(cl.monotonicity_breaches <= 2);

    // bands on each side are adjacent and ordered inward (left side
    // approaches c from below, so the outer band sits at smaller x)
    for (const auto* side : {&cl.left, &cl.right}) {
        for (std::size_t i = 0; i + 1 < side->size(); ++i) {
            const auto& outer = (*side)[i];
            const auto& inner = (*side)[i + 1];
            CHECK(inner.p > outer.p);
            if (side == &cl.left) CHECK(outer.hi == Catch::Approx(inner.lo).margin(1e-12));
            else CHECK(outer.lo == Catch::Approx(inner.hi).margin(1e-12));
        }
    }
    // coverage: band lengths plus the core span the component up to slivers
    double covered = 0.0;
    for (const auto& b : cl.left) covered += b.hi - b.lo;
    for (const auto& b : cl.right) covered += b.hi - b.lo;
    covered += cl.core_hi - cl.core_lo;
    CHECK(covered == Catch::Approx(2.0 * f.ctx.cfg.delta).epsilon(1e-9));

    // outermost level matches the binding period at the boundary
    CHECK(cl.left.front().p >= f.ctx.cfg.p_delta);
    CHECK(cl.right.front().p >= f.ctx.cfg.p_delta);

    // Lemma-6 style lower bound with the fitted C0
    CHECK(f.ctx.levels.C0 > 0.0);
    const auto& t = fx().tables[0];
    for (const auto* side : {&cl.left, &cl.right})
        for (const auto& b : *side) {
            const std::size_t i = static_cast<std::size_t>(b.p - 1);
            if (i >= t.b.size()) continue;
            CHECK(b.Fp >= f.ctx.levels.C0 / t.b[i] * (1.0 - 1e-9));
        }
}

TEST_CASE("fitted C0 is stable under one delta halving") {
    const auto& f = fx();
    BindingConfig half = f.ctx.cfg;
    half.delta *= 0.5;
    half.p_delta = binding_period_shadow(f.m, 0.5 + half.delta, 0.5, half).first;
    const auto levels2 = build_level_sets(f.m, half, f.tables);
    CHECK(levels2.C0 > 0.0);
    CHECK(levels2.C0 / f.ctx.levels.C0 > 0.8);
    CHECK(levels2.C0 / f.ctx.levels.C0 < 1.25);
}

TEST_CASE("binding distortion stays within the Gamma budget") {
    const auto& f = fx();
    const auto& cfg = f.ctx.cfg;
    long checked = 0;
    for (int i = 0; i < 1000; ++i) {
        const double h = cfg.delta * std::pow(10.0, -5.0 * i / 999.0);
        for (double x : {0.5 - h, 0.5 + h}) {
            const double v = binding_distortion(f.m, x, cfg);
            CHECK(v <= cfg.Gamma * 1.05);
            ++checked;
        }
    }
    CHECK(checked == 2000);
    CHECK(binding_distortion(f.m, 0.5 + 2.0 * cfg.delta, cfg) == 1.0); // p = 0
}

TEST_CASE("outside-Delta expansion has a positive rate for a = 4") {
    const auto& f = fx();
    CHECK(f.ctx.expansion.lambda_delta > 0.0);
    CHECK(f.ctx.expansion.lambda_delta <= std::log(4.0) + 1e-9);
    CHECK(f.ctx.expansion.C_delta > 0.0);
}

TEST_CASE("attracting-cycle map fails the expansion fit") {
    const MapSpec m32 = make_map(MapFamily::logistic, {3.2});
    CHECK_THROWS_AS(estimate_outside_expansion(m32, 0.01), non_hyperbolic_sample);
}

TEST_CASE("large-scale partition of a delta''-interval") {
    const auto& f = fx();
    const double J_lo = 0.3;
    const double J_hi = J_lo + f.ctx.cfg.delta_dprime;
    const auto part = induce_to_large_scale(f.m, J_lo, J_hi, f.ctx, 1500);

    // mass conservation
    double mass = part.unresolved_mass;
    for (const auto& p : part.resolved) mass += p.width();
    CHECK(mass == Catch::Approx(J_hi - J_lo).epsilon(1e-9));

    // pieces disjoint and sorted
    for (std::size_t i = 0; i + 1 < part.resolved.size(); ++i)
        CHECK(to_double(part.resolved[i].src_hi) <=
              to_double(part.resolved[i + 1].src_lo) + 1e-13);

    // almost everything resolves at this horizon
    CHECK(part.resolved_mass() >= 0.99 * (J_hi - J_lo));

    for (const auto& p : part.resolved) {
        // resolved pieces reached large scale
        CHECK(p.img_hi - p.img_lo >= f.ctx.cfg.delta_prime - 1e-9);
        CHECK(p.p_hat >= 0);
        // itinerary legality
        long prev_nu = -1;
        for (std::size_t i = 0; i < p.itin.size(); ++i) {
            const auto& e = p.itin[i];
            CHECK(e.nu > prev_nu);
            CHECK((e.p == 0) == !e.deep); // shallow <=> p = 0
            if (i + 1 < p.itin.size()) CHECK(p.itin[i + 1].nu >= e.nu + e.p);
            prev_nu = e.nu;
        }
        if (!p.itin.empty()) CHECK(p.p_hat >= p.itin.back().nu);
        // #S_s <= #S_{s,s} + #S_d + 1
        const int ss = p.s_count() - p.deep_count();
        CHECK(ss <= p.shallow_shallow_count() + p.deep_count() + 1);
    }
}

TEST_CASE("phat tails over a net of intervals decay fast at a = 4") {
    const auto& f = fx();
    std::vector<LargeScalePartition> parts;
    const auto supp = estimate_support(f.m);
    const double L = f.ctx.cfg.delta_dprime;
    for (int i = 0; i < 16; ++i) {
        const double lo = supp.first + (supp.second - supp.first - L) * (i + 0.5) / 16.0;
        parts.push_back(induce_to_large_scale(f.m, lo, lo + L, f.ctx, 1500));
    }
    const auto tails = tail_of_phat(parts, 1500);
    CHECK(tails.m_n[0] == 1.0); // nothing resolved at time 0
    for (std::size_t i = 1; i < tails.m_n.size(); ++i) CHECK(tails.m_n[i] <= tails.m_n[i - 1]);
    // the full quadratic resolves so fast that the live range is shorter than
    // a 50-point fit window; the decay itself is unmistakably exponential-fast
    CHECK(tails.m_n[100] < 1e-6);
    if (!tails.decay.degenerate && tails.decay.fit_quality > 0.0)
        CHECK(tails.decay.kind == DecayKind::exponential);
    CHECK(tails.censored_mass < 0.01);

    // size-lemma bound with the fitted constants, aggregated over the net and
    // a wide interval (pieces are scarce when resolution is this fast)
    const auto big = induce_to_large_scale(f.m, 0.11, 0.11 + 60.0 * L, f.ctx, 1500);
    long checked = 0, passed = 0;
    const LargeScalePartition* samples[] = {&big, &parts[0], &parts[3], &parts[8],
                                            &parts[12]};
    for (const LargeScalePartition* part : samples) {
        const auto rep = check_size_lemma(*part, f.ctx, f.tables);
        checked += rep.checked;
        passed += rep.passed;
    }
    CHECK(checked >= 30);
    CHECK(static_cast<double>(passed) / checked >= 0.95);

    // Lemma-10 distortion is uniform across pieces and intervals
    const auto d0 = measure_partition_distortion(f.m, big);
    const auto d1 = measure_partition_distortion(f.m, parts[8]);
    CHECK(d0.K_run < 1e6);
    CHECK(d0.K_q99 / d1.K_q99 < 1.75);
    CHECK(d1.K_q99 / d0.K_q99 < 1.75);
}

TEST_CASE("induce_to_large_scale rejects short intervals") {
    const auto& f = fx();
    CHECK_THROWS_AS(induce_to_large_scale(f.m, 0.3, 0.3 + 0.1 * f.ctx.cfg.delta_dprime,
                                          f.ctx, 100),
                    indmap::error);
}

TEST_CASE("strip rho shrinks with eps") {
    const auto& f = fx();
    const double rho1 = measure_strip_rho(f.m, f.ctx.cfg.delta, f.ctx.cfg.delta_prime,
                                          f.ctx.cfg.eps);
    const double rho2 = measure_strip_rho(f.m, f.ctx.cfg.delta, f.ctx.cfg.delta_prime,
                                          f.ctx.cfg.eps * 0.25);
    CHECK(rho1 <= 0.125);
    CHECK(rho2 <= rho1 + 1e-12);
}

TEST_CASE("determinism: the construction is reproducible bit for bit") {
    const auto& f = fx();
    const double J_lo = 0.62;
    const double J_hi = J_lo + f.ctx.cfg.delta_dprime;
    const auto a = induce_to_large_scale(f.m, J_lo, J_hi, f.ctx, 800);
    const auto b = induce_to_large_scale(f.m, J_lo, J_hi, f.ctx, 800);
    REQUIRE(a.resolved.size() == b.resolved.size());
    for (std::size_t i = 0; i < a.resolved.size(); ++i) {
        CHECK(to_double(a.resolved[i].src_lo) == to_double(b.resolved[i].src_lo));
        CHECK(a.resolved[i].p_hat == b.resolved[i].p_hat);
    }
    CHECK(a.unresolved_mass == b.unresolved_mass);
}
