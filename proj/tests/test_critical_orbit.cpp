#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "indmap/critical_orbit.hpp"

using namespace indmap;

TEST_CASE("D_n = 4^n for the full quadratic map") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    const auto dn = compute_Dn(m, 0.5, 50);
    REQUIRE(dn.logD.size() == 50);
    for (long n = 1; n <= 50; ++n)
        CHECK(std::abs(dn.logD[static_cast<std::size_t>(n - 1)] - n * std::log(4.0)) < 1e-8);
    CHECK_FALSE(dn.truncated);
    // distances |f^n(c) - C| along 1, 0, 0, ... are all 1/2
    for (double d : dn.dist_to_C) CHECK(d == Catch::Approx(0.5));
}

TEST_CASE("compute_Dn with N = 1 is the single factor") {
    const MapSpec m = make_map(MapFamily::logistic, {3.6});
    const auto dn = compute_Dn(m, 0.5, 1);
    REQUIRE(dn.logD.size() == 1);
    const double fc = eval_map(m, 0.5);
    CHECK(dn.logD[0] == Catch::Approx(std::log(std::abs(eval_deriv(m, fc)))));
}

TEST_CASE("equalizing gamma satisfies gamma^{2l-1} = 1/D with a cap") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    const auto dn = compute_Dn(m, 0.5, 40);
    const auto g = choose_gamma(dn.logD, 2.0, GammaStrategy::equalizing);
    for (long n = 1; n <= 40; ++n) {
        const double want = std::pow(4.0, -static_cast<double>(n) / 3.0);
        const double got = g[static_cast<std::size_t>(n - 1)];
        if (want < 0.49) CHECK(got == Catch::Approx(want).epsilon(1e-12));
        else CHECK(got == 0.49); // cap branch
        CHECK(got > 0.0);
        CHECK(got < 0.5);
    }
}

TEST_CASE("user gamma series is validated") {
    std::vector<double> logD(200);
    for (std::size_t i = 0; i < logD.size(); ++i) logD[i] = static_cast<double>(i + 1);
    std::vector<double> bad(200, 0.7);
    CHECK_THROWS_AS(choose_gamma(logD, 2.0, GammaStrategy::user_series, bad), invalid_series);
    std::vector<double> flat(200, 0.4); // constant series diverges
    CHECK_THROWS_AS(choose_gamma(logD, 2.0, GammaStrategy::user_series, flat), invalid_series);
    std::vector<double> good(200);
    for (std::size_t i = 0; i < good.size(); ++i) good[i] = 0.01 * std::exp(-0.5 * logD[i]);
    CHECK_NOTHROW(choose_gamma(logD, 2.0, GammaStrategy::user_series, good));
}

TEST_CASE("b_n equals gamma_n under the equalizing choice (Lemma-1 agreement)") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    const auto t = build_table(m, 0.5, 200);
    for (long n = 2; n <= 200; ++n) { // n = 1 is capped
        const std::size_t i = static_cast<std::size_t>(n - 1);
        CHECK(std::abs(t.b[i] - t.gamma[i]) <= 1e-12 * t.b[i]);
        const double star = std::exp(-t.logD[i] / 3.0);
        CHECK(std::abs(t.b[i] - star) <= 1e-12 * star);
    }
}

TEST_CASE("d_n formula on the eventually fixed critical orbit") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    const auto dn = compute_Dn(m, 0.5, 3);
    std::vector<double> gamma;
    for (long n = 1; n <= 3; ++n) gamma.push_back(std::pow(4.0, -static_cast<double>(n) / 3.0));
    const auto d = compute_dn(m, 0.5, dn.logD, gamma, 2.0, 3);
    REQUIRE(d.size() == 3);
    CHECK(std::isnan(d[0])); // d starts at n = 2
    CHECK(d[1] == Catch::Approx(std::pow(4.0, -2.0 / 3.0) * 0.5).epsilon(1e-12));
    CHECK(d[2] == Catch::Approx(std::pow(4.0, -4.0 / 3.0) * 0.5).epsilon(1e-12));
}

TEST_CASE("d_n is nonincreasing and bounded by gamma_{n-1} b_{n-1}") {
    const MapSpec m = make_map(MapFamily::quadratic, {1.7});
    const auto t = build_table(m, m.critical_points[0], 2000);
    for (std::size_t i = 2; i < t.d.size(); ++i) {
        CHECK(t.d[i] <= t.d[i - 1] + 1e-15);
        CHECK(t.d[i] <= t.gamma[i - 1] * t.b[i - 1] + 1e-15);
    }
}

TEST_CASE("summability verdicts for the full quadratic") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    const auto t = build_table(m, 0.5, 1000);
    const auto rep = check_summability(t);
    CHECK(rep.star == Trichotomy::converged);
    CHECK(rep.starstar == Trichotomy::converged);
    CHECK(rep.verdicts_agree);
}

TEST_CASE("diverging star summand for polynomially growing D") {
    // synthetic table with D_n = n^2, l = 2: star summand n^{-2/3}
    CriticalOrbitTable t;
    t.ell = 2.0;
    const long N = 2000;
    for (long n = 1; n <= N; ++n) {
        t.logD.push_back(2.0 * std::log(static_cast<double>(n)));
        t.dist_to_C.push_back(0.3);
    }
    t.gamma = choose_gamma(t.logD, t.ell, GammaStrategy::equalizing);
    t.b = compute_bn(t.logD, t.gamma, t.ell);
    t.partial_sum_star.resize(t.logD.size());
    t.partial_sum_b.resize(t.logD.size());
    t.partial_sum_gamma.resize(t.logD.size());
    double s1 = 0, s2 = 0, s3 = 0;
    for (std::size_t i = 0; i < t.logD.size(); ++i) {
        s1 += std::exp(-t.logD[i] / 3.0);
        s2 += t.b[i];
        s3 += t.gamma[i];
        t.partial_sum_star[i] = s1;
        t.partial_sum_b[i] = s2;
        t.partial_sum_gamma[i] = s3;
    }
    const auto rep = check_summability(t);
    CHECK(rep.star == Trichotomy::diverging);
}

TEST_CASE("window precondition for summability") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    const auto t = build_table(m, 0.5, 50);
    CHECK_THROWS_AS(check_summability(t), window_too_short);
}

TEST_CASE("closest returns of the full quadratic stop after the first record") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    const auto rec = closest_returns(m, 0.5, 1000);
    REQUIRE(rec.size() == 1);
    CHECK(rec[0].first == 1);
    CHECK(rec[0].second == Catch::Approx(0.5));
}

TEST_CASE("closest-return records are strictly monotone") {
    const MapSpec m = make_map(MapFamily::quadratic, {1.87});
    const auto rec = closest_returns(m, m.critical_points[0], 100000);
    for (std::size_t i = 1; i < rec.size(); ++i) {
        CHECK(rec[i].first > rec[i - 1].first);
        CHECK(rec[i].second < rec[i - 1].second);
    }
    CHECK(closest_returns(m, m.critical_points[0], 0).empty());
}

TEST_CASE("Fibonacci parameter search in the quadratic family") {
    const auto res = find_fibonacci_parameter(MapFamily::quadratic, 1.8, 2.0, 12);
    REQUIRE(res.matched >= 12);
    const std::vector<long> want = {1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233};
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(res.returns[i].first == want[i]);
    // the located parameter corresponds to a - x^2 with a near 1.8705
    CHECK(res.parameter == Catch::Approx(1.8705286).margin(2e-3));

    // validated by re-running closest_returns on a fresh map
    const MapSpec m = res.build(MapFamily::quadratic);
    const auto rec = closest_returns(m, m.critical_points[0], 240);
    REQUIRE(rec.size() >= 12);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(rec[i].first == want[i]);
}

TEST_CASE("full map has no Fibonacci bracket") {
    CHECK_THROWS_AS(find_fibonacci_parameter(MapFamily::logistic, 3.99, 4.0, 12), bracket_error);
}

TEST_CASE("fibonacci scaling fit on synthetic data") {
    // inject distances e^{-0.3 r^2} through a stub map is impractical; check the
    // fitting path on the real Fibonacci map and the short-record path on a = 4
    const MapSpec full = make_map(MapFamily::logistic, {4.0});
    CHECK_FALSE(fibonacci_scaling_check(full, 12).ok); // single record only

    const auto res = find_fibonacci_parameter(MapFamily::quadratic, 1.8, 2.0, 12);
    const MapSpec fib = res.build(MapFamily::quadratic);
    const auto fit = fibonacci_scaling_check(fib, 12);
    CHECK(fit.ok);
    CHECK(fit.beta_prime > 0.0);
    CHECK(fit.r2 >= 0.95);
}
