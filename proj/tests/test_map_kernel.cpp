#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "indmap/map_kernel.hpp"

using namespace indmap;

TEST_CASE("logistic map evaluation at known points") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    CHECK(eval_map(m, 0.5) == Catch::Approx(1.0));
    CHECK(eval_map(m, 1.0) == Catch::Approx(0.0).margin(1e-15));
    CHECK(eval_deriv(m, 0.5) == Catch::Approx(0.0).margin(1e-15));
    CHECK(eval_deriv(m, 1.0) == Catch::Approx(-4.0));
    CHECK(eval_deriv(m, 0.0) == Catch::Approx(4.0));
    CHECK_THROWS_AS(eval_map(m, 1.5), domain_error);
}

TEST_CASE("quadratic family domain and critical point") {
    const MapSpec m = make_map(MapFamily::quadratic, {2.0});
    // natural domain [-2,2] rescaled to [0,1]; c at work coordinate 1/2
    CHECK(m.x_lo == 0.0);
    CHECK(m.x_hi == 1.0);
    REQUIRE(m.critical_points.size() == 1);
    CHECK(m.critical_points[0] == Catch::Approx(0.5));
    // f(0) = 2 in natural coordinates stays inside the domain
    CHECK_NOTHROW(eval_map(m, 0.5));
    CHECK(eval_map(m, 0.5) == Catch::Approx(1.0)); // critical value = natural 2 -> work 1
}

TEST_CASE("cubic multimodal map has two interior critical points") {
    const MapSpec m = make_map(MapFamily::cubic, {1.0, 0.0});
    REQUIRE(m.critical_points.size() == 2);
    CHECK(std::abs(eval_deriv(m, m.critical_points[0])) < 1e-12);
    CHECK(std::abs(eval_deriv(m, m.critical_points[1])) < 1e-12);
    CHECK(m.domain_diameter() <= 1.0 + 1e-15);
}

TEST_CASE("iterate records orbit and flags critical passage") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    const Orbit o = iterate(m, 1.0, 3);
    REQUIRE(o.points.size() == 4);
    CHECK(o.points[0] == 1.0);
    CHECK(o.points[1] == Catch::Approx(0.0).margin(1e-15));
    CHECK(o.points[2] == Catch::Approx(0.0).margin(1e-15));
    CHECK_FALSE(o.precision_warning);

    const Orbit oc = iterate(m, 0.5, 2);
    CHECK(oc.precision_warning); // orbit passes through the critical point
}

TEST_CASE("orbit running log-derivative matches resummation") {
    const MapSpec m = make_map(MapFamily::logistic, {3.7});
    const Orbit o = iterate(m, 0.13, 500);
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < o.points.size(); ++k) {
        const double ref = o.log_deriv_partials[k];
        REQUIRE(std::abs(acc - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
        acc += std::log(std::abs(eval_deriv(m, o.points[k])));
    }
}

TEST_CASE("orbit_derivative_log on the eventually fixed logistic orbit") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    CHECK(orbit_derivative_log(m, 1.0, 2) == Catch::Approx(std::log(16.0)));
    CHECK(orbit_derivative_log(m, 1.0, 0) == 0.0);
    CHECK(orbit_derivative_log(m, 1.0, 5) == Catch::Approx(5.0 * std::log(4.0)));
    CHECK_THROWS_AS(orbit_derivative_log(m, 0.5, 2), critical_hit);
}

TEST_CASE("chain rule consistency across split orbits") {
    const MapSpec m = make_map(MapFamily::logistic, {3.9});
    const double x = 0.172;
    for (long n1 : {1L, 7L, 23L}) {
        const long n2 = 40 - n1;
        const double whole = orbit_derivative_log(m, x, 40);
        const double mid = iterate(m, x, n1).points.back();
        const double split = orbit_derivative_log(m, x, n1) + orbit_derivative_log(m, mid, n2);
        CHECK(std::abs(whole - split) <= 1e-8 * std::max(1.0, std::abs(whole)));
    }
}

TEST_CASE("chebyshev Lyapunov exponent is log 2") {
    const MapSpec m = make_map(MapFamily::chebyshev, {});
    const long n = 1000000;
    const double lyap = orbit_derivative_log(m, m.to_natural.to_work(0.123456), n) / n;
    CHECK(lyap == Catch::Approx(std::log(2.0)).margin(0.01));
}

TEST_CASE("critical order local model: log|f'| ~ (l-1) log|x-c|") {
    for (auto fam : {MapFamily::logistic, MapFamily::cubic}) {
        const MapSpec m = fam == MapFamily::logistic ? make_map(fam, {4.0})
                                                     : make_map(fam, {1.0, 0.0});
        for (double c : m.critical_points) {
            double lo = 1e300, hi = -1e300;
            for (int i = 0; i <= 40; ++i) {
                const double h = std::pow(10.0, -6.0 + 4.0 * i / 40.0); // 1e-6 .. 1e-2
                for (double x : {c - h, c + h}) {
                    if (x <= m.x_lo || x >= m.x_hi) continue;
                    const double v = std::log(std::abs(eval_deriv(m, x))) -
                                     (m.critical_order - 1.0) * std::log(h);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            }
            CHECK(hi - lo < 2.0);
        }
    }
}

TEST_CASE("determinism: identical inputs give bit-identical orbits") {
    const MapSpec m = make_map(MapFamily::quadratic, {1.87});
    const Orbit a = iterate(m, 0.3, 1000);
    const Orbit b = iterate(m, 0.3, 1000);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i] == b.points[i]);
        CHECK(a.log_deriv_partials[i] == b.log_deriv_partials[i]);
    }
}

TEST_CASE("interval_image folds across critical points") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    const auto img = interval_image(m, 0.4, 0.6); // contains c; image reaches the maximum 1
    CHECK(img.second == Catch::Approx(1.0));
    CHECK(img.first == Catch::Approx(4.0 * 0.4 * 0.6));
}

TEST_CASE("support of the full quadratic is the whole interval") {
    const MapSpec m = make_map(MapFamily::logistic, {4.0});
    const auto supp = estimate_support(m, 100);
    CHECK(supp.first == Catch::Approx(0.0).margin(1e-12));
    CHECK(supp.second == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("double-double map steps agree with plain doubles at coarse scale") {
    const MapSpec m = make_map(MapFamily::logistic, {3.83});
    dd x(0.31);
    double y = 0.31;
    for (int k = 0; k < 30; ++k) {
        x = step_dd(m, x);
        y = step(m, y);
    }
    CHECK(to_double(x) == Catch::Approx(y).margin(1e-9));
}
